use std::path::Path;

use relmap_core::dataset::SynthConfig;
use relmap_core::densify::DensifyParams;
use relmap_core::eval::ExperimentConfig;
use relmap_core::interpolate::RbfConfig;
use relmap_core::render::RenderSpec;
use relmap_core::training::TrainConfig;
use relmap_core::uncertainty::GlyphParams;
use relmap_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Settings shared by every subcommand; command-line flags override fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub densify: DensifyParams,
    pub train: TrainConfig,
    pub rbf: RbfConfig,
    /// Raster cells along the longer side of the boundary box.
    pub raster_width: usize,
    pub glyphs: GlyphParams,
    pub render: RenderSpec,
    /// Density below which hatching appears (mean interior density when unset).
    pub hatch_threshold: Option<f64>,
    /// Held-out fraction when `train` is run on its own.
    pub holdout: f64,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            densify: DensifyParams::default(),
            train: TrainConfig::default(),
            rbf: RbfConfig::default(),
            raster_width: 128,
            glyphs: GlyphParams::default(),
            render: RenderSpec::default(),
            hatch_threshold: None,
            holdout: 0.0,
            eval: EvalSection::default(),
        }
    }
}

/// Experiment settings beyond the shared training, densification and
/// interpolation sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub alphas: Vec<f64>,
    pub knn_k: usize,
    pub sr_rates: Vec<usize>,
    pub tsr_train_fraction: f64,
    pub tsr_epochs: Option<usize>,
    pub ssim_alpha: f64,
    pub deltas: Vec<f64>,
    pub ssim_stride: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            alphas: d.alphas,
            knn_k: d.knn_k,
            sr_rates: d.sr_rates,
            tsr_train_fraction: d.tsr_train_fraction,
            tsr_epochs: d.tsr_epochs,
            ssim_alpha: d.ssim_alpha,
            deltas: d.deltas,
            ssim_stride: d.ssim_stride,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let e = &self.eval;
        ExperimentConfig {
            train: self.train.clone(),
            alphas: e.alphas.clone(),
            knn_k: e.knn_k,
            sr_rates: e.sr_rates.clone(),
            tsr_train_fraction: e.tsr_train_fraction,
            tsr_epochs: e.tsr_epochs,
            ssim_alpha: e.ssim_alpha,
            deltas: e.deltas.clone(),
            ssim_stride: e.ssim_stride,
            densify: self.densify,
            rbf: self.rbf,
        }
    }
}
