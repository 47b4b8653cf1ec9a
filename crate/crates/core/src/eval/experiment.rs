use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baselines::{knn_impute, linear_tsr};
use super::ssim::ssim_with_range;
use crate::dataset::{ObservationSeries, SensorNetwork};
use crate::densify::{densify, DensifyParams};
use crate::error::{Error, Result};
use crate::interpolate::{interpolate, RbfConfig};
use crate::model::Model;
use crate::raster::RasterField;
use crate::training::{
    evaluate_imputation, impute, metrics, super_resolve, train, EpochRecord, Metrics, SplitSpec, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Held-out sensor fractions for the imputation table.
    pub alphas: Vec<f64>,
    pub knn_k: usize,
    /// Super-resolution rates for the TSR table (empty skips it).
    pub sr_rates: Vec<usize>,
    /// Leading share of the timeline used to train TSR models.
    pub tsr_train_fraction: f64,
    /// Epochs for TSR models (defaults to the imputation epochs).
    pub tsr_epochs: Option<usize>,
    /// Held-out fraction for the SSIM study.
    pub ssim_alpha: f64,
    /// Densification rates compared by SSIM (empty skips the study).
    pub deltas: Vec<f64>,
    /// Every `ssim_stride`-th step is scored.
    pub ssim_stride: usize,
    pub densify: DensifyParams,
    pub rbf: RbfConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            alphas: vec![0.2, 0.4, 0.5],
            knn_k: 5,
            sr_rates: vec![2, 4],
            tsr_train_fraction: 0.75,
            tsr_epochs: Some(300),
            ssim_alpha: 0.3,
            deltas: vec![0.0, 0.2, 0.4],
            ssim_stride: 1,
            densify: DensifyParams::default(),
            rbf: RbfConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.model.validate()?;
        if self.knn_k == 0 || self.ssim_stride == 0 {
            return Err(Error::Config("knn_k and ssim_stride must be positive".into()));
        }
        if self.sr_rates.iter().any(|&r| r < 2) {
            return Err(Error::Config("super-resolution rates must be at least 2".into()));
        }
        if !(self.tsr_train_fraction > 0.0 && self.tsr_train_fraction < 1.0) {
            return Err(Error::Config("tsr_train_fraction must lie in (0, 1)".into()));
        }
        if self.deltas.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Config("densification rates must be non-negative".into()));
        }
        self.rbf.validate()
    }

    /// Label of the trained model in report rows.
    pub fn model_label(&self) -> String {
        let m = &self.train.model;
        match (m.pna, m.gpe) {
            (true, true) => "relmap".into(),
            (false, true) => "relmap-no-pna".into(),
            (true, false) => "relmap-no-gpe".into(),
            (false, false) => "relmap-no-pna-no-gpe".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRow {
    pub method: String,
    pub alpha: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsrRow {
    pub method: String,
    pub sr: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimSeries {
    pub delta: f64,
    pub mean: f64,
    /// Scored step indices and their SSIM.
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything an experiment produces; contains no timings so reruns with the
/// same seed serialise identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub imputation: Vec<ImputationRow>,
    pub tsr: Vec<TsrRow>,
    pub ssim: Vec<SsimSeries>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Write `table1.csv` (imputation), `table2.csv` (super-resolution) and
    /// `ssim.csv` (one column per densification rate) into `dir`.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_err = |path: &Path| {
            let path = path.to_path_buf();
            move |e: csv::Error| Error::format(&path, e.to_string())
        };

        let p1 = dir.join("table1.csv");
        let mut w = csv::Writer::from_path(&p1).map_err(csv_err(&p1))?;
        w.write_record(["method", "alpha", "rmse", "mae"])
            .map_err(csv_err(&p1))?;
        for r in &self.imputation {
            w.write_record([
                r.method.clone(),
                r.alpha.to_string(),
                r.metrics.rmse.to_string(),
                r.metrics.mae.to_string(),
            ])
            .map_err(csv_err(&p1))?;
        }
        w.flush().map_err(|e| Error::io(&p1, e))?;

        let p2 = dir.join("table2.csv");
        let mut w = csv::Writer::from_path(&p2).map_err(csv_err(&p2))?;
        w.write_record(["method", "sr", "rmse", "mae"]).map_err(csv_err(&p2))?;
        for r in &self.tsr {
            w.write_record([
                r.method.clone(),
                r.sr.to_string(),
                r.metrics.rmse.to_string(),
                r.metrics.mae.to_string(),
            ])
            .map_err(csv_err(&p2))?;
        }
        w.flush().map_err(|e| Error::io(&p2, e))?;

        let p3 = dir.join("ssim.csv");
        let mut w = csv::Writer::from_path(&p3).map_err(csv_err(&p3))?;
        let mut header = vec!["step".to_string()];
        header.extend(self.ssim.iter().map(|s| format!("delta_{}", s.delta)));
        w.write_record(&header).map_err(csv_err(&p3))?;
        if let Some(first) = self.ssim.first() {
            for (k, step) in first.steps.iter().enumerate() {
                let mut row = vec![step.to_string()];
                row.extend(self.ssim.iter().map(|s| s.values[k].to_string()));
                w.write_record(&row).map_err(csv_err(&p3))?;
            }
        }
        w.flush().map_err(|e| Error::io(&p3, e))?;
        Ok(())
    }
}

fn flags(n: usize, on: &[usize]) -> Vec<bool> {
    let mut f = vec![false; n];
    for &i in on {
        f[i] = true;
    }
    f
}

fn score_rows(estimate: &ObservationSeries, truth: &ObservationSeries, rows: &[usize]) -> Result<Metrics> {
    metrics(rows.iter().flat_map(|&i| {
        (0..truth.n_steps())
            .filter(move |&s| truth.is_observed(i, s))
            .map(move |s| (f64::from(estimate.value(i, s)), f64::from(truth.value(i, s))))
    }))
}

/// Train and score the model against the baselines: held-out sensor
/// imputation per `alphas`, super-resolution per `sr_rates`, and, when a
/// truth raster is given, SSIM of interpolated maps per densification rate.
/// `on_epoch` receives a task label and every epoch record.
pub fn run_experiment(
    network: &SensorNetwork,
    data: &ObservationSeries,
    truth: Option<&RasterField>,
    cfg: &ExperimentConfig,
    mut on_epoch: impl FnMut(&str, &EpochRecord),
) -> Result<EvalReport> {
    cfg.validate()?;
    let n = network.len();
    let label = cfg.model_label();
    let mut report = EvalReport {
        seed: cfg.train.seed,
        config: cfg.clone(),
        imputation: Vec::new(),
        tsr: Vec::new(),
        ssim: Vec::new(),
    };

    let mut models: Vec<(f64, Model, SplitSpec)> = Vec::new();
    let mut train_for = |alpha: f64, on_epoch: &mut dyn FnMut(&str, &EpochRecord)| -> Result<(Model, SplitSpec)> {
        if let Some((_, m, s)) = models.iter().find(|(a, _, _)| *a == alpha) {
            return Ok((m.clone(), s.clone()));
        }
        let tcfg = TrainConfig {
            alpha,
            ..cfg.train.clone()
        };
        let split = SplitSpec::random(n, data.n_steps(), alpha, &tcfg)?;
        let task = format!("impute-{alpha}");
        let out = train(network, data, &split, &tcfg, |r| on_epoch(&task, r))?;
        models.push((alpha, out.model.clone(), split.clone()));
        Ok((out.model, split))
    };

    for &alpha in &cfg.alphas {
        let (model, split) = train_for(alpha, &mut on_epoch)?;
        let m = evaluate_imputation(&model, network, data, &split)?;
        let knn = knn_impute(data, network, &flags(n, &split.known), cfg.knn_k)?;
        report.imputation.push(ImputationRow {
            method: label.clone(),
            alpha,
            metrics: m,
        });
        report.imputation.push(ImputationRow {
            method: format!("knn-{}", cfg.knn_k),
            alpha,
            metrics: score_rows(&knn, data, &split.unknown)?,
        });
    }

    for &sr in &cfg.sr_rates {
        let cut = (cfg.tsr_train_fraction * data.n_steps() as f64).round() as usize;
        let head = data.select_steps(0..cut);
        let tail = data.select_steps(cut..data.n_steps());
        let mut tcfg = TrainConfig {
            alpha: 0.0,
            epochs: cfg.tsr_epochs.unwrap_or(cfg.train.epochs),
            ..cfg.train.clone()
        };
        tcfg.model.t_sr = sr;
        let split = SplitSpec::new((0..n).collect(), Vec::new(), head.n_steps(), &tcfg)?;
        let task = format!("tsr-{sr}");
        let out = train(network, &head, &split, &tcfg, |r| on_epoch(&task, r))?;
        let coarse = tail.downsample(sr);
        let fine = super_resolve(&out.model, network, &coarse)?;
        let linear = linear_tsr(&coarse, sr)?;
        let last = (coarse.n_steps() - 1) * sr;
        let scored: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..last).filter(|s| s % sr != 0).map(move |s| (i, s)))
            .filter(|&(i, s)| tail.is_observed(i, s))
            .collect();
        let score = |est: &ObservationSeries| {
            metrics(
                scored
                    .iter()
                    .map(|&(i, s)| (f64::from(est.value(i, s)), f64::from(tail.value(i, s)))),
            )
        };
        report.tsr.push(TsrRow {
            method: label.clone(),
            sr,
            metrics: score(&fine)?,
        });
        report.tsr.push(TsrRow {
            method: "linear".into(),
            sr,
            metrics: score(&linear)?,
        });
    }

    if let (Some(truth), false) = (truth, cfg.deltas.is_empty()) {
        if truth.frames != data.n_steps() {
            return Err(Error::Shape(format!(
                "truth raster has {} frames for {} steps",
                truth.frames,
                data.n_steps()
            )));
        }
        let (model, split) = train_for(cfg.ssim_alpha, &mut on_epoch)?;
        let known_net = network.subset(&split.known);
        let known_obs = data.select_rows(&split.known);
        let steps: Vec<usize> = (0..data.n_steps()).step_by(cfg.ssim_stride).collect();
        for &delta in &cfg.deltas {
            let params = DensifyParams { delta, ..cfg.densify };
            let dense = densify(&known_net, &known_obs, &params)?;
            let filled = if dense.virtual_points.is_empty() {
                known_obs.clone()
            } else {
                let originals = flags(dense.network.len(), &dense.network.original_indices());
                impute(&model, &dense.network, &dense.observations, &originals)?
            };
            let raster = interpolate(
                &dense.network.positions(),
                &filled,
                &cfg.rbf,
                truth.grid,
                network.boundary(),
            )?;
            let mut values = Vec::with_capacity(steps.len());
            for &s in &steps {
                let to_f64 = |r: &RasterField, f: &[f32]| -> Vec<f64> {
                    f.iter()
                        .map(|&v| if r.is_valid(v) { f64::from(v) } else { f64::NAN })
                        .collect()
                };
                let t = to_f64(truth, truth.frame(s));
                let e = to_f64(&raster, raster.frame(s));
                let range = truth
                    .frame_range(s)
                    .map(|(lo, hi)| f64::from(hi - lo))
                    .filter(|r| *r > 0.0)
                    .unwrap_or(1.0);
                values.push(ssim_with_range(&e, &t, truth.width(), truth.height(), range)?);
            }
            report.ssim.push(SsimSeries {
                delta,
                mean: values.iter().sum::<f64>() / values.len() as f64,
                steps: steps.clone(),
                values,
            });
        }
    }
    Ok(report)
}
