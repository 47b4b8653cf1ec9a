use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use relmap_core::dataset::{
    load_network, load_observations, save_network, synthesize, ObservationSeries, SensorNetwork,
};
use relmap_core::densify::{densify, kde_for_grid, DensityField};
use relmap_core::eval::run_experiment;
use relmap_core::geometry::GridSpec;
use relmap_core::interpolate::interpolate;
use relmap_core::model::Model;
use relmap_core::raster::RasterField;
use relmap_core::render::{glyph_grid_for, render};
use relmap_core::training::{evaluate_imputation, impute, super_resolve, train, SplitSpec};
use relmap_core::uncertainty::{default_threshold, glyph_metrics, hatch_opacity, reference_values};
use relmap_core::{Error, Result};
use serde_json::json;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "relmap",
    version,
    about = "Sensor densification, imputation and reliability-aware heatmaps"
)]
pub struct Cli {
    /// JSON configuration shared by all subcommands.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert sensor and observation CSVs into a dataset directory.
    Ingest {
        #[arg(long)]
        sensors: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        boundary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic benchmark (dataset plus truth raster).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Add virtual sensors in sparse regions.
    Densify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; prints one JSON line per epoch.
    Train(TrainArgs),
    /// Fill every unobserved entry with model predictions.
    Impute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Upsample a series in time with a super-resolution checkpoint.
    Tsr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterise every timestep with local RBF interpolation.
    Interpolate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Compute reference values and glyph statistics for one timestep.
    Uncertainty {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        timestep: usize,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Compose the SVG map for one timestep.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        raster: PathBuf,
        /// Reference values written by `uncertainty`; glyphs are omitted without them.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        timestep: usize,
        #[arg(long)]
        colormap: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        hatch_threshold: Option<f64>,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
    /// Run the imputation, super-resolution and densification experiments.
    Eval {
        /// Dataset directory; the synthetic benchmark from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_pna: bool,
        #[arg(long)]
        no_gpe: bool,
        /// Also write CSV tables next to the report.
        #[arg(long)]
        tables: bool,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fine steps predicted per input step (super-resolution when above 1).
    #[arg(long)]
    t_sr: Option<usize>,
    /// Fraction of original sensors held out and scored after training.
    #[arg(long)]
    holdout: Option<f64>,
    /// Replace PNA aggregation with a plain mean.
    #[arg(long)]
    no_pna: bool,
    /// Drop the geographic positional encoding.
    #[arg(long)]
    no_gpe: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            sensors,
            observations,
            boundary,
            out,
        } => {
            let network = load_network(&sensors, boundary.as_deref())?;
            let obs = load_observations(&observations, &network)?;
            save_dataset(&out, &network, &obs)
        }
        Command::Synth {
            out,
            sensors,
            steps,
            seed,
        } => {
            set(&mut cfg.synth.n_sensors, sensors);
            set(&mut cfg.synth.n_steps, steps);
            set(&mut cfg.synth.seed, seed);
            let s = synthesize(&cfg.synth)?;
            save_dataset(&out, &s.network, &s.observations)?;
            s.truth.save(&out.join("truth"))
        }
        Command::Densify {
            data,
            out,
            delta,
            lambda,
            theta,
            iterations,
            seed,
        } => {
            let d = &mut cfg.densify;
            set(&mut d.delta, delta);
            set(&mut d.lambda, lambda);
            set(&mut d.theta, theta);
            set(&mut d.iterations, iterations);
            set(&mut d.seed, seed);
            let (network, obs) = load_dataset(&data)?;
            let dense = densify(&network, &obs, &cfg.densify)?;
            save_dataset(&out, &dense.network, &dense.observations)?;
            density_raster(&dense.density).save(&out.join("density"))?;
            density_raster(&dense.inverted).save(&out.join("inverted_density"))
        }
        Command::Train(args) => run_train(cfg, args),
        Command::Impute { data, checkpoint, out } => {
            let (network, obs) = load_dataset(&data)?;
            let model = Model::load(&checkpoint)?;
            let filled = impute(&model, &network, &obs, &rows_with_data(&obs))?;
            save_dataset(&out, &network, &filled)
        }
        Command::Tsr { data, checkpoint, out } => {
            let (network, obs) = load_dataset(&data)?;
            let model = Model::load(&checkpoint)?;
            if model.config.t_sr < 2 {
                return Err(Error::Config("checkpoint was not trained for super-resolution".into()));
            }
            let fine = super_resolve(&model, &network, &obs)?;
            save_dataset(&out, &network, &fine)
        }
        Command::Interpolate {
            data,
            out,
            epsilon,
            lambda,
            neighbors,
            width,
        } => {
            set(&mut cfg.rbf.epsilon, epsilon);
            set(&mut cfg.rbf.lambda, lambda);
            set(&mut cfg.rbf.neighbors, neighbors);
            set(&mut cfg.raster_width, width);
            let (network, obs) = load_dataset(&data)?;
            let grid = raster_grid(&network, cfg.raster_width);
            let raster = interpolate(&network.positions(), &obs, &cfg.rbf, grid, network.boundary())?;
            raster.save(&out)
        }
        Command::Uncertainty {
            data,
            checkpoint,
            out,
            timestep,
            grid,
            window,
        } => {
            set(&mut cfg.render.glyph_grid, grid);
            set(&mut cfg.glyphs.window, window);
            let (network, obs) = load_dataset(&data)?;
            let model = Model::load(&checkpoint)?;
            let reference = reference_values(&model, &network, &obs, cfg.train.seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            reference.save(&out.join("reference"))?;
            let cells = GridSpec::with_long_side(network.bounds(), cfg.render.glyph_grid.max(1));
            let glyphs = glyph_metrics(&obs, &reference, &network, cells, timestep, cfg.glyphs)?;
            glyphs.save_csv(&out.join("glyphs.csv"))
        }
        Command::Render {
            data,
            raster,
            reference,
            timestep,
            colormap,
            grid,
            hatch_threshold,
            output,
        } => {
            set(&mut cfg.render.colormap, colormap);
            set(&mut cfg.render.glyph_grid, grid);
            if hatch_threshold.is_some() {
                cfg.hatch_threshold = hatch_threshold;
            }
            let (network, obs) = load_dataset(&data)?;
            let raster = RasterField::load(&raster)?;
            let density = kde_for_grid(&network, raster.grid)?;
            let threshold = cfg.hatch_threshold.unwrap_or_else(|| default_threshold(&density));
            let hatch = hatch_opacity(&density, threshold)?;
            let glyphs = match reference {
                Some(dir) => {
                    let reference = ObservationSeries::load(&dir)?;
                    let cells = glyph_grid_for(&raster, cfg.render.glyph_grid);
                    Some(glyph_metrics(&obs, &reference, &network, cells, timestep, cfg.glyphs)?)
                }
                None => None,
            };
            let svg = render(
                &raster,
                timestep,
                glyphs.as_ref(),
                Some(&hatch),
                network.boundary(),
                &cfg.render,
            )?;
            std::fs::write(&output, svg).map_err(|e| Error::io(&output, e))
        }
        Command::Eval {
            data,
            out,
            epochs,
            seed,
            no_pna,
            no_gpe,
            tables,
        } => {
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.seed, seed);
            cfg.train.model.pna &= !no_pna;
            cfg.train.model.gpe &= !no_gpe;
            let (network, obs, truth) = match data {
                Some(dir) => {
                    let (network, obs) = load_dataset(&dir)?;
                    let truth_dir = dir.join("truth");
                    let truth = if truth_dir.exists() {
                        Some(RasterField::load(&truth_dir)?)
                    } else {
                        None
                    };
                    (network, obs, truth)
                }
                None => {
                    let s = synthesize(&cfg.synth)?;
                    (s.network, s.observations, Some(s.truth))
                }
            };
            let report = run_experiment(&network, &obs, truth.as_ref(), &cfg.experiment(), |task, r| {
                println!(
                    "{}",
                    json!({ "task": task, "epoch": r.epoch, "loss": r.loss, "validation": r.validation })
                );
            })?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            report.save_json(&out.join("report.json"))?;
            if tables {
                report.write_tables(&out)?;
            }
            Ok(())
        }
    }
}

fn run_train(mut cfg: Config, args: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    set(&mut t.alpha, args.alpha);
    set(&mut t.window, args.window);
    set(&mut t.epochs, args.epochs);
    set(&mut t.model.gamma, args.gamma);
    set(&mut t.seed, args.seed);
    set(&mut t.model.t_sr, args.t_sr);
    set(&mut cfg.holdout, args.holdout);
    t.model.pna &= !args.no_pna;
    t.model.gpe &= !args.no_gpe;
    let (network, obs) = load_dataset(&args.data)?;

    let has_data = rows_with_data(&obs);
    let originals: Vec<usize> = network
        .original_indices()
        .into_iter()
        .filter(|&i| has_data[i])
        .collect();
    let local = SplitSpec::random(originals.len(), obs.n_steps(), cfg.holdout, &cfg.train)?;
    let split = SplitSpec::new(
        local.known.iter().map(|&k| originals[k]).collect(),
        local.unknown.iter().map(|&k| originals[k]).collect(),
        obs.n_steps(),
        &cfg.train,
    )?;
    let outcome = train(&network, &obs, &split, &cfg.train, |r| {
        println!("{}", serde_json::to_string(r).expect("epoch record serialises"));
    })?;
    outcome.model.save(&args.checkpoint)?;
    let split_path = args.checkpoint.join("split.json");
    let text = serde_json::to_string_pretty(&outcome.split).expect("split serialises") + "\n";
    std::fs::write(&split_path, text).map_err(|e| Error::io(&split_path, e))?;
    if !split.unknown.is_empty() && cfg.train.model.t_sr == 1 {
        let m = evaluate_imputation(&outcome.model, &network, &obs, &split)?;
        println!(
            "{}",
            json!({ "holdout_rmse": m.rmse, "holdout_mae": m.mae, "count": m.count })
        );
    }
    Ok(())
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn load_dataset(dir: &Path) -> Result<(SensorNetwork, ObservationSeries)> {
    let boundary = dir.join("boundary.json");
    let network = load_network(
        &dir.join("sensors.csv"),
        boundary.exists().then_some(boundary.as_path()),
    )?;
    let obs = ObservationSeries::load(&dir.join("observations"))?;
    if obs.n_sensors() != network.len() {
        return Err(Error::Shape(format!(
            "{}: {} sensors but {} observation rows",
            dir.display(),
            network.len(),
            obs.n_sensors()
        )));
    }
    Ok((network, obs))
}

fn save_dataset(dir: &Path, network: &SensorNetwork, obs: &ObservationSeries) -> Result<()> {
    save_network(dir, network)?;
    obs.save(&dir.join("observations"))
}

fn rows_with_data(obs: &ObservationSeries) -> Vec<bool> {
    (0..obs.n_sensors())
        .map(|i| obs.row_mask(i).iter().any(|&m| m))
        .collect()
}

fn raster_grid(network: &SensorNetwork, width: usize) -> GridSpec {
    GridSpec::with_long_side(network.bounds(), width.max(1))
}

fn density_raster(d: &DensityField) -> RasterField {
    let mut r = RasterField::filled(d.grid, 1, 0.0);
    for (dst, &v) in r.frame_mut(0).iter_mut().zip(&d.values) {
        *dst = v as f32;
    }
    r
}
