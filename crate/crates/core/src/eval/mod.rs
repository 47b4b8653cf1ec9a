//! Baselines, metrics and end-to-end experiments.

mod baselines;
mod experiment;
mod ssim;

pub use baselines::{knn_impute, linear_tsr};
pub use experiment::{run_experiment, EvalReport, ExperimentConfig, ImputationRow, SsimSeries, TsrRow};
pub use ssim::{ssim, ssim_with_range};
