//! Masked-subgraph training, inference over long timelines, and imputation metrics.

use std::ops::Range;
use std::rc::Rc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObservationSeries, SensorNetwork};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::model::{GpeFrame, GraphContext, Model, ModelConfig, ModelInput, Normalizer, UPSAMPLE_TAPS};
use crate::nn::{huber, Adam, AdamConfig, Tape, Tensor, Var};

/// Coarse steps predicted per chunk when running over a full timeline.
const INFERENCE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Fraction of known sensors masked in every training sample.
    pub alpha: f64,
    /// Window length p in model input steps.
    pub window: usize,
    pub epochs: usize,
    /// Windows averaged per optimiser step.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Trailing share of the timeline held out for validation.
    pub validation_fraction: f64,
    /// Epochs between validation evaluations (0 disables validation).
    pub validate_every: usize,
    /// Stop after this many validations without improvement and keep the best parameters.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            alpha: 0.5,
            window: 16,
            epochs: 1000,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            validation_fraction: 0.1,
            validate_every: 100,
            patience: None,
        }
    }
}

/// Partition of sensors (known/unknown) and of the timeline (train/validation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub train_steps: Range<usize>,
    pub validation_steps: Range<usize>,
    pub alpha: f64,
    /// Window length in model input steps.
    pub window: usize,
    /// Fine steps per input step.
    pub t_sr: usize,
}

impl SplitSpec {
    /// Hold out `⌊unknown_fraction·n⌋` sensors chosen by `seed`.
    pub fn random(n: usize, n_steps: usize, unknown_fraction: f64, cfg: &TrainConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&unknown_fraction) {
            return Err(Error::Config(format!(
                "unknown fraction must lie in [0, 1), got {unknown_fraction}"
            )));
        }
        let n_unknown = (unknown_fraction * n as f64).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_eed0_f5e7_u64);
        let mut unknown = sample(&mut rng, n, n_unknown).into_vec();
        unknown.sort_unstable();
        let known = (0..n).filter(|i| unknown.binary_search(i).is_err()).collect();
        Self::new(known, unknown, n_steps, cfg)
    }

    pub fn new(known: Vec<usize>, unknown: Vec<usize>, n_steps: usize, cfg: &TrainConfig) -> Result<Self> {
        if known.iter().any(|k| unknown.contains(k)) {
            return Err(Error::Config("known and unknown sensors overlap".into()));
        }
        if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) && !(cfg.alpha == 0.0 && cfg.model.t_sr > 1) {
            return Err(Error::Config(format!(
                "mask rate must lie in (0, 1), got {}",
                cfg.alpha
            )));
        }
        if cfg.window < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {}", cfg.window)));
        }
        if !(0.0..0.5).contains(&cfg.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 0.5)".into()));
        }
        let n_val = (cfg.validation_fraction * n_steps as f64).ceil() as usize;
        let split = n_steps - n_val.min(n_steps);
        Ok(Self {
            known,
            unknown,
            train_steps: 0..split,
            validation_steps: split..n_steps,
            alpha: cfg.alpha,
            window: cfg.window,
            t_sr: cfg.model.t_sr,
        })
    }

    /// Fine steps covered by one window.
    pub fn span(&self) -> usize {
        self.window * self.t_sr
    }

    pub fn masked_count(&self) -> usize {
        (self.alpha * self.known.len() as f64).floor() as usize
    }
}

/// One training sample over the known sensors, in `split.known` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub start: usize,
    /// Rows hidden from the model.
    pub hidden: Vec<bool>,
    /// `known × span` raw values with hidden rows zeroed.
    pub x_v: Vec<f32>,
}

/// Draw the masked rows and window start for sample `counter`.
pub fn sample_subgraph(data: &ObservationSeries, split: &SplitSpec, seed: u64, counter: u64) -> Result<Subgraph> {
    let span = split.span();
    let train_len = split.train_steps.len();
    if span > train_len {
        return Err(Error::Config(format!(
            "window spans {span} steps but only {train_len} training steps are available"
        )));
    }
    let n = split.known.len();
    let m = split.masked_count();
    if m >= n && split.alpha > 0.0 {
        return Err(Error::Config(format!(
            "masking {m} of {n} known sensors leaves none visible"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    let start = split.train_steps.start + rng.gen_range(0..=train_len - span);
    let mut hidden = vec![false; n];
    for k in sample(&mut rng, n, m) {
        hidden[k] = true;
    }
    let mut x_v = Vec::with_capacity(n * span);
    for (r, &i) in split.known.iter().enumerate() {
        if hidden[r] {
            x_v.extend(std::iter::repeat_n(0.0, span));
        } else {
            x_v.extend_from_slice(&data.row(i)[start..start + span]);
        }
    }
    Ok(Subgraph { start, hidden, x_v })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    pub split: SplitSpec,
}

/// Coarse input and fine target for one window of known sensors.
struct Sample {
    input: ModelInput,
    target: Rc<Tensor>,
    loss_mask: Rc<[bool]>,
}

fn build_sample(
    data: &ObservationSeries,
    rows: &[usize],
    hidden: &[bool],
    start: usize,
    window: usize,
    t_sr: usize,
    norm: &Normalizer,
) -> Result<Option<Sample>> {
    let n = rows.len();
    let span = window * t_sr;
    let mut values = Vec::with_capacity(n * window);
    let mut observed = Vec::with_capacity(n * window);
    let mut target = Vec::with_capacity(n * span);
    let mut loss_mask = Vec::with_capacity(n * span);
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..window {
            let s = start + c * t_sr;
            values.push(norm.forward(f64::from(data.value(i, s))));
            observed.push(data.is_observed(i, s));
        }
        let supervised = hidden[r] || t_sr > 1;
        for s in start..start + span {
            target.push(norm.forward(f64::from(data.value(i, s))));
            loss_mask.push(supervised && data.is_observed(i, s));
        }
    }
    if !loss_mask.iter().any(|&m| m) {
        return Ok(None);
    }
    let node_observed = hidden.iter().map(|&h| !h).collect();
    Ok(Some(Sample {
        input: ModelInput::new(n, window, values, observed, node_observed)?,
        target: Rc::new(Tensor::from_vec(n * span, 1, target)?),
        loss_mask: loss_mask.into(),
    }))
}

/// Train on the known sensors of `network`/`data` (fine resolution when `t_sr > 1`).
pub fn train(
    network: &SensorNetwork,
    data: &ObservationSeries,
    split: &SplitSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.model.validate()?;
    if network.len() != data.n_sensors() {
        return Err(Error::Shape(format!(
            "{} sensors but {} observation rows",
            network.len(),
            data.n_sensors()
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let known_net = network.subset(&split.known);
    let positions = known_net.positions();
    let graph = build_graph(&known_net, cfg.model.k, None)?;
    let norm = Normalizer::fit(split.known.iter().flat_map(|&i| {
        split
            .train_steps
            .clone()
            .filter(move |&s| data.is_observed(i, s))
            .map(move |s| f64::from(data.value(i, s)))
    }))?;
    let mut model = Model::new(
        cfg.model.clone(),
        GpeFrame::fit(&positions)?,
        graph.eta,
        graph.distance_scale,
        norm,
        cfg.seed,
    )?;
    let ctx = GraphContext { graph, positions };
    let validation = validation_sample(data, split, cfg, &norm)?;

    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut stale = 0usize;
    for epoch in 0..cfg.epochs {
        let mut samples = Vec::with_capacity(cfg.batch_size);
        for b in 0..cfg.batch_size {
            let counter = (epoch * cfg.batch_size + b) as u64;
            let sub = sample_subgraph(data, split, cfg.seed, counter)?;
            if let Some(s) = build_sample(
                data,
                &split.known,
                &sub.hidden,
                sub.start,
                split.window,
                split.t_sr,
                &norm,
            )? {
                samples.push((counter, s));
            }
        }
        if samples.is_empty() {
            continue;
        }
        let scale = 1.0 / samples.len() as f64;
        let (loss, grads) = crate::nn::gradient(&model.params, |tape: &mut Tape, vars: &[Var]| {
            let mut total: Option<Var> = None;
            for (counter, s) in &samples {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd40f_u64);
                rng.set_stream(*counter);
                let y = model.forward(tape, vars, &s.input, &ctx, Some(&mut rng))?;
                let l = tape.huber(y, s.target.clone(), s.loss_mask.clone(), cfg.model.gamma)?;
                total = Some(match total {
                    Some(t) => tape.add(t, l)?,
                    None => l,
                });
            }
            let total = total.expect("at least one sample");
            tape.mul_const(total, Rc::from(vec![scale]))
        })?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        adam.step(&mut model.params, &grads);

        let mut record = EpochRecord {
            epoch,
            loss,
            validation: None,
        };
        let last = epoch + 1 == cfg.epochs;
        if let Some(v) = &validation {
            if cfg.validate_every > 0 && ((epoch + 1) % cfg.validate_every == 0 || last) {
                let pred = model.predict_normalized(&v.input, &ctx)?.reshaped(v.target.len(), 1);
                let vl = huber(&pred, &v.target, &v.loss_mask, cfg.model.gamma)?;
                record.validation = Some(vl);
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    best = Some((vl, model.params.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
        }
        on_epoch(&record);
        trace.push(record);
        if cfg.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    if cfg.patience.is_some() {
        if let Some((_, params)) = best {
            model.params = params;
        }
    }
    model.quantize();
    Ok(TrainOutcome {
        model,
        trace,
        split: split.clone(),
    })
}

/// Fixed masked sample over the validation steps.
fn validation_sample(
    data: &ObservationSeries,
    split: &SplitSpec,
    cfg: &TrainConfig,
    norm: &Normalizer,
) -> Result<Option<Sample>> {
    let windows = split.validation_steps.len() / split.t_sr;
    if windows < 2 {
        return Ok(None);
    }
    let n = split.known.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_da7e_u64);
    let mut hidden = vec![false; n];
    for k in sample(&mut rng, n, split.masked_count()) {
        hidden[k] = true;
    }
    build_sample(
        data,
        &split.known,
        &hidden,
        split.validation_steps.start,
        windows,
        split.t_sr,
        norm,
    )
}

/// Context for running `model` on `network`, reusing the training distance scale.
pub fn graph_context(model: &Model, network: &SensorNetwork) -> Result<GraphContext> {
    Ok(GraphContext {
        graph: build_graph(network, model.config.k, Some(model.distance_scale))?,
        positions: network.positions(),
    })
}

/// Run the model over the whole timeline of `data` (model input resolution).
/// Rows with `node_observed[i] == false` are hidden. Returns denormalized
/// `n × (steps·t_sr)` predictions.
pub fn predict_series(
    model: &Model,
    ctx: &GraphContext,
    data: &ObservationSeries,
    node_observed: &[bool],
) -> Result<Vec<f64>> {
    let n = data.n_sensors();
    let steps = data.n_steps();
    if node_observed.len() != n {
        return Err(Error::Shape(format!(
            "{} node flags for {n} sensors",
            node_observed.len()
        )));
    }
    let t_sr = model.config.t_sr;
    let halo = (model.config.blocks * (model.config.kernel / 2)).max(if t_sr > 1 { UPSAMPLE_TAPS / 2 } else { 0 });
    let norm = model.normalizer;
    let fine = steps * t_sr;
    let mut out = vec![0.0; n * fine];
    let mut c0 = 0;
    while c0 < steps {
        let c1 = (c0 + INFERENCE_CHUNK).min(steps);
        let (a, b) = (c0.saturating_sub(halo), (c1 + halo).min(steps));
        let len = b - a;
        let mut values = Vec::with_capacity(n * len);
        let mut observed = Vec::with_capacity(n * len);
        for i in 0..n {
            for s in a..b {
                values.push(norm.forward(f64::from(data.value(i, s))));
                observed.push(data.is_observed(i, s));
            }
        }
        let input = ModelInput::new(n, len, values, observed, node_observed.to_vec())?;
        let pred = model.predict_normalized(&input, ctx)?;
        for i in 0..n {
            for s in c0..c1 {
                for r in 0..t_sr {
                    out[i * fine + s * t_sr + r] = norm.inverse(pred.get(i, (s - a) * t_sr + r));
                }
            }
        }
        c0 = c1;
    }
    Ok(out)
}

/// Impute every row not flagged in `node_observed`; observed entries keep their values.
pub fn impute(
    model: &Model,
    network: &SensorNetwork,
    data: &ObservationSeries,
    node_observed: &[bool],
) -> Result<ObservationSeries> {
    if model.config.t_sr != 1 {
        return Err(Error::Config("imputation needs a model trained with t_sr = 1".into()));
    }
    let ctx = graph_context(model, network)?;
    let pred = predict_series(model, &ctx, data, node_observed)?;
    let (n, t) = (data.n_sensors(), data.n_steps());
    let mut values = Vec::with_capacity(n * t);
    for i in 0..n {
        for s in 0..t {
            values.push(if node_observed[i] && data.is_observed(i, s) {
                data.value(i, s)
            } else {
                pred[i * t + s] as f32
            });
        }
    }
    ObservationSeries::dense(n, t, values, data.time_step(), data.start())
}

/// Upsample a coarse series by the model's `t_sr`.
pub fn super_resolve(model: &Model, network: &SensorNetwork, coarse: &ObservationSeries) -> Result<ObservationSeries> {
    let ctx = graph_context(model, network)?;
    let flags = vec![true; coarse.n_sensors()];
    let pred = predict_series(model, &ctx, coarse, &flags)?;
    let t_sr = model.config.t_sr;
    let values = pred.iter().map(|&v| v as f32).collect();
    let fine = ObservationSeries::dense(
        coarse.n_sensors(),
        coarse.n_steps() * t_sr,
        values,
        coarse.time_step(),
        coarse.start(),
    )?;
    Ok(fine.with_time(coarse.time_step() / t_sr as f64, coarse.start()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

/// RMSE and MAE over `(prediction, truth)` pairs.
pub fn metrics(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Metrics> {
    let (mut n, mut se, mut ae) = (0usize, 0.0, 0.0);
    for (p, t) in pairs {
        let r = p - t;
        se += r * r;
        ae += r.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no evaluation entries".into()));
    }
    Ok(Metrics {
        rmse: (se / n as f64).sqrt(),
        mae: ae / n as f64,
        count: n,
    })
}

/// Impute the unknown sensors from the known ones and score them against `data`.
pub fn evaluate_imputation(
    model: &Model,
    network: &SensorNetwork,
    data: &ObservationSeries,
    split: &SplitSpec,
) -> Result<Metrics> {
    if split.unknown.is_empty() {
        return Err(Error::Empty("no unknown sensors to evaluate".into()));
    }
    let mut flags = vec![false; network.len()];
    for &k in &split.known {
        flags[k] = true;
    }
    let imputed = impute(model, network, data, &flags)?;
    metrics(split.unknown.iter().flat_map(|&i| {
        let imputed = &imputed;
        (0..data.n_steps())
            .filter(move |&s| data.is_observed(i, s))
            .map(move |s| (f64::from(imputed.value(i, s)), f64::from(data.value(i, s))))
    }))
}
