//! Graph imputation network: geographical positional encoding, PNA spatial
//! convolutions alternating with gated temporal convolutions, and a linear
//! width-1 output head.

use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::matrix::{read_matrix, write_matrix, MatrixHeader};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::graph::{SensorGraph, SparseMatrix};
use crate::nn::{dropout_mask, Aggregator, Neighborhoods, Tape, Tensor, Var};

pub const CHECKPOINT_FORMAT: &str = "relmap-checkpoint";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Number of PNA + temporal convolution blocks.
    pub blocks: usize,
    /// GPE scales M.
    pub gpe_scales: usize,
    /// Neighbours per sensor in the graph.
    pub k: usize,
    /// Temporal super-resolution factor realised by the final block.
    pub t_sr: usize,
    /// Temporal kernel width (odd).
    pub kernel: usize,
    /// Huber threshold in normalized units.
    pub gamma: f64,
    pub dropout: f64,
    pub epsilon_std: f64,
    /// Six aggregators × three scalers when true, a single mean otherwise.
    pub pna: bool,
    pub gpe: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            blocks: 2,
            gpe_scales: 4,
            k: 10,
            t_sr: 1,
            kernel: 3,
            gamma: 1.0,
            dropout: 0.05,
            epsilon_std: 1e-6,
            pna: true,
            gpe: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 || self.blocks == 0 {
            return bad("hidden size and block count must be positive");
        }
        if self.gpe && self.gpe_scales == 0 {
            return bad("GPE needs at least one scale");
        }
        if self.t_sr == 0 {
            return bad("t_sr must be at least 1");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("temporal kernel width must be odd");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.epsilon_std > 0.0) {
            return bad("epsilon_std must be positive");
        }
        Ok(())
    }

    fn aggregator_blocks(&self) -> usize {
        if self.pna {
            18
        } else {
            1
        }
    }

    /// Channels entering the first spatial convolution: value, observed flag, GPE.
    pub fn input_channels(&self) -> usize {
        2 + if self.gpe { 4 * self.gpe_scales } else { 0 }
    }
}

/// Reference frame mapping lng/lat to GPE delta coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpeFrame {
    pub center: Point,
    /// Divisors per axis; 0 marks a zero-extent axis.
    pub scale: (f64, f64),
}

impl GpeFrame {
    /// Centre on the mean position and scale so the largest |delta| per axis is 1.
    pub fn fit(positions: &[Point]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Empty("positional encoding needs at least one sensor".into()));
        }
        let n = positions.len() as f64;
        let center = Point::new(
            positions.iter().map(|p| p.x).sum::<f64>() / n,
            positions.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let sx = positions.iter().map(|p| (p.x - center.x).abs()).fold(0.0, f64::max);
        let sy = positions.iter().map(|p| (p.y - center.y).abs()).fold(0.0, f64::max);
        Ok(Self {
            center,
            scale: (sx, sy),
        })
    }

    pub fn delta(&self, p: Point) -> (f64, f64) {
        let f = |v: f64, c: f64, s: f64| if s > 0.0 { (v - c) / s } else { 0.0 };
        (f(p.x, self.center.x, self.scale.0), f(p.y, self.center.y, self.scale.1))
    }
}

/// Sinusoidal features before the learned projection: n × 4M.
pub fn gpe_features(positions: &[Point], frame: &GpeFrame, scales: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * 4 * scales);
    for &p in positions {
        let (x, y) = frame.delta(p);
        for m in 0..scales {
            let s = 2f64.powi(m as i32);
            data.extend_from_slice(&[(x / s).cos(), (x / s).sin(), (y / s).cos(), (y / s).sin()]);
        }
    }
    Tensor::from_vec(positions.len(), 4 * scales, data).expect("sized")
}

/// z-normalization with training-set statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(values: impl Iterator<Item = f64>) -> Result<Self> {
        let (mut n, mut s1, mut s2) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            s1 += v;
            s2 += v * v;
        }
        if n == 0 {
            return Err(Error::Empty("no observed values to normalize".into()));
        }
        let mean = s1 / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Neighbourhoods and per-node constants for one PNA adjacency.
#[derive(Debug, Clone)]
pub struct PnaAdjacency {
    nbrs: Rc<Neighborhoods>,
    dmean: Vec<f64>,
    dstd: Vec<f64>,
    amp: Vec<f64>,
    att: Vec<f64>,
}

impl PnaAdjacency {
    /// `eta` divides the amplification scaler; `eps` stabilises the weight spread.
    pub fn new(a: &SparseMatrix, eta: f64, eps: f64) -> Self {
        let n = a.n();
        let mut lists = Vec::with_capacity(n);
        let (mut dmean, mut dstd, mut amp, mut att) = (vec![0.0; n], vec![0.0; n], vec![1.0; n], vec![1.0; n]);
        for i in 0..n {
            let row = a.row(i);
            let js: Vec<usize> = row.iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect();
            if !js.is_empty() {
                let m = js.len() as f64;
                let incoming: Vec<f64> = js.iter().map(|&j| a.get(j, i)).collect();
                let mean = incoming.iter().sum::<f64>() / m;
                let sq = incoming.iter().map(|w| w * w).sum::<f64>() / m;
                dmean[i] = mean;
                dstd[i] = ((sq - mean * mean).max(0.0) + eps).sqrt();
                let d: f64 = row.iter().map(|e| e.1).sum();
                let s = ((d + 1.0).ln() / eta).max(1e-3);
                amp[i] = s;
                att[i] = 1.0 / s;
            }
            lists.push(js);
        }
        Self {
            nbrs: Rc::new(Neighborhoods::new(lists)),
            dmean,
            dstd,
            amp,
            att,
        }
    }

    pub fn n(&self) -> usize {
        self.nbrs.nodes()
    }

    pub fn neighborhoods(&self) -> &Neighborhoods {
        &self.nbrs
    }

    pub fn scalers(&self, i: usize) -> (f64, f64) {
        (self.amp[i], self.att[i])
    }

    pub fn distance_aggregates(&self, i: usize) -> (f64, f64) {
        (self.dmean[i], self.dstd[i])
    }
}

fn per_row(values: &[f64], steps: usize) -> Rc<[f64]> {
    values
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, steps))
        .collect::<Vec<_>>()
        .into()
}

fn broadcast(values: &[f64], steps: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(values.len() * steps * cols);
    for &v in values {
        data.extend(std::iter::repeat_n(v, steps * cols));
    }
    Tensor::from_vec(values.len() * steps, cols, data).expect("sized")
}

/// Input steps seen by the learned upsampling skip path.
pub const UPSAMPLE_TAPS: usize = 5;

/// `UPSAMPLE_TAPS × t_sr` filter mapping a node's neighbouring input values
/// to its `t_sr` fine values, initialised to linear interpolation.
fn linear_upsampling_filter(t_sr: usize) -> Tensor {
    let centre = UPSAMPLE_TAPS / 2;
    let mut f = Tensor::zeros(UPSAMPLE_TAPS, t_sr);
    for r in 0..t_sr {
        let frac = r as f64 / t_sr as f64;
        f.data_mut()[centre * t_sr + r] = 1.0 - frac;
        f.data_mut()[(centre + 1) * t_sr + r] = frac;
    }
    f
}

/// Learned projection of the sinusoidal features.
pub fn gpe_layer(tape: &mut Tape, raw: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(raw, w)?;
    tape.add_bias(h, b)
}

/// One spatial convolution. `x` has rows `node·steps + step`.
/// `w` maps the concatenated aggregates (18·z or z) to the output width and
/// `root` maps each node's own features.
#[allow(clippy::too_many_arguments)]
pub fn pna_layer(
    tape: &mut Tape,
    x: Var,
    adj: &PnaAdjacency,
    steps: usize,
    w: Var,
    root: Var,
    b: Var,
    full: bool,
    eps: f64,
) -> Result<Var> {
    let z = tape.value(x).cols();
    let mean = tape.aggregate(x, adj.nbrs.clone(), steps, Aggregator::Mean)?;
    let combined = if full {
        let smax = tape.aggregate(x, adj.nbrs.clone(), steps, Aggregator::Softmax)?;
        let smin = tape.aggregate(x, adj.nbrs.clone(), steps, Aggregator::Softmin)?;
        let std = tape.aggregate(x, adj.nbrs.clone(), steps, Aggregator::Std { eps })?;
        let dmean = tape.constant(broadcast(&adj.dmean, steps, z));
        let dstd = tape.constant(broadcast(&adj.dstd, steps, z));
        let aggs = tape.concat_cols(&[mean, smax, smin, std, dmean, dstd])?;
        let amp = tape.scale_rows(aggs, per_row(&adj.amp, steps))?;
        let att = tape.scale_rows(aggs, per_row(&adj.att, steps))?;
        tape.concat_cols(&[aggs, amp, att])?
    } else {
        mean
    };
    let h = tape.matmul(combined, w)?;
    let self_term = tape.matmul(x, root)?;
    let h = tape.add(h, self_term)?;
    let h = tape.add_bias(h, b)?;
    Ok(tape.relu(h))
}

/// Gated temporal convolution with SAME padding. When `t_sr > 1` the output
/// channels are split into `t_sr` sub-steps, giving `steps·t_sr` rows per node.
#[allow(clippy::too_many_arguments)]
pub fn temporal_layer(
    tape: &mut Tape,
    x: Var,
    steps: usize,
    kernel: usize,
    wv: Var,
    bv: Var,
    wg: Var,
    bg: Var,
    t_sr: usize,
) -> Result<Var> {
    let u = tape.unfold_time(x, steps, kernel)?;
    let a = tape.matmul(u, wv)?;
    let a = tape.add_bias(a, bv)?;
    let g = tape.matmul(u, wg)?;
    let g = tape.add_bias(g, bg)?;
    let y = tape.glu(a, g)?;
    if t_sr == 1 {
        return Ok(y);
    }
    let (rows, cols) = tape.value(y).shape();
    if cols % t_sr != 0 {
        return Err(Error::Shape(format!(
            "{cols} channels cannot split into {t_sr} sub-steps"
        )));
    }
    tape.reshape(y, rows * t_sr, cols / t_sr)
}

/// Width-1 linear output convolution.
pub fn output_head(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// One window of model input in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub n: usize,
    pub steps: usize,
    /// `n × steps`, zero wherever not observed.
    pub values: Vec<f64>,
    /// Entry-level observation flags.
    pub observed: Vec<bool>,
    /// Nodes allowed to send and receive first-layer messages.
    pub node_observed: Vec<bool>,
}

impl ModelInput {
    pub fn new(
        n: usize,
        steps: usize,
        values: Vec<f64>,
        observed: Vec<bool>,
        node_observed: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != n * steps || observed.len() != n * steps || node_observed.len() != n {
            return Err(Error::Shape(format!("model input for {n} nodes × {steps} steps")));
        }
        let values = values
            .iter()
            .zip(&observed)
            .enumerate()
            .map(|(k, (&v, &o))| if o && node_observed[k / steps] { v } else { 0.0 })
            .collect();
        let observed = observed
            .iter()
            .enumerate()
            .map(|(k, &o)| o && node_observed[k / steps])
            .collect();
        Ok(Self {
            n,
            steps,
            values,
            observed,
            node_observed,
        })
    }

    /// `(n·steps) × width` windows of each node's values centred on every
    /// step, replicating the first and last step beyond the edges.
    fn edge_padded_taps(&self, width: usize) -> Tensor {
        let half = (width / 2) as isize;
        let last = self.steps as isize - 1;
        let mut data = Vec::with_capacity(self.values.len() * width);
        for i in 0..self.n {
            let row = &self.values[i * self.steps..(i + 1) * self.steps];
            for t in 0..self.steps as isize {
                data.extend((-half..=half).map(|k| row[(t + k).clamp(0, last) as usize]));
            }
        }
        Tensor::from_vec(self.n * self.steps, width, data).expect("sized")
    }

    fn features(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.values.len() * 2);
        for (v, &o) in self.values.iter().zip(&self.observed) {
            data.push(*v);
            data.push(if o { 1.0 } else { 0.0 });
        }
        Tensor::from_vec(self.values.len(), 2, data).expect("sized")
    }
}

/// Graph and sensor positions a model runs on.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub graph: SensorGraph,
    pub positions: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub frame: GpeFrame,
    /// Divisor of the amplification scaler (km), fixed at training time.
    pub eta: f64,
    /// Edge-weight distance scale (km), reused for inference graphs.
    pub distance_scale: f64,
    pub normalizer: Normalizer,
    pub seed: u64,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

struct Layout {
    gpe: Option<(usize, usize)>,
    blocks: Vec<BlockSlots>,
    head: (usize, usize),
    up: Option<usize>,
}

struct BlockSlots {
    w: usize,
    root: usize,
    b: usize,
    wv: usize,
    bv: usize,
    wg: usize,
    bg: usize,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        frame: GpeFrame,
        eta: f64,
        distance_scale: f64,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if !(eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, init: Init| {
            let t = match init {
                Init::Uniform => Tensor::uniform(rows, cols, (1.0 / rows as f64).sqrt(), &mut rng),
                Init::Const(v) => Tensor::full(rows, cols, v),
            };
            names.push(name);
            params.push(t);
        };
        let c = &config;
        if c.gpe {
            let f = 4 * c.gpe_scales;
            add("gpe.w".into(), f, f, Init::Uniform);
            add("gpe.b".into(), 1, f, Init::Const(0.0));
        }
        let mut z_in = c.input_channels();
        for l in 0..c.blocks {
            let last = l + 1 == c.blocks;
            let z_out = if last { c.hidden * c.t_sr } else { c.hidden };
            add(
                format!("block{l}.pna.w"),
                c.aggregator_blocks() * z_in,
                c.hidden,
                Init::Uniform,
            );
            add(format!("block{l}.pna.root"), z_in, c.hidden, Init::Uniform);
            add(format!("block{l}.pna.b"), 1, c.hidden, Init::Const(0.0));
            add(format!("block{l}.tc.wv"), c.kernel * c.hidden, z_out, Init::Uniform);
            add(format!("block{l}.tc.bv"), 1, z_out, Init::Const(0.0));
            add(format!("block{l}.tc.wg"), c.kernel * c.hidden, z_out, Init::Uniform);
            add(
                format!("block{l}.tc.bg"),
                1,
                z_out,
                Init::Const(if last { 1.0 } else { 0.0 }),
            );
            z_in = c.hidden;
        }
        add("head.w".into(), c.hidden, 1, Init::Uniform);
        add("head.b".into(), 1, 1, Init::Const(0.0));
        if c.t_sr > 1 {
            names.push("head.up".into());
            params.push(linear_upsampling_filter(c.t_sr));
        }
        Ok(Self {
            config,
            frame,
            eta,
            distance_scale,
            normalizer,
            seed,
            names,
            params,
        })
    }

    fn layout(&self) -> Layout {
        let mut k = 0;
        let mut next = || {
            k += 1;
            k - 1
        };
        let gpe = self.config.gpe.then(|| (next(), next()));
        let blocks = (0..self.config.blocks)
            .map(|_| BlockSlots {
                w: next(),
                root: next(),
                b: next(),
                wv: next(),
                bv: next(),
                wg: next(),
                bg: next(),
            })
            .collect();
        let head = (next(), next());
        let up = (self.config.t_sr > 1).then(&mut next);
        Layout { gpe, blocks, head, up }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Round parameters through `f32`, the checkpoint precision.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            for v in p.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Record the forward pass; returns `(n·steps·t_sr) × 1` in normalized units.
    /// Dropout is applied when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: &ModelInput,
        ctx: &GraphContext,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let c = &self.config;
        let n = input.n;
        if ctx.graph.n() != n || ctx.positions.len() != n {
            return Err(Error::Shape(format!(
                "input has {n} nodes, graph {} and positions {}",
                ctx.graph.n(),
                ctx.positions.len()
            )));
        }
        let steps = input.steps;
        let layout = self.layout();
        let mut x = tape.constant(input.features());
        if let Some((w, b)) = layout.gpe {
            let raw = tape.constant(gpe_features(&ctx.positions, &self.frame, c.gpe_scales));
            let pe = gpe_layer(tape, raw, vars[w], vars[b])?;
            let pe = tape.repeat_rows(pe, steps);
            x = tape.concat_cols(&[x, pe])?;
        }
        let first = PnaAdjacency::new(
            &ctx.graph.a_first.restrict(&input.node_observed),
            self.eta,
            c.epsilon_std,
        );
        let sub = PnaAdjacency::new(&ctx.graph.a_sub, self.eta, c.epsilon_std);
        for (l, s) in layout.blocks.iter().enumerate() {
            let adj = if l == 0 { &first } else { &sub };
            x = pna_layer(
                tape,
                x,
                adj,
                steps,
                vars[s.w],
                vars[s.root],
                vars[s.b],
                c.pna,
                c.epsilon_std,
            )?;
            if let Some(r) = rng.as_deref_mut() {
                if c.dropout > 0.0 {
                    let mask = dropout_mask(tape.value(x).len(), c.dropout, r);
                    x = tape.mul_const(x, mask.into())?;
                }
            }
            let last = l + 1 == layout.blocks.len();
            let sr = if last { c.t_sr } else { 1 };
            x = temporal_layer(
                tape, x, steps, c.kernel, vars[s.wv], vars[s.bv], vars[s.wg], vars[s.bg], sr,
            )?;
        }
        let y = output_head(tape, x, vars[layout.head.0], vars[layout.head.1])?;
        if let Some(up) = layout.up {
            let taps = tape.constant(input.edge_padded_taps(UPSAMPLE_TAPS));
            let fine = tape.matmul(taps, vars[up])?;
            let fine = tape.reshape(fine, n * steps * c.t_sr, 1)?;
            return tape.add(y, fine);
        }
        Ok(y)
    }

    /// Inference in normalized units: `n × (steps·t_sr)`.
    pub fn predict_normalized(&self, input: &ModelInput, ctx: &GraphContext) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let y = self.forward(&mut tape, &vars, input, ctx, None)?;
        let out = tape.value(y).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(out.reshaped(input.n, input.steps * self.config.t_sr))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors: Vec<TensorEntry> = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                shape: [p.rows(), p.cols()],
                path: format!("tensors/{name}"),
            })
            .collect();
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: self.config.clone(),
            frame: self.frame,
            eta: self.eta,
            distance_scale: self.distance_scale,
            normalizer: self.normalizer,
            seed: self.seed,
            tensors,
        };
        for (entry, p) in manifest.tensors.iter().zip(&self.params) {
            let data: Vec<f32> = p.data().iter().map(|&v| v as f32).collect();
            write_matrix(
                &dir.join(&entry.path),
                &MatrixHeader::new(vec![p.rows(), p.cols()]),
                &data,
            )?;
        }
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::format(&path, format!("unexpected format {:?}", manifest.format)));
        }
        let mut model = Model::new(
            manifest.config,
            manifest.frame,
            manifest.eta,
            manifest.distance_scale,
            manifest.normalizer,
            manifest.seed,
        )
        .map_err(|e| Error::format(&path, e.to_string()))?;
        if model.names.len() != manifest.tensors.len() {
            return Err(Error::format(&path, "tensor list does not match the configuration"));
        }
        for (k, entry) in manifest.tensors.iter().enumerate() {
            let expected = model.params[k].shape();
            if entry.name != model.names[k] || (entry.shape[0], entry.shape[1]) != expected {
                return Err(Error::format(
                    &path,
                    format!("tensor {} does not match the configuration", entry.name),
                ));
            }
            let (header, data) = read_matrix(&dir.join(&entry.path))?;
            if header.shape != entry.shape {
                return Err(Error::format(
                    &path,
                    format!("tensor {} has shape {:?}", entry.name, header.shape),
                ));
            }
            model.params[k] = Tensor::from_vec(expected.0, expected.1, data.into_iter().map(f64::from).collect())?;
        }
        Ok(model)
    }
}

enum Init {
    Uniform,
    Const(f64),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    path: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    frame: GpeFrame,
    eta: f64,
    distance_scale: f64,
    normalizer: Normalizer,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Sensor, SensorNetwork};
    use crate::geometry::BBox;
    use crate::graph::build_graph;

    fn context(n: usize) -> GraphContext {
        let sensors: Vec<Sensor> = (0..n)
            .map(|i| {
                let a = i as f64 * 2.39996;
                Sensor::original(
                    format!("s{i:02}"),
                    0.3 * a.cos() * (i as f64).sqrt(),
                    0.3 * a.sin() * (i as f64).sqrt(),
                )
            })
            .collect();
        let bbox = BBox {
            min_x: -3.0,
            min_y: -3.0,
            max_x: 3.0,
            max_y: 3.0,
        };
        let net = SensorNetwork::new(sensors, bbox.to_polygon()).unwrap();
        GraphContext {
            graph: build_graph(&net, 3, None).unwrap(),
            positions: net.positions(),
        }
    }

    fn model(config: ModelConfig, ctx: &GraphContext) -> Model {
        Model::new(
            config,
            GpeFrame::fit(&ctx.positions).unwrap(),
            ctx.graph.eta,
            ctx.graph.distance_scale,
            Normalizer::identity(),
            5,
        )
        .unwrap()
    }

    fn input(n: usize, steps: usize) -> ModelInput {
        let values = (0..n * steps).map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let mut node_observed = vec![true; n];
        node_observed[1] = false;
        ModelInput::new(n, steps, values, vec![true; n * steps], node_observed).unwrap()
    }

    #[test]
    fn gpe_centroid_and_symmetry() {
        let pts = [Point::new(-1.0, 2.0), Point::new(1.0, -2.0), Point::new(0.0, 0.0)];
        let frame = GpeFrame::fit(&pts).unwrap();
        let f = gpe_features(&pts, &frame, 3);
        assert_eq!(f.shape(), (3, 12));
        for m in 0..3 {
            assert_eq!(&f.row(2)[4 * m..4 * m + 4], &[1.0, 0.0, 1.0, 0.0]);
            for c in [0, 2] {
                assert_eq!(f.get(0, 4 * m + c), f.get(1, 4 * m + c));
                assert_eq!(f.get(0, 4 * m + c + 1), -f.get(1, 4 * m + c + 1));
            }
        }
        assert_eq!(frame.delta(pts[0]), (-1.0, 1.0));
        let flat = GpeFrame::fit(&[Point::new(1.0, 5.0), Point::new(3.0, 5.0)]).unwrap();
        assert_eq!(flat.delta(Point::new(3.0, 5.0)), (1.0, 0.0));
    }

    #[test]
    fn aggregator_spot_values() {
        let a = SparseMatrix::from_rows(vec![vec![(1, 1.0), (2, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]]);
        let adj = PnaAdjacency::new(&a, 1.0, 1e-6);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap());
        let sm = tape.aggregate(x, adj.nbrs.clone(), 1, Aggregator::Softmax).unwrap();
        let e = std::f64::consts::E;
        let expected = (e + 2.0 * e * e) / (e + e * e);
        assert!((tape.value(sm).get(0, 0) - expected).abs() < 1e-12);
        assert!((expected - 1.7311).abs() < 1e-4);
        let mean = tape.aggregate(x, adj.nbrs.clone(), 1, Aggregator::Mean).unwrap();
        assert_eq!(tape.value(mean).get(0, 0), 1.5);
        assert_eq!(adj.distance_aggregates(0), (1.0, 1e-6f64.sqrt()));
        let (amp, att) = adj.scalers(0);
        assert!((amp - 3f64.ln()).abs() < 1e-12 && (amp * att - 1.0).abs() < 1e-12);

        let c = tape.constant(Tensor::full(3, 1, 4.0));
        for agg in [Aggregator::Mean, Aggregator::Softmax, Aggregator::Softmin] {
            let v = tape.aggregate(c, adj.nbrs.clone(), 1, agg).unwrap();
            assert!((tape.value(v).get(0, 0) - 4.0).abs() < 1e-12);
        }
        let s = tape
            .aggregate(c, adj.nbrs.clone(), 1, Aggregator::Std { eps: 0.0 })
            .unwrap();
        assert_eq!(tape.value(s).get(0, 0), 0.0);
    }

    #[test]
    fn isolated_node_uses_identity_scalers() {
        let a = SparseMatrix::from_rows(vec![vec![(1, 0.5)], vec![(0, 0.5)], vec![]]);
        let adj = PnaAdjacency::new(&a, 1000.0, 1e-6);
        assert_eq!(adj.scalers(2), (1.0, 1.0));
        assert_eq!(adj.distance_aggregates(2), (0.0, 0.0));
        assert_eq!(adj.scalers(0).0, 1e-3);
    }

    #[test]
    fn output_shapes_follow_sr_factor() {
        let ctx = context(8);
        for (t_sr, steps) in [(1, 8), (4, 8), (2, 5)] {
            let m = model(
                ModelConfig {
                    t_sr,
                    ..ModelConfig::default()
                },
                &ctx,
            );
            let out = m.predict_normalized(&input(8, steps), &ctx).unwrap();
            assert_eq!(out.shape(), (8, steps * t_sr));
            assert!(out.is_finite());
        }
    }

    #[test]
    fn identity_temporal_kernel_with_open_gate_passes_input() {
        let mut tape = Tape::new();
        let xs = Tensor::from_vec(6, 2, vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let x = tape.constant(xs.clone());
        let mut wv = Tensor::zeros(6, 2);
        wv.data_mut()[2 * 2] = 1.0;
        wv.data_mut()[3 * 2 + 1] = 1.0;
        let wv = tape.constant(wv);
        let bv = tape.constant(Tensor::zeros(1, 2));
        let wg = tape.constant(Tensor::zeros(6, 2));
        let bg = tape.constant(Tensor::full(1, 2, 60.0));
        let y = temporal_layer(&mut tape, x, 3, 3, wv, bv, wg, bg, 1).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(xs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = temporal_layer(&mut tape, x, 3, 3, wv, bv, wg, bg, 2).unwrap();
        assert_eq!(tape.value(y).shape(), (12, 1));
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let n = 9;
        let ctx = context(n);
        let m = model(ModelConfig::default(), &ctx);
        let inp = input(n, 6);
        let out = m.predict_normalized(&inp, &ctx).unwrap();

        let order = [4, 0, 8, 2, 7, 1, 5, 3, 6];
        let pctx = GraphContext {
            graph: SensorGraph {
                a_first: ctx.graph.a_first.permuted(&order),
                a_sub: ctx.graph.a_sub.permuted(&order),
                ..ctx.graph.clone()
            },
            positions: order.iter().map(|&i| ctx.positions[i]).collect(),
        };
        let steps = inp.steps;
        let pick = |v: &[f64]| {
            order
                .iter()
                .flat_map(|&i| v[i * steps..(i + 1) * steps].to_vec())
                .collect::<Vec<_>>()
        };
        let pinp = ModelInput::new(
            n,
            steps,
            pick(&inp.values),
            order
                .iter()
                .flat_map(|&i| inp.observed[i * steps..(i + 1) * steps].to_vec())
                .collect(),
            order.iter().map(|&i| inp.node_observed[i]).collect(),
        )
        .unwrap();
        let pout = m.predict_normalized(&pinp, &pctx).unwrap();
        for (k, &i) in order.iter().enumerate() {
            for t in 0..steps {
                assert!((pout.get(k, t) - out.get(i, t)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ablations_run_and_checkpoints_round_trip() {
        let ctx = context(7);
        for (pna, gpe) in [(false, true), (true, false), (false, false)] {
            let m = model(
                ModelConfig {
                    pna,
                    gpe,
                    ..ModelConfig::default()
                },
                &ctx,
            );
            assert_eq!(m.predict_normalized(&input(7, 4), &ctx).unwrap().shape(), (7, 4));
        }
        let mut m = model(ModelConfig::default(), &ctx);
        m.quantize();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn masked_rows_do_not_reach_first_layer() {
        let n = 8;
        let ctx = context(n);
        let m = model(
            ModelConfig {
                blocks: 1,
                ..ModelConfig::default()
            },
            &ctx,
        );
        let inp = input(n, 4);
        let base = m.predict_normalized(&inp, &ctx).unwrap();
        let mut values = inp.values.clone();
        for t in 0..4 {
            values[4 + t] = 100.0;
        }
        let altered = ModelInput::new(n, 4, values, inp.observed.clone(), inp.node_observed.clone()).unwrap();
        assert_eq!(m.predict_normalized(&altered, &ctx).unwrap(), base);
    }
}
