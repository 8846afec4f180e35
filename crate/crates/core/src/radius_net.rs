//! Multilayer perceptron mapping the stacked observation to `q` hypersphere
//! radii: clipped-ReLU hidden layers, a linear output layer, mini-batch MSE
//! and Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mimo::{draw_observation, snr_to_sigma, stack_input, Constellation};
use crate::sphere::q_closest_distances;

pub const MODEL_VERSION: u32 = 1;
pub const DATASET_VERSION: u32 = 1;

/// Points the label oracle may collect per example before giving up.
pub const ORACLE_BUDGET: u64 = 1 << 20;

/// `min(max(u, 0), 1)`
pub fn clipped_relu(u: f64) -> f64 {
    u.clamp(0.0, 1.0)
}

// Subgradient taken as 0 at both kinks.
fn clipped_relu_grad(u: f64) -> f64 {
    if u > 0.0 && u < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Input length `2n(m + 1)`.
pub fn input_dim(n: usize, m: usize) -> usize {
    2 * n * (m + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    /// `weights[l]` is `layer_dims[l+1] × layer_dims[l]`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {layer_dims:?}")));
        }
        let weights = layer_dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Uniform in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(layer_dims)?;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let limit = (6.0 / (layer_dims[l] + layer_dims[l + 1]) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_dims).expect("shape already validated")
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {dims:?}")));
        }
        if self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return Err(Error::Shape("layer count does not match layer_dims".into()));
        }
        for l in 0..dims.len() - 1 {
            if self.weights[l].len() != dims[l] * dims[l + 1] {
                return Err(Error::Shape(format!("weights[{l}] has {} entries", self.weights[l].len())));
            }
            if self.biases[l].len() != dims[l + 1] {
                return Err(Error::Shape(format!("biases[{l}] has {} entries", self.biases[l].len())));
            }
        }
        if self.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    /// Network output for an already standardized input.
    pub fn forward_raw(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has length {}, network expects {}",
                z.len(),
                self.input_dim()
            )));
        }
        let mut a = z.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let mut u = affine(&self.weights[l], &self.biases[l], &a);
            if l != last {
                u.iter_mut().for_each(|v| *v = clipped_relu(*v));
            }
            a = u;
        }
        Ok(a)
    }

    fn forward_cached(&self, z: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = vec![z.to_vec()];
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let u = affine(&self.weights[l], &self.biases[l], &act[l]);
            let a = if l == last {
                u.clone()
            } else {
                u.iter().map(|&v| clipped_relu(v)).collect()
            };
            pre.push(u);
            act.push(a);
        }
        (pre, act)
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| {
            let row = &w[i * cols..(i + 1) * cols];
            bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation; a constant feature gets scale 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::Invalid("cannot fit statistics to zero rows".into()));
        };
        let dim = first.len();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::Dimension("rows differ in length".into()));
            }
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "input has length {}, statistics cover {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

/// Standardize, run the network, un-scale the output. The output is not sorted.
pub fn forward(params: &MlpParams, x: &[f64], norm: &NormStats, radius_scale: f64) -> Result<Vec<f64>> {
    let mut out = params.forward_raw(&norm.apply(x)?)?;
    out.iter_mut().for_each(|v| *v *= radius_scale);
    Ok(out)
}

/// One training pair in network units: standardized input, scaled target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    pub t: Vec<f64>,
}

/// `(1/M) Σ ‖t − Φ(z)‖²`.
pub fn mse_minibatch_loss(params: &MlpParams, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        let y = params.forward_raw(&s.z)?;
        if y.len() != s.t.len() {
            return Err(Error::Dimension(format!("target length {} vs output {}", s.t.len(), y.len())));
        }
        total += y.iter().zip(&s.t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Backpropagated gradient of [`mse_minibatch_loss`], shaped like `params`.
pub fn gradient(params: &MlpParams, batch: &[Sample]) -> Result<MlpParams> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut g = params.zeros_like();
    let scale = 2.0 / batch.len() as f64;
    let layers = params.weights.len();
    for s in batch {
        if s.z.len() != params.input_dim() || s.t.len() != params.output_dim() {
            return Err(Error::Dimension("sample does not match network shape".into()));
        }
        let (pre, act) = params.forward_cached(&s.z);
        let mut delta: Vec<f64> = act[layers].iter().zip(&s.t).map(|(y, t)| scale * (y - t)).collect();
        for l in (0..layers).rev() {
            let input = &act[l];
            let cols = input.len();
            for (i, &d) in delta.iter().enumerate() {
                g.biases[l][i] += d;
                let row = &mut g.weights[l][i * cols..(i + 1) * cols];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                let w = &params.weights[l];
                let mut back = vec![0.0; cols];
                for (i, &d) in delta.iter().enumerate() {
                    for (b, &wij) in back.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                        *b += d * wij;
                    }
                }
                for (b, &u) in back.iter_mut().zip(&pre[l - 1]) {
                    *b *= clipped_relu_grad(u);
                }
                delta = back;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub alpha: MlpParams,
    pub delta: MlpParams,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, eta: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            t: 0,
            alpha: params.zeros_like(),
            delta: params.zeros_like(),
            eta,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn with_defaults(params: &MlpParams) -> Self {
        Self::new(params, 0.001, 0.9, 0.999, 1e-8)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut MlpParams, state: &mut AdamState, grads: &MlpParams) -> Result<()> {
    if grads.layer_dims != params.layer_dims || state.alpha.layer_dims != params.layer_dims {
        return Err(Error::Shape("gradient shape does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((theta, a), d), &g) in params
        .iter_mut()
        .zip(state.alpha.iter_mut())
        .zip(state.delta.iter_mut())
        .zip(grads.iter())
    {
        *a = b1 * *a + (1.0 - b1) * g;
        *d = b2 * *d + (1.0 - b2) * g * g;
        let a_hat = *a / c1;
        let d_hat = *d / c2;
        *theta -= state.eta * a_hat / (d_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub constellation_order: u32,
    pub snr_db: f64,
    pub q: usize,
    pub examples: Vec<Example>,
    pub norm_stats: NormStats,
    /// Largest radius in the dataset; targets are divided by it.
    pub radius_scale: f64,
}

impl Dataset {
    /// Builds a dataset and fits its statistics.
    pub fn from_examples(
        n: usize,
        m: usize,
        constellation_order: u32,
        snr_db: f64,
        examples: Vec<Example>,
    ) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Invalid("dataset has no examples".into()))?;
        let q = first.r.len();
        let dim = input_dim(n, m);
        for (i, e) in examples.iter().enumerate() {
            if e.x.len() != dim || e.r.len() != q {
                return Err(Error::Dimension(format!("example {i} has inconsistent length")));
            }
            if e.r.windows(2).any(|w| w[0] >= w[1]) || e.r.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(Error::Invalid(format!("example {i} radii are not strictly increasing")));
            }
        }
        let norm_stats = NormStats::fit(examples.iter().map(|e| e.x.as_slice()))?;
        let radius_scale = examples.iter().map(|e| e.r[q - 1]).fold(0.0, f64::max);
        Ok(Self {
            version: DATASET_VERSION,
            n,
            m,
            constellation_order,
            snr_db,
            q,
            examples,
            norm_stats,
            radius_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Keeps the `q` smallest radii of every example.
    pub fn truncate_q(&self, q: usize) -> Result<Self> {
        if q == 0 || q > self.q {
            return Err(Error::Invalid(format!("cannot truncate q = {} to {q}", self.q)));
        }
        let examples = self
            .examples
            .iter()
            .map(|e| Example {
                x: e.x.clone(),
                r: e.r[..q].to_vec(),
            })
            .collect();
        Self::from_examples(self.n, self.m, self.constellation_order, self.snr_db, examples)
    }

    /// Splits off the last `fraction` of examples. Statistics are refit on
    /// the first part and shared with the held-out part.
    pub fn split(&self, fraction: f64) -> Result<(Self, Self)> {
        let held = ((self.len() as f64) * fraction).round() as usize;
        if held == 0 || held >= self.len() {
            return Err(Error::Invalid(format!("split fraction {fraction} leaves an empty side")));
        }
        let cut = self.len() - held;
        let train = Self::from_examples(
            self.n,
            self.m,
            self.constellation_order,
            self.snr_db,
            self.examples[..cut].to_vec(),
        )?;
        let mut test = train.clone();
        test.examples = self.examples[cut..].to_vec();
        Ok((train, test))
    }

    /// Network-unit samples under this dataset's statistics.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        self.samples_with(&self.norm_stats, self.radius_scale)
    }

    pub fn samples_with(&self, norm: &NormStats, radius_scale: f64) -> Result<Vec<Sample>> {
        self.examples
            .iter()
            .map(|e| {
                Ok(Sample {
                    z: norm.apply(&e.x)?,
                    t: e.r.iter().map(|r| r / radius_scale).collect(),
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Self = read_json(path)?;
        if d.version != DATASET_VERSION {
            return Err(Error::Parse {
                path: path.into(),
                message: format!("field `version`: expected {DATASET_VERSION}, found {}", d.version),
            });
        }
        Ok(d)
    }
}

/// Draws `count` observations at `snr_db` and labels each with its `q`
/// smallest lattice distances.
pub fn gen_training_set<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    constellation: &Constellation,
    snr_db: f64,
    count: usize,
    q: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Invalid("dataset size must be >= 1".into()));
    }
    let sigma = snr_to_sigma(snr_db, m, constellation.avg_power());
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let obs = draw_observation(rng, constellation, n, m, sigma)?;
        let r = q_closest_distances(&obs, constellation, q, ORACLE_BUDGET)?;
        examples.push(Example {
            x: stack_input(&obs),
            r: r.into_vec(),
        });
    }
    Dataset::from_examples(n, m, constellation.order(), snr_db, examples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            batch_size: 20,
            epochs: 30,
            eta: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// Trained network with everything needed to predict radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusModel {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub constellation_order: u32,
    pub snr_db: f64,
    pub q: usize,
    #[serde(flatten)]
    pub params: MlpParams,
    pub norm_stats: NormStats,
    pub radius_scale: f64,
}

impl RadiusModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward(&self.params, x, &self.norm_stats, self.radius_scale)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.input_dim() != input_dim(self.n, self.m) || self.params.output_dim() != self.q {
            return Err(Error::Shape("layer_dims do not match n, m, q".into()));
        }
        if self.norm_stats.mean.len() != self.params.input_dim() || self.norm_stats.scale.len() != self.params.input_dim() {
            return Err(Error::Shape("norm_stats length does not match input".into()));
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(Error::Invalid("radius_scale must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = read_json(path)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Parse {
                path: path.into(),
                message: format!("field `version`: expected {MODEL_VERSION}, found {}", model.version),
            });
        }
        model.validate().map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: RadiusModel,
    pub initial: RadiusModel,
    /// Mini-batch loss before each update, in order.
    pub batch_losses: Vec<f64>,
}

/// Adam over shuffled mini-batches; the final partial batch of each epoch
/// is dropped. Deterministic for a fixed seed.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    if config.batch_size == 0 || config.batch_size > dataset.len() {
        return Err(Error::Invalid(format!(
            "batch size {} does not fit a dataset of {}",
            config.batch_size,
            dataset.len()
        )));
    }
    let mut dims = vec![input_dim(dataset.n, dataset.m)];
    dims.extend(&config.hidden);
    dims.push(dataset.q);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::glorot(&dims, &mut rng)?;
    let wrap = |params: MlpParams| RadiusModel {
        version: MODEL_VERSION,
        n: dataset.n,
        m: dataset.m,
        constellation_order: dataset.constellation_order,
        snr_db: dataset.snr_db,
        q: dataset.q,
        params,
        norm_stats: dataset.norm_stats.clone(),
        radius_scale: dataset.radius_scale,
    };
    let initial = wrap(params.clone());
    let samples = dataset.samples()?;
    let mut state = AdamState::new(&params, config.eta, config.beta1, config.beta2, config.eps);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batches = samples.len() / config.batch_size;
    let mut batch_losses = Vec::with_capacity(batches * config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for b in 0..batches {
            batch.clear();
            batch.extend(
                order[b * config.batch_size..(b + 1) * config.batch_size]
                    .iter()
                    .map(|&i| samples[i].clone()),
            );
            batch_losses.push(mse_minibatch_loss(&params, &batch)?);
            let g = gradient(&params, &batch)?;
            adam_step(&mut params, &mut state, &g)?;
        }
    }
    Ok(TrainOutput {
        model: wrap(params),
        initial,
        batch_losses,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Numeric(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}
