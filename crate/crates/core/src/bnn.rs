//! Fully connected sigmoid network with MC-dropout predictive uncertainty.
//!
//! Architecture is fixed at 2 → 50 → 50 → 50 → 1. Dropout acts on hidden
//! activations only (inverted dropout), and the same per-neuron mask is
//! shared by every row of a batch within one pass.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::domain::{Dataset, GridSpec, Point, PosteriorField};

pub const LAYER_SIZES: [usize; 5] = [2, 50, 50, 50, 1];
pub const HIDDEN_LAYERS: usize = 3;
pub const DEFAULT_DROPOUT: f64 = 0.01;
pub const DEFAULT_L2: f64 = 1e-5;
pub const DEFAULT_EPOCHS: usize = 10_000;
pub const DEFAULT_MC_PASSES: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BnnError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Keep/drop flag per hidden neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<Vec<bool>>,
}

impl DropoutMask {
    pub fn all_kept() -> Self {
        Self { keep: LAYER_SIZES[1..=HIDDEN_LAYERS].iter().map(|&n| vec![true; n]).collect() }
    }

    /// Each hidden neuron is dropped independently with probability `rate`.
    pub fn sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Self {
        let keep = LAYER_SIZES[1..=HIDDEN_LAYERS]
            .iter()
            .map(|&n| (0..n).map(|_| rng.random::<f64>() >= rate).collect())
            .collect();
        Self { keep }
    }

    pub fn set(&mut self, layer: usize, unit: usize, kept: bool) {
        self.keep[layer][unit] = kept;
    }

    pub fn is_kept(&self, layer: usize, unit: usize) -> bool {
        self.keep[layer][unit]
    }
}

/// Per-layer weight matrices `(fan_in × fan_out)` and bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub dropout_rate: f64,
    pub l2_weight: f64,
}

/// Gradient of the training loss, shaped like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Glorot-uniform weights, zero biases, default dropout and L2 weight.
pub fn init_network<R: Rng + ?Sized>(rng: &mut R) -> NetworkParams {
    init_network_with(rng, DEFAULT_DROPOUT, DEFAULT_L2)
}

pub fn init_network_with<R: Rng + ?Sized>(rng: &mut R, dropout_rate: f64, l2_weight: f64) -> NetworkParams {
    let mut weights = Vec::with_capacity(4);
    let mut biases = Vec::with_capacity(4);
    for w in LAYER_SIZES.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng)));
        biases.push(Array1::zeros(fan_out));
    }
    NetworkParams { weights, biases, dropout_rate, l2_weight }
}

/// Rows of `[x1, x2]`.
pub fn input_matrix(points: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, j)| if j == 0 { points[i].x1 } else { points[i].x2 })
}

struct Activations {
    /// Sigmoid outputs before masking, one per hidden layer.
    sig: Vec<Array2<f64>>,
    /// Inputs to each layer (the batch, then masked hidden activations).
    inputs: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl NetworkParams {
    pub fn zeros(dropout_rate: f64, l2_weight: f64) -> Self {
        Self {
            weights: LAYER_SIZES.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: LAYER_SIZES[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            dropout_rate,
            l2_weight,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flattened parameters: `W0, b0, W1, b1, …` with weights row-major.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *it.next().unwrap());
        }
    }

    /// Per-layer activation multipliers: 0 for dropped units,
    /// `1/(1 − rate)` for kept ones. `None` means a deterministic pass.
    fn multipliers(&self, mask: Option<&DropoutMask>) -> Option<Vec<Array1<f64>>> {
        let mask = mask?;
        if self.dropout_rate == 0.0 {
            return None;
        }
        let scale = 1.0 / (1.0 - self.dropout_rate);
        Some(
            mask.keep
                .iter()
                .map(|layer| layer.iter().map(|&k| if k { scale } else { 0.0 }).collect())
                .collect(),
        )
    }

    fn run(&self, inputs: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Activations {
        let mult = self.multipliers(mask);
        let mut layer_inputs = Vec::with_capacity(HIDDEN_LAYERS + 1);
        let mut sig = Vec::with_capacity(HIDDEN_LAYERS);
        let mut a = inputs.to_owned();
        for l in 0..HIDDEN_LAYERS {
            let mut z = a.dot(&self.weights[l]);
            z += &self.biases[l];
            z.mapv_inplace(sigmoid);
            let mut next = z.clone();
            if let Some(m) = &mult {
                next *= &m[l];
            }
            layer_inputs.push(a);
            sig.push(z);
            a = next;
        }
        let out = a.dot(&self.weights[HIDDEN_LAYERS]).index_axis_move(Axis(1), 0) + self.biases[HIDDEN_LAYERS][0];
        layer_inputs.push(a);
        Activations { sig, inputs: layer_inputs, output: out }
    }

    /// Scalar output for one input; `mask = None` is a deterministic pass.
    pub fn forward(&self, r: Point, mask: Option<&DropoutMask>) -> f64 {
        self.run(input_matrix(&[r]).view(), mask).output[0]
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Array1<f64> {
        self.run(inputs, mask).output
    }

    fn l2_penalty(&self) -> f64 {
        self.l2_weight * self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
    }

    /// `mean((ŷ − y)²) + l2_weight·Σ‖W‖²` (biases unpenalized).
    pub fn loss(&self, inputs: ArrayView2<f64>, targets: &[f64], mask: Option<&DropoutMask>) -> f64 {
        let out = self.forward_batch(inputs, mask);
        let n = targets.len() as f64;
        out.iter().zip(targets).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / n + self.l2_penalty()
    }

    pub fn loss_and_gradient(
        &self,
        inputs: ArrayView2<f64>,
        targets: &[f64],
        mask: Option<&DropoutMask>,
    ) -> (f64, Gradients) {
        let n = targets.len();
        let acts = self.run(inputs, mask);
        let mult = self.multipliers(mask);
        let residual: Array1<f64> = acts.output.iter().zip(targets).map(|(o, y)| o - y).collect();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n as f64 + self.l2_penalty();

        let mut gw = vec![Array2::zeros((0, 0)); HIDDEN_LAYERS + 1];
        let mut gb = vec![Array1::zeros(0); HIDDEN_LAYERS + 1];

        let mut delta = (residual * (2.0 / n as f64)).insert_axis(Axis(1));
        for l in (0..=HIDDEN_LAYERS).rev() {
            let mut g = acts.inputs[l].t().dot(&delta);
            g.scaled_add(2.0 * self.l2_weight, &self.weights[l]);
            gw[l] = g;
            gb[l] = delta.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            // back through layer l−1's mask and sigmoid
            let mut d_prev = delta.dot(&self.weights[l].t());
            if let Some(m) = &mult {
                d_prev *= &m[l - 1];
            }
            Zip::from(&mut d_prev).and(&acts.sig[l - 1]).for_each(|d, &s| *d *= s * (1.0 - s));
            delta = d_prev;
        }
        (loss, Gradients { weights: gw, biases: gb })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    GradientDescent,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub mc_passes: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            mc_passes: DEFAULT_MC_PASSES,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BnnError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(BnnError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.mc_passes == 0 {
            return Err(BnnError::InvalidConfig("mc_passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Applies one optimizer update to every parameter.
struct Stepper {
    optimizer: Optimizer,
    lr: f64,
    t: i32,
    m: Option<Gradients>,
    v: Option<Gradients>,
}

impl Stepper {
    fn new(optimizer: Optimizer, lr: f64, net: &NetworkParams) -> Self {
        let zeros = || Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        let (m, v) = match optimizer {
            Optimizer::Adam { .. } => (Some(zeros()), Some(zeros())),
            Optimizer::GradientDescent => (None, None),
        };
        Self { optimizer, lr, t: 0, m, v }
    }

    fn step(&mut self, net: &mut NetworkParams, grad: &Gradients) {
        self.t += 1;
        match self.optimizer {
            Optimizer::GradientDescent => {
                for (w, g) in net.weights.iter_mut().zip(&grad.weights) {
                    w.scaled_add(-self.lr, g);
                }
                for (b, g) in net.biases.iter_mut().zip(&grad.biases) {
                    b.scaled_add(-self.lr, g);
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let (m, v) = (self.m.as_mut().unwrap(), self.v.as_mut().unwrap());
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let lr = self.lr;
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                };
                for l in 0..net.weights.len() {
                    Zip::from(&mut net.weights[l])
                        .and(&grad.weights[l])
                        .and(&mut m.weights[l])
                        .and(&mut v.weights[l])
                        .for_each(update);
                    Zip::from(&mut net.biases[l])
                        .and(&grad.biases[l])
                        .and(&mut m.biases[l])
                        .and(&mut v.biases[l])
                        .for_each(update);
                }
            }
        }
    }
}

/// Full-batch training on `training` as given (no rescaling), drawing a
/// fresh dropout mask every epoch.
pub fn train<R: Rng + ?Sized>(
    net: &NetworkParams,
    training: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<NetworkParams, BnnError> {
    if training.is_empty() {
        return Err(BnnError::EmptyTraining);
    }
    cfg.validate()?;
    let inputs = input_matrix(&training.positions());
    let targets = training.values();
    train_arrays(net, inputs.view(), &targets, cfg, rng)
}

pub fn train_arrays<R: Rng + ?Sized>(
    net: &NetworkParams,
    inputs: ArrayView2<f64>,
    targets: &[f64],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<NetworkParams, BnnError> {
    let mut net = net.clone();
    let mut stepper = Stepper::new(cfg.optimizer, cfg.learning_rate, &net);
    for epoch in 0..cfg.epochs {
        let mask = (net.dropout_rate > 0.0).then(|| DropoutMask::sample(net.dropout_rate, rng));
        let (loss, grad) = net.loss_and_gradient(inputs, targets, mask.as_ref());
        if !loss.is_finite() {
            return Err(BnnError::Diverged { epoch, loss });
        }
        stepper.step(&mut net, &grad);
    }
    if !net.is_finite() {
        return Err(BnnError::Diverged { epoch: cfg.epochs, loss: f64::NAN });
    }
    Ok(net)
}

/// Outputs of `passes` stochastic forward passes, shape `(passes, targets)`.
pub fn mc_samples<R: Rng + ?Sized>(net: &NetworkParams, targets: &[Point], passes: usize, rng: &mut R) -> Array2<f64> {
    let x = input_matrix(targets);
    let mut out = Array2::zeros((passes, targets.len()));
    for mut row in out.rows_mut() {
        let mask = DropoutMask::sample(net.dropout_rate, rng);
        row.assign(&net.forward_batch(x.view(), Some(&mask)));
    }
    out
}

/// Predictive mean and unbiased sample variance over `cfg.mc_passes`
/// dropout passes, accumulated with Welford updates.
pub fn predict_mc<R: Rng + ?Sized>(net: &NetworkParams, targets: &[Point], cfg: &TrainConfig, rng: &mut R) -> PosteriorField {
    let x = input_matrix(targets);
    if net.dropout_rate == 0.0 || cfg.mc_passes <= 1 {
        let mask = (net.dropout_rate > 0.0).then(|| DropoutMask::sample(net.dropout_rate, rng));
        let out = net.forward_batch(x.view(), mask.as_ref());
        return PosteriorField::new(out.to_vec(), vec![0.0; targets.len()]);
    }
    let mut mean = vec![0.0; targets.len()];
    let mut m2 = vec![0.0; targets.len()];
    for pass in 0..cfg.mc_passes {
        let mask = DropoutMask::sample(net.dropout_rate, rng);
        let out = net.forward_batch(x.view(), Some(&mask));
        let k = (pass + 1) as f64;
        for ((mu, s), &y) in mean.iter_mut().zip(&mut m2).zip(out.iter()) {
            let d = y - *mu;
            *mu += d / k;
            *s += d * (y - *mu);
        }
    }
    let denom = (cfg.mc_passes - 1) as f64;
    PosteriorField::new(mean, m2.into_iter().map(|s| s / denom).collect())
}

/// Network plus the input and target normalizations used around it.
///
/// Inputs are mapped to `[-1, 1]` per axis from the grid bounds; targets are
/// standardized from the current training set at every fit.
#[derive(Debug, Clone)]
pub struct BnnRegressor {
    net: NetworkParams,
    bounds: GridSpec,
    target_mean: f64,
    target_std: f64,
    warm_start: bool,
}

impl BnnRegressor {
    pub fn new(net: NetworkParams, bounds: GridSpec, warm_start: bool) -> Self {
        Self { net, bounds, target_mean: 0.0, target_std: 1.0, warm_start }
    }

    pub fn network(&self) -> &NetworkParams {
        &self.net
    }

    pub fn normalize(&self, r: Point) -> Point {
        self.bounds.to_unit(r)
    }

    /// Trains on `training`, continuing from the current weights unless
    /// warm starting is off, in which case the network is re-initialized.
    pub fn fit<R: Rng + ?Sized>(&mut self, training: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<(), BnnError> {
        if training.is_empty() {
            return Err(BnnError::EmptyTraining);
        }
        cfg.validate()?;
        let values = training.values();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let scaled: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
        let inputs: Vec<Point> = training.positions().into_iter().map(|p| self.normalize(p)).collect();
        if !self.warm_start {
            self.net = init_network_with(rng, self.net.dropout_rate, self.net.l2_weight);
        }
        self.net = train_arrays(&self.net, input_matrix(&inputs).view(), &scaled, cfg, rng)?;
        self.target_mean = mean;
        self.target_std = std;
        Ok(())
    }

    pub fn predict<R: Rng + ?Sized>(&self, targets: &[Point], cfg: &TrainConfig, rng: &mut R) -> PosteriorField {
        let inputs: Vec<Point> = targets.iter().map(|p| self.normalize(*p)).collect();
        let f = predict_mc(&self.net, &inputs, cfg, rng);
        let s2 = self.target_std * self.target_std;
        PosteriorField::new(
            f.means.iter().map(|m| m * self.target_std + self.target_mean).collect(),
            f.variances.iter().map(|v| v * s2).collect(),
        )
    }
}
