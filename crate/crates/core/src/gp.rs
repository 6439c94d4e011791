//! Exact Gaussian-process regression with a squared-exponential (RBF) kernel.
//!
//! Hyperparameters are fit by fixed-step gradient descent on the negative log
//! marginal likelihood in log-parameter space. Targets are centred on their
//! mean before conditioning and the mean is added back on prediction.

use thiserror::Error;

use crate::domain::{Dataset, Point, PosteriorField};

/// Gradient-descent step in log-parameter space.
pub const LOG_STEP: f64 = 0.1;
/// Step halvings tried before an iteration is abandoned.
pub const MAX_HALVINGS: usize = 10;
/// Jitter is escalated ×10 on factorization failure, up to this value.
pub const MAX_JITTER: f64 = 1e-2;
pub const DEFAULT_ITERATIONS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("kernel matrix is not positive definite (jitter tried: {attempted:?})")]
    NotPositiveDefinite { attempted: Vec<f64> },
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub length_scale: f64,
    pub output_scale: f64,
    /// Fixed diagonal term added to the training covariance.
    pub noise_jitter: f64,
}

impl KernelParams {
    /// Length scale 1, output scale = variance of `values` (floor 1e-4),
    /// jitter 1e-6.
    pub fn initial_for(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { length_scale: 1.0, output_scale: var.max(1e-4), noise_jitter: 1e-6 }
    }

    fn validate(&self) -> Result<(), GpError> {
        let ok = self.length_scale.is_finite()
            && self.length_scale > 0.0
            && self.output_scale.is_finite()
            && self.output_scale > 0.0
            && self.noise_jitter.is_finite()
            && self.noise_jitter >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// `output_scale · exp(−‖a − b‖² / (2·length_scale²))`
pub fn rbf_kernel(a: Point, b: Point, params: &KernelParams) -> f64 {
    params.output_scale * (-a.distance_squared(&b) / (2.0 * params.length_scale * params.length_scale)).exp()
}

/// In-place lower Cholesky factor of a row-major `n×n` SPD matrix.
/// Returns `false` if a pivot is not strictly positive.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let row_j = &a[j * n..j * n + j];
        let d = a[j * n + j] - row_j.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0 && d.is_finite()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let dot: f64 = a[i * n..i * n + j].iter().zip(&a[j * n..j * n + j]).map(|(x, y)| x * y).sum();
            a[i * n + j] = (a[i * n + j] - dot) / d;
        }
    }
    for i in 0..n {
        for v in &mut a[i * n + i + 1..(i + 1) * n] {
            *v = 0.0;
        }
    }
    true
}

/// Solves `L x = b` in place.
fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Pairwise squared distances, row-major.
fn squared_distances(inputs: &[Point]) -> Vec<f64> {
    let n = inputs.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = inputs[i].distance_squared(&inputs[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Factorized state of the training covariance at one parameter setting.
struct Conditioned {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    nlml: f64,
}

fn condition(sq: &[f64], centred: &[f64], params: &KernelParams) -> Option<Conditioned> {
    let n = centred.len();
    let inv_two_l2 = 1.0 / (2.0 * params.length_scale * params.length_scale);
    let mut k: Vec<f64> = sq.iter().map(|d| params.output_scale * (-d * inv_two_l2).exp()).collect();
    for i in 0..n {
        k[i * n + i] += params.noise_jitter;
    }
    if !cholesky_in_place(&mut k, n) {
        return None;
    }
    let mut alpha = centred.to_vec();
    forward_solve(&k, n, &mut alpha);
    let data_fit: f64 = alpha.iter().map(|v| v * v).sum();
    backward_solve(&k, n, &mut alpha);
    let log_det: f64 = (0..n).map(|i| k[i * n + i].ln()).sum();
    let nlml = 0.5 * data_fit + log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    nlml.is_finite().then_some(Conditioned { chol: k, alpha, nlml })
}

/// Gradient of the NLML with respect to `(ln length_scale, ln output_scale)`:
/// `½·tr((K⁻¹ − ααᵀ)·∂K)`.
fn log_param_gradient(sq: &[f64], state: &Conditioned, params: &KernelParams) -> [f64; 2] {
    let n = state.alpha.len();
    let l = &state.chol;
    // rows of L⁻¹ by forward substitution, then stored transposed so that
    // (K⁻¹)_ij = Σ_{k ≥ max(i,j)} U_ik U_jk reads contiguous rows
    let mut linv = vec![0.0; n * n];
    for i in 0..n {
        let (done, rest) = linv.split_at_mut(i * n);
        let row = &mut rest[..n];
        row[i] = 1.0;
        for k in 0..i {
            let c = l[i * n + k];
            if c != 0.0 {
                for (r, v) in row[..=k].iter_mut().zip(&done[k * n..k * n + k + 1]) {
                    *r -= c * v;
                }
            }
        }
        let d = l[i * n + i];
        for r in &mut row[..=i] {
            *r /= d;
        }
    }
    let mut u = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..=k {
            u[i * n + k] = linv[k * n + i];
        }
    }
    let inv_l2 = 1.0 / (params.length_scale * params.length_scale);
    let mut g_len = 0.0;
    let mut g_out = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let kinv: f64 = u[i * n + i..(i + 1) * n].iter().zip(&u[j * n + i..(j + 1) * n]).map(|(a, b)| a * b).sum();
            let w = kinv - state.alpha[i] * state.alpha[j];
            let d = sq[i * n + j];
            let kf = params.output_scale * (-0.5 * d * inv_l2).exp();
            let weight = if i == j { 1.0 } else { 2.0 };
            g_out += weight * w * kf;
            g_len += weight * w * kf * d * inv_l2;
        }
    }
    [0.5 * g_len, 0.5 * g_out]
}

/// A conditioned GP: kernel parameters plus the cached Cholesky factor of
/// `K + jitter·I` and `α = (K + jitter·I)⁻¹·(y − ȳ)`.
#[derive(Debug, Clone)]
pub struct GpModel {
    params: KernelParams,
    inputs: Vec<Point>,
    mean: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    nlml: f64,
}

fn centre(values: &[f64]) -> (f64, Vec<f64>) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, values.iter().map(|v| v - mean).collect())
}

/// Fits kernel hyperparameters by `iterations` steps of gradient descent on
/// the NLML and returns the model conditioned on the final parameters.
///
/// A step that raises the NLML is halved up to [`MAX_HALVINGS`] times; if no
/// halving helps the optimization stops, so the returned NLML never exceeds
/// the initial one.
pub fn fit(training: &Dataset, init: KernelParams, iterations: usize) -> Result<GpModel, GpError> {
    if training.is_empty() {
        return Err(GpError::EmptyTraining);
    }
    init.validate()?;
    let inputs = training.positions();
    let (mean, centred) = centre(&training.values());
    let sq = squared_distances(&inputs);

    let mut params = init;
    let mut attempted = Vec::new();
    let mut state = loop {
        attempted.push(params.noise_jitter);
        if let Some(state) = condition(&sq, &centred, &params) {
            break state;
        }
        let next = if params.noise_jitter > 0.0 { params.noise_jitter * 10.0 } else { 1e-10 };
        if next > MAX_JITTER * (1.0 + 1e-12) {
            return Err(GpError::NotPositiveDefinite { attempted });
        }
        params.noise_jitter = next;
    };

    let mut theta = [params.length_scale.ln(), params.output_scale.ln()];
    for _ in 0..iterations {
        let grad = log_param_gradient(&sq, &state, &params);
        if !(grad[0].is_finite() && grad[1].is_finite()) {
            break;
        }
        let mut step = LOG_STEP;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = [theta[0] - step * grad[0], theta[1] - step * grad[1]];
            let cand_params = KernelParams {
                length_scale: cand[0].exp(),
                output_scale: cand[1].exp(),
                noise_jitter: params.noise_jitter,
            };
            if cand_params.validate().is_ok() {
                if let Some(s) = condition(&sq, &centred, &cand_params) {
                    if s.nlml <= state.nlml {
                        accepted = Some((cand, cand_params, s));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, cand_params, s)) => {
                theta = cand;
                params = cand_params;
                state = s;
            }
            None => break,
        }
    }

    Ok(GpModel {
        params,
        inputs,
        mean,
        chol: state.chol,
        alpha: state.alpha,
        nlml: state.nlml,
    })
}

impl GpModel {
    /// Conditions on `training` at fixed `params` (no optimization).
    pub fn condition(training: &Dataset, params: KernelParams) -> Result<Self, GpError> {
        fit(training, params, 0)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn training_mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Lower Cholesky factor of `K + jitter·I`, row-major.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    /// `½·(y−ȳ)ᵀα + Σ log Lᵢᵢ + (n/2)·log 2π`
    pub fn nlml(&self) -> f64 {
        self.nlml
    }

    /// NLML gradient with respect to `(ln length_scale, ln output_scale)`.
    pub fn nlml_gradient(&self) -> [f64; 2] {
        let sq = squared_distances(&self.inputs);
        let state = Conditioned { chol: self.chol.clone(), alpha: self.alpha.clone(), nlml: self.nlml };
        log_param_gradient(&sq, &state, &self.params)
    }

    /// Posterior mean and marginal variance at each target, in target order.
    pub fn predict(&self, targets: &[Point]) -> PosteriorField {
        let n = self.inputs.len();
        let mut means = Vec::with_capacity(targets.len());
        let mut variances = Vec::with_capacity(targets.len());
        let mut kstar = vec![0.0; n];
        for t in targets {
            for (k, x) in kstar.iter_mut().zip(&self.inputs) {
                *k = rbf_kernel(*t, *x, &self.params);
            }
            let mu: f64 = kstar.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
            forward_solve(&self.chol, n, &mut kstar);
            let explained: f64 = kstar.iter().map(|v| v * v).sum();
            means.push(self.mean + mu);
            variances.push(self.params.output_scale - explained);
        }
        PosteriorField::new(means, variances)
    }
}
