//! Gaussian process regression with a Matérn ν = 7/2 kernel.
//!
//! Fitting factors `K(X, X) + σ_n² I = L Lᵀ` once and caches
//! `α = Lᵀ \ (L \ y)`. Prediction then costs one kernel row and one
//! triangular solve per test point, returning the mean and the marginal
//! (diagonal) variance of the latent function.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("Cholesky factorization failed: kernel matrix is not positive definite")]
    CholeskyFailure,
    #[error("training set is empty")]
    Empty,
    #[error("{x} inputs but {y} labels")]
    DimensionMismatch { x: usize, y: usize },
    #[error("hyperparameter search needs at least 2 points, got {0}")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, GpError>;

/// Test points handled per block during prediction.
const PREDICT_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Lengthscale in meters.
    pub lengthscale: f64,
    /// Signal standard deviation; the prior variance is its square.
    pub signal_std: f64,
    /// Observation noise standard deviation.
    pub noise_std: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            signal_std: 1.0,
            noise_std: 0.1,
        }
    }
}

impl KernelParams {
    pub fn signal_var(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    fn to_log(self) -> [f64; 3] {
        [
            self.lengthscale.ln(),
            self.signal_std.ln(),
            self.noise_std.ln(),
        ]
    }

    fn from_log(t: [f64; 3]) -> Self {
        Self {
            lengthscale: t[0].exp(),
            signal_std: t[1].exp(),
            noise_std: t[2].exp(),
        }
    }
}

#[inline]
fn matern72_of_distance(dist: f64, p: &KernelParams) -> f64 {
    let r = 7f64.sqrt() * dist / p.lengthscale;
    p.signal_var() * (1.0 + r + 0.4 * r * r + r * r * r / 15.0) * (-r).exp()
}

/// Matérn 7/2 covariance between two points.
#[inline]
pub fn matern72(a: Point, b: Point, p: &KernelParams) -> f64 {
    matern72_of_distance((a[0] - b[0]).hypot(a[1] - b[1]), p)
}

/// Dense covariance matrix with entry `(i, j) = k(a_i, b_j)`.
pub fn kernel_matrix(a: &[Point], b: &[Point], p: &KernelParams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| matern72(a[i], b[j], p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// A fitted regression model. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Point>,
    y: Vec<f64>,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    params: KernelParams,
}

/// Factors the noisy kernel matrix of the training set.
pub fn fit(x: &[Point], y: &[f64], params: KernelParams) -> Result<GpModel> {
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.is_empty() {
        return Err(GpError::Empty);
    }
    let mut k = kernel_matrix(x, x, &params);
    let noise = params.noise_var();
    for i in 0..x.len() {
        k[(i, i)] += noise;
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(GpError::CholeskyFailure);
    }
    let chol = k.cholesky().ok_or(GpError::CholeskyFailure)?;
    let l = chol.unpack();
    let mut alpha = DVector::from_column_slice(y);
    if !l.solve_lower_triangular_mut(&mut alpha) || !l.tr_solve_lower_triangular_mut(&mut alpha) {
        return Err(GpError::CholeskyFailure);
    }
    Ok(GpModel {
        x: x.to_vec(),
        y: y.to_vec(),
        l,
        alpha,
        params,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &[Point] {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    /// Lower Cholesky factor of `K(X, X) + σ_n² I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn predict_block(&self, xs: &[Point], mu: &mut [f64], var: &mut [f64]) {
        let mut kxs = kernel_matrix(&self.x, xs, &self.params);
        for (j, col) in kxs.column_iter().enumerate() {
            mu[j] = col.dot(&self.alpha);
        }
        // columns become v = L \ k(X, x*)
        self.l.solve_lower_triangular_unchecked_mut(&mut kxs);
        let prior = self.params.signal_var();
        for (j, col) in kxs.column_iter().enumerate() {
            let v = prior - col.norm_squared();
            debug_assert!(v >= -1e-9, "predicted variance {v} is negative beyond round-off");
            var[j] = v.max(0.0);
        }
    }

    /// Posterior mean and marginal variance at each test point.
    pub fn predict(&self, xs: &[Point]) -> Prediction {
        let mut mu = vec![0.0; xs.len()];
        let mut var = vec![0.0; xs.len()];
        for ((pts, m), v) in xs
            .chunks(PREDICT_BLOCK)
            .zip(mu.chunks_mut(PREDICT_BLOCK))
            .zip(var.chunks_mut(PREDICT_BLOCK))
        {
            self.predict_block(pts, m, v);
        }
        Prediction { mu, var }
    }

    /// Same result as [`predict`](Self::predict), bit for bit, computed on
    /// the current rayon pool.
    pub fn predict_par(&self, xs: &[Point]) -> Prediction {
        let mut mu = vec![0.0; xs.len()];
        let mut var = vec![0.0; xs.len()];
        xs.par_chunks(PREDICT_BLOCK)
            .zip(mu.par_chunks_mut(PREDICT_BLOCK))
            .zip(var.par_chunks_mut(PREDICT_BLOCK))
            .for_each(|((pts, m), v)| self.predict_block(pts, m, v));
        Prediction { mu, var }
    }

    /// `-½ yᵀα - Σ log L_ii - (n/2) log 2π`
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let data_fit: f64 = self.y.iter().zip(self.alpha.iter()).map(|(y, a)| y * a).sum();
        let log_det_half: f64 = self.l.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * data_fit - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Bounds of the hyperparameter search, in raw (not log) units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub lengthscale: (f64, f64),
    pub signal_std: (f64, f64),
    pub noise_std: (f64, f64),
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            lengthscale: (1e-2, 1e2),
            signal_std: (1e-2, 1e2),
            noise_std: (1e-4, 1e1),
        }
    }
}

impl SearchBox {
    fn clamp_log(&self, t: [f64; 3]) -> [f64; 3] {
        let b = [self.lengthscale, self.signal_std, self.noise_std];
        std::array::from_fn(|i| t[i].clamp(b[i].0.ln(), b[i].1.ln()))
    }
}

fn objective(x: &[Point], y: &[f64], p: KernelParams) -> f64 {
    match fit(x, y, p) {
        Ok(m) => {
            let v = m.log_marginal_likelihood();
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Derivative-free maximization of the log marginal likelihood.
///
/// Coordinate pattern search in log-parameter space: each sweep tries a
/// step up and down along lengthscale, signal and noise, moving on the
/// first improvement; a sweep without improvement halves the step. At most
/// `budget` likelihood evaluations are spent, the first on `init`, and the
/// result never scores below `init`.
pub fn optimize_hyperparams(
    x: &[Point],
    y: &[f64],
    init: KernelParams,
    budget: usize,
) -> Result<KernelParams> {
    optimize_hyperparams_in(x, y, init, budget, &SearchBox::default())
}

pub fn optimize_hyperparams_in(
    x: &[Point],
    y: &[f64],
    init: KernelParams,
    budget: usize,
    bounds: &SearchBox,
) -> Result<KernelParams> {
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(GpError::TooFewPoints(x.len()));
    }
    if budget == 0 {
        return Ok(init);
    }
    let mut best_params = init;
    let mut best = objective(x, y, init);
    let mut evals = 1;
    let mut theta = init.to_log();
    let mut step = 1.0;
    while evals < budget && step > 1e-3 {
        let mut improved = false;
        'coords: for coord in 0..3 {
            for dir in [1.0, -1.0] {
                if evals >= budget {
                    break 'coords;
                }
                let mut cand = theta;
                cand[coord] += dir * step;
                let cand = bounds.clamp_log(cand);
                if cand[coord] == theta[coord] {
                    continue;
                }
                let params = KernelParams::from_log(cand);
                let value = objective(x, y, params);
                evals += 1;
                if value > best {
                    best = value;
                    best_params = params;
                    theta = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best_params)
}
