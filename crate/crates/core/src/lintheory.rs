//! Fixed-design linear regression laboratory.
//!
//! Closed-form prediction variance in the under- and over-parameterized
//! regimes, the gradient-descent minimum-distance solution, and Monte Carlo
//! estimates that re-derive the closed forms empirically through the same
//! grid machinery the network experiments use. The closed forms and the MC
//! estimates validate each other.

use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{self, EstimatorError, PredictionGrid};
use crate::numkit::{project_rowspace, Matrix, NumError, RngStream, DEFAULT_RANK_TOL};

#[derive(Debug, Error)]
pub enum LinError {
    #[error("design is over-parameterized (N={n} > m={m}); use the over-parameterized form")]
    NotUnderParameterized { n: usize, m: usize },
    #[error("design is under-parameterized (N={n} <= m={m}); use the under-parameterized form")]
    NotOverParameterized { n: usize, m: usize },
    #[error("covariance X^T X is singular (rank {rank} < N={n})")]
    SingularSigma { rank: usize, n: usize },
    #[error("probe vector has length {got}, design has {want} features")]
    ProbeLength { got: usize, want: usize },
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("gradient descent diverged at iteration {iter}")]
    Diverged { iter: usize },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Fixed design matrix `X` (m x N), true weights, and label-noise scale.
/// Labels are `y = X theta_true + eps` with `eps ~ N(0, noise_sd^2 I)`.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    x: Matrix,
    theta_true: Vec<f64>,
    noise_sd: f64,
}

impl LinearDesign {
    pub fn new(x: Matrix, theta_true: Vec<f64>, noise_sd: f64) -> Result<Self, LinError> {
        if theta_true.len() != x.cols() {
            return Err(LinError::InvalidDesign(format!(
                "theta has {} entries, design has {} columns",
                theta_true.len(),
                x.cols()
            )));
        }
        if !theta_true.iter().all(|v| v.is_finite()) {
            return Err(LinError::InvalidDesign("non-finite theta".into()));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(LinError::InvalidDesign(format!(
                "noise_sd must be finite and >= 0, got {noise_sd}"
            )));
        }
        Ok(Self {
            x,
            theta_true,
            noise_sd,
        })
    }

    pub fn design(&self) -> &Matrix {
        &self.x
    }

    pub fn theta_true(&self) -> &[f64] {
        &self.theta_true
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    /// Number of training examples.
    pub fn m(&self) -> usize {
        self.x.rows()
    }

    /// Number of parameters / input dimension.
    pub fn n(&self) -> usize {
        self.x.cols()
    }

    /// Rank of the design at the shared tolerance.
    pub fn rank(&self) -> usize {
        self.x.svd().rank(DEFAULT_RANK_TOL)
    }

    /// One vector of noisy labels `X theta + eps`.
    pub fn sample_labels(&self, stream: &mut RngStream) -> Result<Vec<f64>, LinError> {
        let clean = self.x.matvec(&self.theta_true)?;
        let noise = stream.gaussian(self.m(), 0.0, self.noise_sd * self.noise_sd)?;
        Ok(clean.iter().zip(&noise).map(|(c, e)| c + e).collect())
    }
}

/// Under-parameterized (`N <= m`, invertible covariance) prediction variance
/// at a fixed probe: `sigma_eps^2 * x^T Sigma^{-1} x`.
pub fn closed_form_variance_under(design: &LinearDesign, probe: &[f64]) -> Result<f64, LinError> {
    if probe.len() != design.n() {
        return Err(LinError::ProbeLength {
            got: probe.len(),
            want: design.n(),
        });
    }
    if design.n() > design.m() {
        return Err(LinError::NotUnderParameterized {
            n: design.n(),
            m: design.m(),
        });
    }
    let rank = design.rank();
    if rank < design.n() {
        return Err(LinError::SingularSigma {
            rank,
            n: design.n(),
        });
    }
    let sigma_inv = design.x.gram().pinv(DEFAULT_RANK_TOL)?;
    let sx = sigma_inv.matvec(probe)?;
    let quad: f64 = probe.iter().zip(&sx).map(|(a, b)| a * b).sum();
    Ok(design.noise_sd * design.noise_sd * quad)
}

/// The two variance contributions in the over-parameterized regime
/// (`N > m`): one from where initialization lands in the null space, one
/// from label noise passed through the pseudoinverse.
#[derive(Debug, Clone, Copy)]
pub struct OverVariance {
    /// `||P_perp(x)||^2 / N`
    pub var_init: f64,
    /// `sigma_eps^2 * x^T Sigma^+ x`
    pub var_noise: f64,
}

impl OverVariance {
    pub fn total(&self) -> f64 {
        self.var_init + self.var_noise
    }
}

pub fn closed_form_variance_over(
    design: &LinearDesign,
    probe: &[f64],
) -> Result<OverVariance, LinError> {
    if probe.len() != design.n() {
        return Err(LinError::ProbeLength {
            got: probe.len(),
            want: design.n(),
        });
    }
    if design.n() <= design.m() {
        return Err(LinError::NotOverParameterized {
            n: design.n(),
            m: design.m(),
        });
    }
    let (_, orth) = project_rowspace(probe, &design.x, DEFAULT_RANK_TOL)?;
    let var_init = crate::numkit::neumaier_sum(&orth.iter().map(|v| v * v).collect::<Vec<f64>>())
        / design.n() as f64;
    let sigma_pinv = design.x.gram().pinv(DEFAULT_RANK_TOL)?;
    let sx = sigma_pinv.matvec(probe)?;
    let quad: f64 = probe.iter().zip(&sx).map(|(a, b)| a * b).sum();
    Ok(OverVariance {
        var_init,
        var_noise: design.noise_sd * design.noise_sd * quad,
    })
}

/// The point gradient descent converges to from `theta0`:
/// `P_perp(theta0) + Sigma^+ X^T y`. Closed-form counterpart of
/// [`gd_solution`].
pub fn min_distance_solution(
    design: &LinearDesign,
    y: &[f64],
    theta0: &[f64],
) -> Result<Vec<f64>, LinError> {
    if y.len() != design.m() || theta0.len() != design.n() {
        return Err(LinError::InvalidArg(format!(
            "expected y of length {} and theta0 of length {}",
            design.m(),
            design.n()
        )));
    }
    let (_, null_part) = project_rowspace(theta0, &design.x, DEFAULT_RANK_TOL)?;
    let xty = design.x.transpose().matvec(y)?;
    let fit = design.x.gram().pinv(DEFAULT_RANK_TOL)?.matvec(&xty)?;
    Ok(null_part.iter().zip(&fit).map(|(a, b)| a + b).collect())
}

/// Step size guaranteed to contract: `1 / lambda_max(X^T X)`, found by
/// power iteration.
pub fn default_gd_step(design: &LinearDesign) -> f64 {
    let lambda = design.x.gram_spectral_max();
    if lambda <= 0.0 {
        1.0
    } else {
        1.0 / lambda
    }
}

fn gd_iterate(
    design: &LinearDesign,
    y: &[f64],
    theta0: &[f64],
    step: f64,
    iters: usize,
    mut observe: impl FnMut(&[f64]),
) -> Result<Vec<f64>, LinError> {
    if y.len() != design.m() || theta0.len() != design.n() {
        return Err(LinError::InvalidArg(format!(
            "expected y of length {} and theta0 of length {}",
            design.m(),
            design.n()
        )));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(LinError::InvalidArg(format!(
            "step must be positive and finite, got {step}"
        )));
    }
    if iters == 0 {
        return Err(LinError::InvalidArg("iters must be >= 1".into()));
    }
    // Full-batch gradient descent on (1/2)||X theta - y||^2.
    let mut theta = theta0.to_vec();
    for iter in 0..iters {
        let residual: Vec<f64> = design
            .x
            .matvec(&theta)?
            .iter()
            .zip(y)
            .map(|(p, t)| p - t)
            .collect();
        let grad = design.x.transpose().matvec(&residual)?;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(LinError::Diverged { iter });
        }
        observe(&theta);
    }
    Ok(theta)
}

/// Plain full-batch gradient descent on the squared loss; returns the final
/// iterate. Converges to [`min_distance_solution`] when
/// `step < 2 / lambda_max(Sigma)`.
pub fn gd_solution(
    design: &LinearDesign,
    y: &[f64],
    theta0: &[f64],
    step: f64,
    iters: usize,
) -> Result<Vec<f64>, LinError> {
    gd_iterate(design, y, theta0, step, iters, |_| {})
}

/// As [`gd_solution`], but returns every iterate (the initial point is not
/// included).
pub fn gd_path(
    design: &LinearDesign,
    y: &[f64],
    theta0: &[f64],
    step: f64,
    iters: usize,
) -> Result<Vec<Vec<f64>>, LinError> {
    let mut path = Vec::with_capacity(iters);
    gd_iterate(design, y, theta0, step, iters, |theta| {
        path.push(theta.to_vec())
    })?;
    Ok(path)
}

/// Monte Carlo variance decomposition at a probe point.
#[derive(Debug, Clone, Copy)]
pub struct McVariance {
    pub var_total: f64,
    /// `E_noise Var_init`, the optimization-style term.
    pub var_init_term: f64,
    /// `Var_noise E_init`, the sampling-style term.
    pub var_noise_term: f64,
}

/// Estimate the prediction variance and its split empirically: draw label
/// noise per replicate and a fresh `theta0 ~ N(0, I/N)` per cell, map each
/// pair through the minimum-distance solution, and decompose the resulting
/// (noise x init) grid with the estimators module.
///
/// Initialization draws are independent across cells, which concentrates
/// the within-replicate variance at rate `1/(n_noise * n_init)` but leaks
/// `var_init / n_init` into the plug-in between-replicate term. Both plug-in
/// terms are therefore debiased with the one-way ANOVA corrections before
/// being returned; `var_total` is the sum of the two corrected terms.
///
/// Predictions reduce to `theta0 . P_perp(x) + y . (X Sigma^+ x)`, so each
/// cell costs O(N).
pub fn mc_variance(
    design: &LinearDesign,
    probe: &[f64],
    n_noise: usize,
    n_init: usize,
    seeds: &RngStream,
) -> Result<McVariance, LinError> {
    if probe.len() != design.n() {
        return Err(LinError::ProbeLength {
            got: probe.len(),
            want: design.n(),
        });
    }
    if n_noise < 2 || n_init < 2 {
        return Err(LinError::InvalidArg(format!(
            "need at least 2 draws per axis, got {n_noise}x{n_init}"
        )));
    }
    let n = design.n();
    let (_, probe_null) = project_rowspace(probe, &design.x, DEFAULT_RANK_TOL)?;
    // w = X Sigma^+ x, so that x^T Sigma^+ X^T y = w . y.
    let sigma_pinv = design.x.gram().pinv(DEFAULT_RANK_TOL)?;
    let w = design.x.matmul(&sigma_pinv)?.matvec(probe)?;
    let clean = design.x.matvec(&design.theta_true)?;
    let init_var = 1.0 / n as f64;

    let values: Vec<f64> = (0..n_noise)
        .into_par_iter()
        .flat_map_iter(|s| {
            let mut noise_stream = seeds.derive(&format!("noise/s{s}"));
            let mut init_stream = seeds.derive(&format!("init/s{s}"));
            let eps = noise_stream
                .gaussian(design.m(), 0.0, design.noise_sd * design.noise_sd)
                .expect("validated variance");
            let fit_part: f64 = w
                .iter()
                .zip(clean.iter().zip(&eps))
                .map(|(wi, (c, e))| wi * (c + e))
                .sum();
            let probe_null = probe_null.clone();
            (0..n_init).map(move |_| {
                let theta0 = init_stream
                    .gaussian(n, 0.0, init_var)
                    .expect("validated variance");
                let null_part: f64 = theta0.iter().zip(&probe_null).map(|(a, b)| a * b).sum();
                null_part + fit_part
            })
        })
        .collect();

    let target: f64 = probe
        .iter()
        .zip(&design.theta_true)
        .map(|(a, b)| a * b)
        .sum();
    let grid = PredictionGrid::from_values(
        n_noise,
        n_init,
        1,
        1,
        values,
        Matrix::new(1, 1, vec![target])?,
    )?;
    let (plug_opt, plug_samp) = estimators::decompose_variance(&grid)?;
    let var_init_term = plug_opt * n_init as f64 / (n_init - 1) as f64;
    let var_noise_term = (plug_samp * n_noise as f64 / (n_noise - 1) as f64
        - var_init_term / n_init as f64)
        .max(0.0);
    Ok(McVariance {
        var_total: var_init_term + var_noise_term,
        var_init_term,
        var_noise_term,
    })
}
