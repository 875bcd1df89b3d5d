//! Executable checks for two provable inequalities: the classification
//! risk is at most four times the regression risk, and the variance of a
//! Lipschitz function of a Gaussian vector is at most `L^2 sigma^2`.
//!
//! The concentration check uses the constant-free Gaussian Poincare form
//! of the bound. Probe functions carry analytically known Lipschitz
//! constants; estimating the constant numerically would make the check
//! circular.

use thiserror::Error;

use crate::numkit::{Matrix, NumError, RngStream};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("prediction row {row} is not a probability vector (sum {sum})")]
    NotProbability { row: usize, sum: f64 },
    #[error("label row {0} is not one-hot")]
    NotOneHot(usize),
    #[error("predictions are {pred_rows}x{pred_cols}, labels {label_rows}x{label_cols}")]
    ShapeMismatch {
        pred_rows: usize,
        pred_cols: usize,
        label_rows: usize,
        label_cols: usize,
    },
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Classification risk (strict-inequality zero-one loss) and regression
/// risk (mean squared distance to the one-hot label) of one predictor on
/// one evaluation set. Always satisfies `r_classif <= 4 r_reg`.
#[derive(Debug, Clone, Copy)]
pub struct RiskPair {
    pub r_classif: f64,
    pub r_reg: f64,
}

/// Evaluate both risks. Prediction rows must sum to one (tolerance 1e-9)
/// with non-negative entries; labels must be exactly one-hot.
pub fn risks(predictions: &Matrix, labels: &Matrix) -> Result<RiskPair, BoundsError> {
    if predictions.rows() != labels.rows() || predictions.cols() != labels.cols() {
        return Err(BoundsError::ShapeMismatch {
            pred_rows: predictions.rows(),
            pred_cols: predictions.cols(),
            label_rows: labels.rows(),
            label_cols: labels.cols(),
        });
    }
    let n = predictions.rows();
    let k = predictions.cols();
    let mut wrong = 0usize;
    let mut sq_sum = 0.0;
    for r in 0..n {
        let p = predictions.row(r);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&v| v < -1e-12) {
            return Err(BoundsError::NotProbability { row: r, sum });
        }
        let l = labels.row(r);
        if !crate::datasets::is_one_hot(l) {
            return Err(BoundsError::NotOneHot(r));
        }
        let label = l.iter().position(|&v| v == 1.0).expect("one-hot");
        let max = p.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if p[label] < max {
            wrong += 1;
        }
        for j in 0..k {
            let d = p[j] - l[j];
            sq_sum += d * d;
        }
    }
    Ok(RiskPair {
        r_classif: wrong as f64 / n as f64,
        r_reg: sq_sum / n as f64,
    })
}

/// Outcome of a randomized sweep of the 4x bound.
#[derive(Debug, Clone, Copy)]
pub struct FourXReport {
    pub instances: usize,
    /// Instances with zero regression risk (ratio undefined); the bound
    /// holds trivially there.
    pub skipped: usize,
    pub violations: usize,
    pub max_ratio: f64,
}

/// Sample random probability-vector predictors against random one-hot
/// labels and check `r_classif <= 4 r_reg` on every instance. Includes a
/// family of near-tie stress instances where the true class loses by an
/// ever smaller margin.
pub fn check_4x_bound(
    n_instances: usize,
    k: usize,
    n_points: usize,
    stream: &mut RngStream,
) -> Result<FourXReport, BoundsError> {
    if k < 2 || n_points == 0 || n_instances == 0 {
        return Err(BoundsError::InvalidArg(
            "need k >= 2, n_points >= 1, n_instances >= 1".into(),
        ));
    }
    let mut report = FourXReport {
        instances: 0,
        skipped: 0,
        violations: 0,
        max_ratio: 0.0,
    };
    for _ in 0..n_instances {
        let (preds, labels) = random_instance(k, n_points, stream)?;
        tally(&mut report, risks(&preds, &labels)?);
    }
    for delta in [1e-3, 1e-6, 1e-9, 1e-12] {
        let (preds, labels) = near_tie_instance(k, n_points, delta)?;
        tally(&mut report, risks(&preds, &labels)?);
    }
    Ok(report)
}

fn tally(report: &mut FourXReport, pair: RiskPair) {
    report.instances += 1;
    if pair.r_reg == 0.0 {
        report.skipped += 1;
        if pair.r_classif > 0.0 {
            report.violations += 1;
        }
        return;
    }
    let ratio = pair.r_classif / pair.r_reg;
    report.max_ratio = report.max_ratio.max(ratio);
    if pair.r_classif > 4.0 * pair.r_reg + 1e-12 {
        report.violations += 1;
    }
}

fn random_instance(
    k: usize,
    n_points: usize,
    stream: &mut RngStream,
) -> Result<(Matrix, Matrix), BoundsError> {
    let mut preds = Vec::with_capacity(n_points * k);
    let mut labels = vec![0.0; n_points * k];
    for i in 0..n_points {
        let raw = stream.uniform(k, 1e-6, 1.0)?;
        let sum: f64 = raw.iter().sum();
        preds.extend(raw.iter().map(|v| v / sum));
        labels[i * k + stream.next_index(k)] = 1.0;
    }
    Ok((
        Matrix::new(n_points, k, preds)?,
        Matrix::new(n_points, k, labels)?,
    ))
}

/// Predictor that gives the true class `1/2 - delta/2` and a rival class
/// `1/2 + delta/2`: misclassified by an arbitrarily small margin, yet the
/// regression risk stays near 1/2 per point.
pub fn near_tie_instance(
    k: usize,
    n_points: usize,
    delta: f64,
) -> Result<(Matrix, Matrix), BoundsError> {
    if k < 2 {
        return Err(BoundsError::InvalidArg("near-tie needs k >= 2".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BoundsError::InvalidArg(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let mut preds = vec![0.0; n_points * k];
    let mut labels = vec![0.0; n_points * k];
    for i in 0..n_points {
        let true_class = i % k;
        let rival = (i + 1) % k;
        preds[i * k + true_class] = 0.5 - delta / 2.0;
        preds[i * k + rival] = 0.5 + delta / 2.0;
        labels[i * k + true_class] = 1.0;
    }
    Ok((
        Matrix::new(n_points, k, preds)?,
        Matrix::new(n_points, k, labels)?,
    ))
}

/// A scalar function of `R^N` together with an analytically known Lipschitz
/// constant.
pub struct LipschitzProbe {
    dimension: usize,
    lipschitz: f64,
    f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl LipschitzProbe {
    pub fn new(
        dimension: usize,
        lipschitz: f64,
        f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    ) -> Result<Self, BoundsError> {
        if dimension == 0 {
            return Err(BoundsError::InvalidProbe("dimension must be >= 1".into()));
        }
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(BoundsError::InvalidProbe(format!(
                "Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        Ok(Self {
            dimension,
            lipschitz,
            f,
        })
    }

    /// `h(theta) = a . theta`, with `L = ||a||`.
    pub fn linear(weights: Vec<f64>) -> Result<Self, BoundsError> {
        let l = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let dim = weights.len();
        Self::new(
            dim,
            l,
            Box::new(move |theta| weights.iter().zip(theta).map(|(w, t)| w * t).sum()),
        )
    }

    /// Constant map; the zero Lipschitz constant is legitimate.
    pub fn constant(dimension: usize, value: f64) -> Result<Self, BoundsError> {
        Self::new(dimension, 0.0, Box::new(move |_| value))
    }

    /// `h(theta) = ||theta||`, with `L = 1`.
    pub fn euclidean_norm(dimension: usize) -> Result<Self, BoundsError> {
        Self::new(
            dimension,
            1.0,
            Box::new(|theta| theta.iter().map(|t| t * t).sum::<f64>().sqrt()),
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }
}

impl std::fmt::Debug for LipschitzProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LipschitzProbe")
            .field("dimension", &self.dimension)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Empirical variance of `h(theta)` for `theta ~ N(0, sigma2 I)` against
/// the Poincare bound `L^2 sigma2`.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationReport {
    pub empirical_var: f64,
    pub bound: f64,
    /// Asymptotic standard error of the sample variance, from the fourth
    /// central moment.
    pub mc_std_error: f64,
    pub n_samples: usize,
}

impl ConcentrationReport {
    /// Whether the empirical variance respects the bound up to `slack_se`
    /// Monte Carlo standard errors.
    pub fn holds(&self, slack_se: f64) -> bool {
        self.empirical_var <= self.bound + slack_se * self.mc_std_error
    }
}

pub fn check_concentration(
    probe: &LipschitzProbe,
    sigma2: f64,
    n_samples: usize,
    stream: &mut RngStream,
) -> Result<ConcentrationReport, BoundsError> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(BoundsError::InvalidArg(format!(
            "sigma2 must be positive and finite, got {sigma2}"
        )));
    }
    if n_samples < 100 {
        return Err(BoundsError::InvalidArg(format!(
            "need at least 100 samples, got {n_samples}"
        )));
    }
    let n = probe.dimension();
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let theta = stream.gaussian(n, 0.0, sigma2)?;
        values.push(probe.eval(&theta));
    }
    let mean = crate::numkit::mean(&values);
    let m2 = crate::numkit::mean(
        &values
            .iter()
            .map(|v| (v - mean).powi(2))
            .collect::<Vec<f64>>(),
    );
    let m4 = crate::numkit::mean(
        &values
            .iter()
            .map(|v| (v - mean).powi(4))
            .collect::<Vec<f64>>(),
    );
    let mc_std_error = ((m4 - m2 * m2).max(0.0) / n_samples as f64).sqrt();
    Ok(ConcentrationReport {
        empirical_var: m2,
        bound: probe.lipschitz() * probe.lipschitz() * sigma2,
        mc_std_error,
        n_samples,
    })
}
