//! Bias/variance estimators over a (sampling replicate x optimization seed
//! x test point) prediction grid, the law-of-total-variance split, bootstrap
//! confidence intervals, and the full estimation protocol that trains one
//! network per grid cell.
//!
//! All statistics use population-style normalization (divide by n, not
//! n - 1). That choice makes the additivity identity
//! `var_opt + var_samp == total variance` hold exactly for the plug-in
//! estimators, which is the module's central testable property.

use rayon::prelude::*;
use thiserror::Error;

use crate::datasets::{bootstrap_replicate, Dataset, TaskKind};
use crate::nnet::{self, forward, init_params, train, MlpSpec, TrainConfig, TrainError};
use crate::numkit::{KahanAcc, Matrix, NumError, RngStream};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid needs at least two replicates and two seeds, got {n_s}x{n_o}")]
    DegenerateGrid { n_s: usize, n_o: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("training failed for replicate {replicate}, seed {seed}: {source}")]
    CellFailure {
        replicate: usize,
        seed: usize,
        #[source]
        source: TrainError,
    },
    #[error("protocol setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Predictions indexed by (sampling replicate `s`, optimization seed `o`,
/// test point `t`), each an `R^k` vector, plus the test targets used as the
/// noiseless-label stand-in.
#[derive(Debug, Clone)]
pub struct PredictionGrid {
    n_s: usize,
    n_o: usize,
    n_test: usize,
    k: usize,
    /// Row-major `[s][o][t][component]`.
    values: Vec<f64>,
    test_targets: Matrix,
}

impl PredictionGrid {
    pub fn from_values(
        n_s: usize,
        n_o: usize,
        n_test: usize,
        k: usize,
        values: Vec<f64>,
        test_targets: Matrix,
    ) -> Result<Self, EstimatorError> {
        if n_s == 0 || n_o == 0 || n_test == 0 || k == 0 {
            return Err(EstimatorError::InvalidGrid(format!(
                "grid dimensions must be positive, got {n_s}x{n_o}x{n_test}x{k}"
            )));
        }
        if values.len() != n_s * n_o * n_test * k {
            return Err(EstimatorError::InvalidGrid(format!(
                "value count {} does not match {n_s}x{n_o}x{n_test}x{k}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::InvalidGrid("non-finite prediction".into()));
        }
        if test_targets.rows() != n_test || test_targets.cols() != k {
            return Err(EstimatorError::InvalidGrid(format!(
                "targets are {}x{}, expected {n_test}x{k}",
                test_targets.rows(),
                test_targets.cols()
            )));
        }
        Ok(Self {
            n_s,
            n_o,
            n_test,
            k,
            values,
            test_targets,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.n_s
    }

    pub fn n_seeds(&self) -> usize {
        self.n_o
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    pub fn output_dim(&self) -> usize {
        self.k
    }

    pub fn test_targets(&self) -> &Matrix {
        &self.test_targets
    }

    /// Prediction vector for cell `(s, o)` at test point `t`.
    pub fn value(&self, s: usize, o: usize, t: usize) -> &[f64] {
        debug_assert!(s < self.n_s && o < self.n_o && t < self.n_test);
        let base = ((s * self.n_o + o) * self.n_test + t) * self.k;
        &self.values[base..base + self.k]
    }

    /// Mean zero-one test error over all cells (classification grids).
    pub fn zero_one_test_error(&self) -> f64 {
        let mut acc = KahanAcc::new();
        for s in 0..self.n_s {
            for o in 0..self.n_o {
                let mut wrong = 0usize;
                for t in 0..self.n_test {
                    let target = self.test_targets.row(t);
                    let label = target.iter().position(|&v| v == 1.0).unwrap_or(0);
                    let p = self.value(s, o, t);
                    let max = p.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    if p[label] < max {
                        wrong += 1;
                    }
                }
                acc.add(wrong as f64 / self.n_test as f64);
            }
        }
        acc.mean()
    }

    /// Mean squared test error over all cells.
    pub fn mean_squared_test_error(&self) -> f64 {
        let mut acc = KahanAcc::new();
        for s in 0..self.n_s {
            for o in 0..self.n_o {
                let mut cell = 0.0;
                for t in 0..self.n_test {
                    let target = self.test_targets.row(t);
                    let p = self.value(s, o, t);
                    for j in 0..self.k {
                        let d = p[j] - target[j];
                        cell += d * d;
                    }
                }
                acc.add(cell / self.n_test as f64);
            }
        }
        acc.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ci {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Bias,
    Variance,
    VarOpt,
    VarSamp,
}

/// Point estimates and bootstrap confidence intervals for the full
/// decomposition. `e_noise` is fixed at zero: test labels stand in for the
/// noiseless regression function.
#[derive(Debug, Clone)]
pub struct DecompResult {
    pub e_bias: f64,
    pub e_variance: f64,
    pub var_opt: f64,
    pub var_samp: f64,
    pub e_noise: f64,
    pub bias_ci: Ci,
    pub variance_ci: Ci,
    pub var_opt_ci: Ci,
    pub var_samp_ci: Ci,
    pub ci_level: f64,
}

/// Per-test-point contribution of a statistic; every estimator in this
/// module is the mean over test points of one of these.
fn per_point_values(grid: &PredictionGrid, statistic: Statistic) -> Vec<f64> {
    let n_cells = (grid.n_s * grid.n_o) as f64;
    let k = grid.k;
    let mut out = Vec::with_capacity(grid.n_test);
    let mut grand = vec![0.0; k];
    let mut o_means: Vec<f64> = Vec::new();
    for t in 0..grid.n_test {
        // Grand mean prediction at t.
        for g in grand.iter_mut() {
            *g = 0.0;
        }
        for s in 0..grid.n_s {
            for o in 0..grid.n_o {
                let p = grid.value(s, o, t);
                for j in 0..k {
                    grand[j] += p[j];
                }
            }
        }
        for g in grand.iter_mut() {
            *g /= n_cells;
        }
        let value = match statistic {
            Statistic::Bias => {
                let target = grid.test_targets.row(t);
                let mut sq = 0.0;
                for j in 0..k {
                    let d = grand[j] - target[j];
                    sq += d * d;
                }
                sq
            }
            Statistic::Variance => {
                let mut acc = KahanAcc::new();
                for s in 0..grid.n_s {
                    for o in 0..grid.n_o {
                        let p = grid.value(s, o, t);
                        let mut sq = 0.0;
                        for j in 0..k {
                            let d = p[j] - grand[j];
                            sq += d * d;
                        }
                        acc.add(sq);
                    }
                }
                acc.total() / n_cells
            }
            Statistic::VarOpt => {
                // Mean over s of the within-replicate variance across o.
                let mut acc = KahanAcc::new();
                o_means.resize(k, 0.0);
                for s in 0..grid.n_s {
                    for m in o_means.iter_mut() {
                        *m = 0.0;
                    }
                    for o in 0..grid.n_o {
                        let p = grid.value(s, o, t);
                        for j in 0..k {
                            o_means[j] += p[j];
                        }
                    }
                    for m in o_means.iter_mut() {
                        *m /= grid.n_o as f64;
                    }
                    let mut within = KahanAcc::new();
                    for o in 0..grid.n_o {
                        let p = grid.value(s, o, t);
                        let mut sq = 0.0;
                        for j in 0..k {
                            let d = p[j] - o_means[j];
                            sq += d * d;
                        }
                        within.add(sq);
                    }
                    acc.add(within.total() / grid.n_o as f64);
                }
                acc.total() / grid.n_s as f64
            }
            Statistic::VarSamp => {
                // Variance across s of the within-replicate mean over o.
                o_means.resize(k, 0.0);
                let mut acc = KahanAcc::new();
                for s in 0..grid.n_s {
                    for m in o_means.iter_mut() {
                        *m = 0.0;
                    }
                    for o in 0..grid.n_o {
                        let p = grid.value(s, o, t);
                        for j in 0..k {
                            o_means[j] += p[j];
                        }
                    }
                    let mut sq = 0.0;
                    for j in 0..k {
                        let d = o_means[j] / grid.n_o as f64 - grand[j];
                        sq += d * d;
                    }
                    acc.add(sq);
                }
                acc.total() / grid.n_s as f64
            }
        };
        out.push(value);
    }
    out
}

/// Squared distance between the ensemble-mean prediction and the test
/// label, averaged over test points.
pub fn estimate_bias(grid: &PredictionGrid) -> f64 {
    crate::numkit::mean(&per_point_values(grid, Statistic::Bias))
}

/// Mean over test points of the variance of predictions across all
/// (replicate, seed) cells.
pub fn estimate_variance_total(grid: &PredictionGrid) -> f64 {
    crate::numkit::mean(&per_point_values(grid, Statistic::Variance))
}

/// Law-of-total-variance split: `(variance due to optimization, variance
/// due to sampling)`. The two terms sum to [`estimate_variance_total`]
/// exactly (same normalization).
pub fn decompose_variance(grid: &PredictionGrid) -> Result<(f64, f64), EstimatorError> {
    if grid.n_s < 2 || grid.n_o < 2 {
        return Err(EstimatorError::DegenerateGrid {
            n_s: grid.n_s,
            n_o: grid.n_o,
        });
    }
    let var_opt = crate::numkit::mean(&per_point_values(grid, Statistic::VarOpt));
    let var_samp = crate::numkit::mean(&per_point_values(grid, Statistic::VarSamp));
    Ok((var_opt, var_samp))
}

/// Percentile bootstrap interval for a statistic, resampling the test-point
/// axis with replacement. Deterministic per stream.
pub fn bootstrap_ci(
    grid: &PredictionGrid,
    statistic: Statistic,
    level: f64,
    resamples: usize,
    stream: &mut RngStream,
) -> Result<Ci, EstimatorError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level));
    }
    if resamples < 2 {
        return Err(EstimatorError::TooFewResamples(resamples));
    }
    if matches!(statistic, Statistic::VarOpt | Statistic::VarSamp) && (grid.n_s < 2 || grid.n_o < 2)
    {
        return Err(EstimatorError::DegenerateGrid {
            n_s: grid.n_s,
            n_o: grid.n_o,
        });
    }
    let per_point = per_point_values(grid, statistic);
    let n = per_point.len();
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = KahanAcc::new();
        for _ in 0..n {
            acc.add(per_point[stream.next_index(n)]);
        }
        stats.push(acc.mean());
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(Ci {
        lo: quantile_sorted(&stats, alpha),
        hi: quantile_sorted(&stats, 1.0 - alpha),
    })
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = h - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Full decomposition with bootstrap CIs for all four statistics.
pub fn decompose_with_ci(
    grid: &PredictionGrid,
    level: f64,
    resamples: usize,
    ci_seeds: &RngStream,
) -> Result<DecompResult, EstimatorError> {
    let e_bias = estimate_bias(grid);
    let e_variance = estimate_variance_total(grid);
    let (var_opt, var_samp) = decompose_variance(grid)?;
    let ci_of = |stat: Statistic, label: &str| {
        bootstrap_ci(grid, stat, level, resamples, &mut ci_seeds.derive(label))
    };
    let bias_ci = ci_of(Statistic::Bias, "bias")?;
    let variance_ci = ci_of(Statistic::Variance, "variance")?;
    let var_opt_ci = ci_of(Statistic::VarOpt, "var_opt")?;
    let var_samp_ci = ci_of(Statistic::VarSamp, "var_samp")?;
    debug_assert!(
        (var_opt + var_samp - e_variance).abs() <= 1e-10 * e_variance.max(1.0),
        "total-variance additivity violated"
    );
    Ok(DecompResult {
        e_bias,
        e_variance,
        var_opt,
        var_samp,
        e_noise: 0.0,
        bias_ci,
        variance_ci,
        var_opt_ci,
        var_samp_ci,
        ci_level: level,
    })
}

/// Grid shape and confidence-interval settings for [`run_protocol`].
#[derive(Debug, Clone)]
pub struct Protocol {
    pub n_replicates: usize,
    pub n_seeds: usize,
    pub ci_level: f64,
    pub ci_resamples: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            n_replicates: 10,
            n_seeds: 10,
            ci_level: 0.99,
            ci_resamples: 1000,
        }
    }
}

/// Everything the protocol produces: the raw grid, its decomposition, and
/// per-cell training diagnostics (row-major by replicate, then seed).
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub grid: PredictionGrid,
    pub decomp: DecompResult,
    pub cell_train_errors: Vec<f64>,
    pub cell_final_losses: Vec<f64>,
}

/// Train one network per (bootstrap replicate, init seed) cell and fill the
/// prediction grid with its test-set outputs.
///
/// Stream layout: replicate `s` draws from `seeds/data/s{s}`; cell `(s, o)`
/// initializes from `seeds/init/o{o}` and shuffles from `seeds/shuffle/o{o}`
/// (both shared across replicates for the same `o`, pairing the seeds), and
/// the CIs draw from `seeds/ci/...`. Cells run in parallel; per-cell streams
/// and index-addressed accumulation make the result identical to a
/// sequential run.
pub fn run_protocol(
    base_data: &Dataset,
    test_data: &Dataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    protocol: &Protocol,
    seeds: &RngStream,
) -> Result<ProtocolRun, EstimatorError> {
    if protocol.n_replicates < 2 || protocol.n_seeds < 2 {
        return Err(EstimatorError::DegenerateGrid {
            n_s: protocol.n_replicates,
            n_o: protocol.n_seeds,
        });
    }
    if base_data.kind() != test_data.kind()
        || base_data.input_dim() != test_data.input_dim()
        || base_data.target_dim() != test_data.target_dim()
    {
        return Err(EstimatorError::Setup(
            "train and test data disagree on shape or task kind".into(),
        ));
    }

    let n_s = protocol.n_replicates;
    let n_o = protocol.n_seeds;
    let replicates: Vec<Dataset> = (0..n_s)
        .map(|s| {
            let mut stream = seeds.derive(&format!("data/s{s}"));
            bootstrap_replicate(base_data, &mut stream)
                .map_err(|e| EstimatorError::Setup(format!("bootstrap replicate {s}: {e}")))
        })
        .collect::<Result<_, _>>()?;

    struct CellOutput {
        predictions: Matrix,
        train_error: f64,
        final_loss: f64,
    }

    let cells: Vec<Result<CellOutput, EstimatorError>> = (0..n_s * n_o)
        .into_par_iter()
        .map(|cell| {
            let s = cell / n_o;
            let o = cell % n_o;
            let replicate = &replicates[s];
            let run = || -> Result<CellOutput, TrainError> {
                let mut init_stream = seeds.derive(&format!("init/o{o}"));
                let mut shuffle_stream = seeds.derive(&format!("shuffle/o{o}"));
                let params = init_params(spec, &mut init_stream)?;
                let (params, curve) = train(spec, params, replicate, cfg, &mut shuffle_stream)?;
                let predictions = forward(&params, spec, test_data.inputs())?;
                let train_error = match replicate.kind() {
                    TaskKind::Classification => nnet::zero_one_error(&params, spec, replicate)?,
                    TaskKind::Regression => nnet::mean_squared_error(&params, spec, replicate)?,
                };
                Ok(CellOutput {
                    predictions,
                    train_error,
                    final_loss: curve.last().copied().unwrap_or(f64::NAN),
                })
            };
            run().map_err(|source| EstimatorError::CellFailure {
                replicate: s,
                seed: o,
                source,
            })
        })
        .collect();

    let n_test = test_data.len();
    let k = test_data.target_dim();
    let mut values = Vec::with_capacity(n_s * n_o * n_test * k);
    let mut cell_train_errors = Vec::with_capacity(n_s * n_o);
    let mut cell_final_losses = Vec::with_capacity(n_s * n_o);
    for cell in cells {
        let cell = cell?;
        values.extend_from_slice(cell.predictions.values());
        cell_train_errors.push(cell.train_error);
        cell_final_losses.push(cell.final_loss);
    }
    let grid =
        PredictionGrid::from_values(n_s, n_o, n_test, k, values, test_data.targets().clone())?;
    let decomp = decompose_with_ci(
        &grid,
        protocol.ci_level,
        protocol.ci_resamples,
        &seeds.derive("ci"),
    )?;
    Ok(ProtocolRun {
        grid,
        decomp,
        cell_train_errors,
        cell_final_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_sinusoid, SinusoidSpec};
    use crate::nnet::{Activation, Batch, Loss, OutputMap};

    /// Scalar grid with the given per-(s, o) values replicated at one test
    /// point, target zero.
    fn scalar_grid(rows: &[Vec<f64>]) -> PredictionGrid {
        let n_s = rows.len();
        let n_o = rows[0].len();
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        PredictionGrid::from_values(
            n_s,
            n_o,
            1,
            1,
            values,
            Matrix::new(1, 1, vec![0.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bias_of_perfect_ensemble_is_zero() {
        // Every prediction equals the one-hot target.
        let targets = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut values = Vec::new();
        for _ in 0..4 {
            values.extend_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let grid = PredictionGrid::from_values(2, 2, 2, 2, values, targets).unwrap();
        assert_eq!(estimate_bias(&grid), 0.0);
    }

    #[test]
    fn bias_hand_case() {
        // Single test point, ensemble mean (0.5, 0.5), target (1, 0).
        let targets = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let values = vec![
            1.0, 0.0, // s0 o0
            0.0, 1.0, // s0 o1
            0.0, 1.0, // s1 o0
            1.0, 0.0, // s1 o1
        ];
        let grid = PredictionGrid::from_values(2, 2, 1, 2, values, targets).unwrap();
        assert!((estimate_bias(&grid) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bias_shift_adds_squared_norm() {
        let targets = Matrix::from_rows(&[vec![0.5, -0.25]]).unwrap();
        // Two cells whose mean equals the target exactly.
        let base = vec![0.75, -0.5, 0.25, 0.0, 0.25, 0.0, 0.75, -0.5];
        let grid = PredictionGrid::from_values(2, 2, 1, 2, base.clone(), targets.clone()).unwrap();
        assert!(estimate_bias(&grid) < 1e-30);
        let c = [0.3, -0.4];
        let shifted: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + c[i % 2]).collect();
        let grid2 = PredictionGrid::from_values(2, 2, 1, 2, shifted, targets).unwrap();
        let want = c[0] * c[0] + c[1] * c[1];
        assert!((estimate_bias(&grid2) - want).abs() < 1e-12);
    }

    #[test]
    fn variance_of_constant_grid_is_zero() {
        let grid = scalar_grid(&[vec![3.0, 3.0], vec![3.0, 3.0]]);
        assert_eq!(estimate_variance_total(&grid), 0.0);
    }

    #[test]
    fn variance_hand_case() {
        let grid = scalar_grid(&[vec![0.0, 2.0], vec![1.0, 3.0]]);
        assert!((estimate_variance_total(&grid) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn variance_is_translation_invariant() {
        let a = scalar_grid(&[vec![0.0, 2.0], vec![1.0, 3.0]]);
        let b = scalar_grid(&[vec![10.0, 12.0], vec![11.0, 13.0]]);
        assert!((estimate_variance_total(&a) - estimate_variance_total(&b)).abs() < 1e-12);
    }

    #[test]
    fn decompose_hand_case() {
        let grid = scalar_grid(&[vec![0.0, 2.0], vec![1.0, 3.0]]);
        let (var_opt, var_samp) = decompose_variance(&grid).unwrap();
        assert!((var_opt - 1.0).abs() < 1e-15);
        assert!((var_samp - 0.25).abs() < 1e-15);
        assert!((var_opt + var_samp - estimate_variance_total(&grid)).abs() < 1e-15);
    }

    #[test]
    fn decompose_forced_splits() {
        // Seeds identical within each replicate: all variance is sampling.
        let sampling_only = scalar_grid(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        let (vo, vs) = decompose_variance(&sampling_only).unwrap();
        assert_eq!(vo, 0.0);
        assert!((vs - estimate_variance_total(&sampling_only)).abs() < 1e-15);

        // Identical per-replicate means: all variance is optimization.
        let opt_only = scalar_grid(&[vec![0.0, 2.0], vec![1.0, 1.0]]);
        let (vo2, vs2) = decompose_variance(&opt_only).unwrap();
        assert_eq!(vs2, 0.0);
        assert!((vo2 - estimate_variance_total(&opt_only)).abs() < 1e-15);
    }

    #[test]
    fn decompose_rejects_degenerate_grids() {
        let grid = scalar_grid(&[vec![1.0, 2.0]]);
        assert!(matches!(
            decompose_variance(&grid),
            Err(EstimatorError::DegenerateGrid { .. })
        ));
    }

    #[test]
    fn bias_plus_variance_equals_mean_squared_error() {
        let mut stream = RngStream::new(31, "risk-identity");
        let (n_s, n_o, n_test, k) = (4, 3, 5, 2);
        let values = stream.gaussian(n_s * n_o * n_test * k, 0.3, 1.7).unwrap();
        let targets =
            Matrix::new(n_test, k, stream.gaussian(n_test * k, 0.0, 1.0).unwrap()).unwrap();
        let grid =
            PredictionGrid::from_values(n_s, n_o, n_test, k, values.clone(), targets.clone())
                .unwrap();
        let lhs = estimate_bias(&grid) + estimate_variance_total(&grid);
        // Direct mean over cells and test points of squared error.
        let mut acc = 0.0;
        for s in 0..n_s {
            for o in 0..n_o {
                for t in 0..n_test {
                    let p = grid.value(s, o, t);
                    let y = targets.row(t);
                    for j in 0..k {
                        acc += (p[j] - y[j]).powi(2);
                    }
                }
            }
        }
        let rhs = acc / (n_s * n_o * n_test) as f64;
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn ci_zero_width_when_test_points_identical() {
        // Same per-point contribution at every t.
        let values = vec![
            1.0, 1.0, // s0: t0, t1
            2.0, 2.0, // s0 o1
            3.0, 3.0, // s1 o0
            4.0, 4.0, // s1 o1
        ];
        let targets = Matrix::new(2, 1, vec![0.0, 0.0]).unwrap();
        let grid = PredictionGrid::from_values(2, 2, 2, 1, values, targets).unwrap();
        let point = estimate_variance_total(&grid);
        let ci = bootstrap_ci(
            &grid,
            Statistic::Variance,
            0.99,
            500,
            &mut RngStream::new(1, "ci"),
        )
        .unwrap();
        assert!((ci.lo - point).abs() < 1e-14);
        assert!((ci.hi - point).abs() < 1e-14);
    }

    #[test]
    fn ci_contains_point_estimate_on_random_grids() {
        let mut stream = RngStream::new(77, "ci/random");
        for trial in 0..200 {
            let n_s = 2 + trial % 3;
            let n_o = 2 + (trial / 3) % 3;
            let n_test = 2 + trial % 7;
            let values = stream.gaussian(n_s * n_o * n_test, 0.0, 2.0).unwrap();
            let targets =
                Matrix::new(n_test, 1, stream.gaussian(n_test, 0.0, 1.0).unwrap()).unwrap();
            let grid = PredictionGrid::from_values(n_s, n_o, n_test, 1, values, targets).unwrap();
            for stat in [
                Statistic::Bias,
                Statistic::Variance,
                Statistic::VarOpt,
                Statistic::VarSamp,
            ] {
                let point = match stat {
                    Statistic::Bias => estimate_bias(&grid),
                    Statistic::Variance => estimate_variance_total(&grid),
                    Statistic::VarOpt => decompose_variance(&grid).unwrap().0,
                    Statistic::VarSamp => decompose_variance(&grid).unwrap().1,
                };
                let ci = bootstrap_ci(
                    &grid,
                    stat,
                    0.99,
                    400,
                    &mut stream.derive(&format!("t{trial}")),
                )
                .unwrap();
                assert!(
                    ci.lo <= point + 1e-12 && point <= ci.hi + 1e-12,
                    "trial {trial} {stat:?}: point {point} outside [{}, {}]",
                    ci.lo,
                    ci.hi
                );
            }
        }
    }

    #[test]
    fn ci_rejects_bad_arguments() {
        let grid = scalar_grid(&[vec![0.0, 1.0], vec![2.0, 3.0]]);
        let mut stream = RngStream::new(2, "ci/bad");
        assert!(matches!(
            bootstrap_ci(&grid, Statistic::Bias, 0.0, 100, &mut stream),
            Err(EstimatorError::InvalidLevel(_))
        ));
        assert!(matches!(
            bootstrap_ci(&grid, Statistic::Bias, 1.0, 100, &mut stream),
            Err(EstimatorError::InvalidLevel(_))
        ));
        assert!(matches!(
            bootstrap_ci(&grid, Statistic::Bias, 0.99, 1, &mut stream),
            Err(EstimatorError::TooFewResamples(_))
        ));
    }

    fn sinusoid_pair(seed: u64) -> (Dataset, Dataset) {
        let train_spec = SinusoidSpec {
            m_train: 24,
            ..SinusoidSpec::default()
        };
        let test_spec = SinusoidSpec {
            m_train: 16,
            noise_sd: 0.0,
            ..SinusoidSpec::default()
        };
        let seeds = RngStream::new(seed, "proto");
        let base = gen_sinusoid(&train_spec, &mut seeds.derive("base")).unwrap();
        let test = gen_sinusoid(&test_spec, &mut seeds.derive("test")).unwrap();
        (base, test)
    }

    fn tiny_mlp() -> MlpSpec {
        MlpSpec {
            input_dim: 1,
            hidden_widths: vec![4],
            output_dim: 1,
            activation: Activation::Relu,
            output_map: OutputMap::Identity,
        }
    }

    fn quick_cfg(step: f64) -> TrainConfig {
        TrainConfig {
            step_size: step,
            momentum: 0.9,
            epochs: 30,
            batch: Batch::Full,
            loss: Loss::SquaredError,
            stop_train_loss: None,
        }
    }

    #[test]
    fn protocol_produces_consistent_grid() {
        let (base, test) = sinusoid_pair(41);
        let protocol = Protocol {
            n_replicates: 3,
            n_seeds: 2,
            ci_level: 0.9,
            ci_resamples: 200,
        };
        let seeds = RngStream::new(41, "proto");
        let run = run_protocol(
            &base,
            &test,
            &tiny_mlp(),
            &quick_cfg(0.02),
            &protocol,
            &seeds,
        )
        .unwrap();
        assert_eq!(run.grid.n_replicates(), 3);
        assert_eq!(run.grid.n_seeds(), 2);
        assert_eq!(run.grid.n_test(), 16);
        assert_eq!(run.cell_train_errors.len(), 6);
        let d = &run.decomp;
        assert!(d.e_bias >= 0.0 && d.e_variance >= 0.0);
        assert!((d.var_opt + d.var_samp - d.e_variance).abs() <= 1e-10 * d.e_variance.max(1.0));
        assert_eq!(d.e_noise, 0.0);
    }

    #[test]
    fn protocol_is_deterministic() {
        let (base, test) = sinusoid_pair(42);
        let protocol = Protocol {
            n_replicates: 2,
            n_seeds: 2,
            ci_level: 0.9,
            ci_resamples: 100,
        };
        let run1 = run_protocol(
            &base,
            &test,
            &tiny_mlp(),
            &quick_cfg(0.02),
            &protocol,
            &RngStream::new(5, "proto"),
        )
        .unwrap();
        let run2 = run_protocol(
            &base,
            &test,
            &tiny_mlp(),
            &quick_cfg(0.02),
            &protocol,
            &RngStream::new(5, "proto"),
        )
        .unwrap();
        assert_eq!(run1.grid.values, run2.grid.values);
        assert_eq!(run1.decomp.e_variance, run2.decomp.e_variance);
    }

    #[test]
    fn protocol_with_zero_step_has_no_sampling_variance() {
        // Untrained networks depend only on the init seed, so the
        // seed-averaged prediction is identical across replicates.
        let (base, test) = sinusoid_pair(43);
        let protocol = Protocol {
            n_replicates: 3,
            n_seeds: 3,
            ci_level: 0.9,
            ci_resamples: 100,
        };
        let run = run_protocol(
            &base,
            &test,
            &tiny_mlp(),
            &quick_cfg(0.0),
            &protocol,
            &RngStream::new(6, "proto"),
        )
        .unwrap();
        // Identical predictions across replicates up to the rounding of the
        // grand mean, so the sampling term is zero at squared-ulp scale.
        assert!(
            run.decomp.var_samp < 1e-28,
            "var_samp {}",
            run.decomp.var_samp
        );
        assert!(run.decomp.var_opt > 0.0);
    }

    #[test]
    fn protocol_reports_failing_cell() {
        let (base, test) = sinusoid_pair(44);
        let protocol = Protocol {
            n_replicates: 2,
            n_seeds: 2,
            ci_level: 0.9,
            ci_resamples: 100,
        };
        let result = run_protocol(
            &base,
            &test,
            &tiny_mlp(),
            &quick_cfg(100.0),
            &protocol,
            &RngStream::new(7, "proto"),
        );
        match result {
            Err(EstimatorError::CellFailure {
                replicate, seed, ..
            }) => {
                assert!(replicate < 2 && seed < 2);
            }
            other => panic!("expected cell failure, got {other:?}"),
        }
    }
}
