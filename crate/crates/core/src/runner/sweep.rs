//! Width-sweep orchestration: data loading, per-width step-size tuning,
//! protocol execution, and result rows.

use std::time::Instant;

use serde::Serialize;

use crate::datasets::{self, Dataset, TaskKind};
use crate::estimators::{run_protocol, Protocol};
use crate::nnet::{MlpSpec, TrainConfig, TrainError};
use crate::numkit::{KahanAcc, RngStream};

use super::config::{ExperimentConfig, ExperimentKind};
use super::RunnerError;

/// One sweep result per width. Failed widths keep their row in the JSON
/// output with `error` set and zeroed statistics; the CSV emitter skips
/// them because the fixed column schema has no error field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub width: usize,
    pub e_bias: f64,
    pub e_variance: f64,
    pub var_opt: f64,
    pub var_samp: f64,
    pub bias_ci_lo: f64,
    pub bias_ci_hi: f64,
    pub var_ci_lo: f64,
    pub var_ci_hi: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub step_size: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(width: usize, step_size: f64, message: String) -> Self {
        Self {
            width,
            e_bias: 0.0,
            e_variance: 0.0,
            var_opt: 0.0,
            var_samp: 0.0,
            bias_ci_lo: 0.0,
            bias_ci_hi: 0.0,
            var_ci_lo: 0.0,
            var_ci_hi: 0.0,
            train_error: 0.0,
            test_error: 0.0,
            step_size,
            wall_time_s: 0.0,
            error: Some(message),
        }
    }
}

/// Master seed for a run: the `BVLENS_SEED` environment variable overrides
/// the configured value.
pub fn resolve_master_seed(configured: u64) -> Result<u64, RunnerError> {
    match std::env::var("BVLENS_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map_err(|_| RunnerError::Config(format!("BVLENS_SEED must be a u64, got '{text}'"))),
        Err(_) => Ok(configured),
    }
}

fn mlp_spec_for(cfg: &ExperimentConfig, width: usize, data: &Dataset) -> MlpSpec {
    MlpSpec {
        input_dim: data.input_dim(),
        hidden_widths: vec![width],
        output_dim: data.target_dim(),
        activation: cfg.activation,
        output_map: cfg.output_map,
    }
}

fn train_config_for(cfg: &ExperimentConfig, step_size: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        step_size,
        momentum: cfg.momentum,
        epochs,
        batch: cfg.batch,
        loss: cfg.loss,
        stop_train_loss: cfg.stop_train_loss,
    }
}

/// Build the (train, test) pair for a sweep config. Data generation is
/// independent of width: every width sees the same base and test sets.
pub fn load_sweep_data(
    cfg: &ExperimentConfig,
    root: &RngStream,
) -> Result<(Dataset, Dataset), RunnerError> {
    match cfg.kind {
        ExperimentKind::SinusoidSweep => {
            let base = datasets::gen_sinusoid(&cfg.sinusoid, &mut root.derive("data/base"))?;
            let test_spec = datasets::SinusoidSpec {
                m_train: cfg.n_test,
                noise_sd: cfg.test_noise_sd,
                ..cfg.sinusoid.clone()
            };
            let test = datasets::gen_sinusoid(&test_spec, &mut root.derive("data/test"))?;
            Ok((base, test))
        }
        ExperimentKind::SmallDataSweep => {
            let paths = cfg
                .idx
                .as_ref()
                .expect("validated: small_data_sweep has idx paths");
            let full_train = datasets::load_idx(&paths.train_images, &paths.train_labels)?;
            let base = datasets::subsample(
                &full_train,
                cfg.subsample_n,
                &mut root.derive("data/subsample"),
            )?;
            let full_test = datasets::load_idx(&paths.test_images, &paths.test_labels)?;
            let test = match cfg.test_subsample_n {
                Some(n) => {
                    datasets::subsample(&full_test, n, &mut root.derive("data/test_subsample"))?
                }
                None => full_test,
            };
            Ok((base, test))
        }
        _ => Err(RunnerError::Config("experiment kind is not a sweep".into())),
    }
}

/// Pick the step size with the lowest validation error. One network is
/// trained per candidate on a shared train/validation split with paired
/// init and shuffle streams; diverging candidates are skipped and ties go
/// to the smaller step.
pub fn tune_step_size(
    data: &Dataset,
    spec: &MlpSpec,
    cfg: &ExperimentConfig,
    grid: &[f64],
    val_fraction: f64,
    tune_epochs: usize,
    seeds: &RngStream,
) -> Result<f64, RunnerError> {
    if grid.is_empty() {
        return Err(RunnerError::Config("empty step-size grid".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(RunnerError::Config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let m = data.len();
    let n_val = ((m as f64 * val_fraction).round() as usize).clamp(1, m.saturating_sub(1));
    let (val, train_part) = datasets::split_random(data, n_val, &mut seeds.derive("split"))?;

    let mut best: Option<(f64, f64)> = None; // (val_error, step)
    for &step in grid {
        let mut init_stream = seeds.derive("init");
        let mut shuffle_stream = seeds.derive("shuffle");
        let params = match crate::nnet::init_params(spec, &mut init_stream) {
            Ok(p) => p,
            Err(e) => return Err(RunnerError::Train(e)),
        };
        let tcfg = train_config_for(cfg, step, tune_epochs);
        let trained =
            match crate::nnet::train(spec, params, &train_part, &tcfg, &mut shuffle_stream) {
                Ok((p, _)) => p,
                Err(TrainError::Diverged { .. }) => continue,
                Err(e) => return Err(RunnerError::Train(e)),
            };
        let val_err = match val.kind() {
            TaskKind::Classification => crate::nnet::zero_one_error(&trained, spec, &val),
            TaskKind::Regression => crate::nnet::mean_squared_error(&trained, spec, &val),
        };
        let val_err = match val_err {
            Ok(v) if v.is_finite() => v,
            Ok(_) => continue,
            Err(e) => return Err(RunnerError::Train(e)),
        };
        let better = match best {
            None => true,
            Some((best_err, best_step)) => {
                val_err < best_err || (val_err == best_err && step < best_step)
            }
        };
        if better {
            best = Some((val_err, step));
        }
    }
    best.map(|(_, step)| step)
        .ok_or(RunnerError::AllCandidatesDiverged)
}

/// Run the configured sweep: one protocol execution per width, rows in
/// width order. Per-width failures are recorded in the row and the sweep
/// continues.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, RunnerError> {
    cfg.validate()?;
    if !cfg.kind.is_sweep() {
        return Err(RunnerError::Config(
            "run_sweep needs a sweep experiment kind".into(),
        ));
    }
    let master_seed = resolve_master_seed(cfg.master_seed)?;
    let root = RngStream::new(master_seed, "sweep");
    let (base, test) = load_sweep_data(cfg, &root)?;
    let protocol = Protocol {
        n_replicates: cfg.n_s,
        n_seeds: cfg.n_o,
        ci_level: cfg.ci_level,
        ci_resamples: cfg.ci_resamples,
    };

    let mut rows = Vec::with_capacity(cfg.widths.len());
    for &width in &cfg.widths {
        let started = Instant::now();
        let width_stream = root.derive(&format!("w{width}"));
        let spec = mlp_spec_for(cfg, width, &base);

        let step_size = if cfg.tune_step_size {
            match tune_step_size(
                &base,
                &spec,
                cfg,
                &cfg.step_size_grid,
                cfg.val_fraction,
                cfg.tune_epochs,
                &width_stream.derive("tune"),
            ) {
                Ok(step) => step,
                Err(e) => {
                    rows.push(SweepRow::failed(width, cfg.step_size, e.to_string()));
                    continue;
                }
            }
        } else {
            cfg.step_size
        };

        let tcfg = train_config_for(cfg, step_size, cfg.epochs);
        match run_protocol(&base, &test, &spec, &tcfg, &protocol, &width_stream) {
            Ok(run) => {
                let mut train_acc = KahanAcc::new();
                for &e in &run.cell_train_errors {
                    train_acc.add(e);
                }
                let test_error = match test.kind() {
                    TaskKind::Classification => run.grid.zero_one_test_error(),
                    TaskKind::Regression => run.grid.mean_squared_test_error(),
                };
                let d = &run.decomp;
                rows.push(SweepRow {
                    width,
                    e_bias: d.e_bias,
                    e_variance: d.e_variance,
                    var_opt: d.var_opt,
                    var_samp: d.var_samp,
                    bias_ci_lo: d.bias_ci.lo,
                    bias_ci_hi: d.bias_ci.hi,
                    var_ci_lo: d.variance_ci.lo,
                    var_ci_hi: d.variance_ci.hi,
                    train_error: train_acc.mean(),
                    test_error,
                    step_size,
                    wall_time_s: if cfg.record_timings {
                        started.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                    error: None,
                });
            }
            Err(e) => rows.push(SweepRow::failed(width, step_size, e.to_string())),
        }
    }
    Ok(rows)
}
