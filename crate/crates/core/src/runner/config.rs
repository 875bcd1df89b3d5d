//! Flat key-value experiment configuration.
//!
//! The format is one `key = value` pair per line, `#` comments, and a
//! mandatory `schema_version` key. Unknown keys are errors so that typos
//! fail loudly. The full schema is documented in the repository README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::datasets::SinusoidSpec;
use crate::nnet::{Activation, Batch, Loss, OutputMap};

use super::RunnerError;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SinusoidSweep,
    SmallDataSweep,
    LinearCheck,
    BoundsCheck,
}

impl ExperimentKind {
    pub fn is_sweep(self) -> bool {
        matches!(self, Self::SinusoidSweep | Self::SmallDataSweep)
    }

    fn parse(s: &str) -> Result<Self, RunnerError> {
        match s {
            "sinusoid_sweep" => Ok(Self::SinusoidSweep),
            "small_data_sweep" => Ok(Self::SmallDataSweep),
            "linear_check" => Ok(Self::LinearCheck),
            "bounds_check" => Ok(Self::BoundsCheck),
            other => Err(RunnerError::Config(format!(
                "unknown experiment kind '{other}'"
            ))),
        }
    }
}

/// File paths for an IDX image/label train and test pair.
#[derive(Debug, Clone)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub widths: Vec<usize>,
    pub n_s: usize,
    pub n_o: usize,
    pub master_seed: u64,

    pub epochs: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub batch: Batch,
    pub loss: Loss,
    pub activation: Activation,
    pub output_map: OutputMap,
    pub stop_train_loss: Option<f64>,

    pub tune_step_size: bool,
    pub step_size_grid: Vec<f64>,
    pub val_fraction: f64,
    pub tune_epochs: usize,

    pub ci_level: f64,
    pub ci_resamples: usize,

    pub sinusoid: SinusoidSpec,
    pub n_test: usize,
    pub test_noise_sd: f64,

    pub idx: Option<IdxPaths>,
    pub subsample_n: usize,
    pub test_subsample_n: Option<usize>,

    pub out_dir: PathBuf,
    pub record_timings: bool,
}

struct KeyMap {
    entries: BTreeMap<String, String>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self, RunnerError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(RunnerError::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(RunnerError::Config(format!("duplicate key '{key}'")));
            }
        }
        Ok(Self {
            entries,
            consumed: std::cell::RefCell::new(Vec::new()),
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().push(key.to_string());
        self.entries.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, RunnerError> {
        self.get(key)
            .ok_or_else(|| RunnerError::Config(format!("missing required key '{key}'")))
    }

    fn unknown_keys(&self) -> Vec<String> {
        let consumed = self.consumed.borrow();
        self.entries
            .keys()
            .filter(|k| !consumed.iter().any(|c| c == *k))
            .cloned()
            .collect()
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, RunnerError> {
    value
        .parse::<T>()
        .map_err(|_| RunnerError::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, RunnerError> {
    value
        .split(',')
        .map(|item| parse_as::<T>(key, item.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, RunnerError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(RunnerError::Config(format!(
            "key '{key}': expected true or false, got '{other}'"
        ))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RunnerError> {
        let map = KeyMap::parse(text)?;

        let version: u64 = parse_as("schema_version", map.require("schema_version")?)?;
        if version != SCHEMA_VERSION {
            return Err(RunnerError::Config(format!(
                "schema_version {version} unsupported (expected {SCHEMA_VERSION})"
            )));
        }
        let kind = ExperimentKind::parse(map.require("experiment")?)?;

        let widths = match map.get("widths") {
            Some(v) => parse_list::<usize>("widths", v)?,
            None => Vec::new(),
        };
        let epochs = match map.get("epochs") {
            Some(v) => parse_as("epochs", v)?,
            None => 300,
        };
        let loss = match map.get("loss") {
            Some("squared_error") | None => Loss::SquaredError,
            Some("cross_entropy") => Loss::CrossEntropy,
            Some(other) => return Err(RunnerError::Config(format!("unknown loss '{other}'"))),
        };
        let activation = match map.get("activation") {
            Some("relu") | None => Activation::Relu,
            Some("tanh") => Activation::Tanh,
            Some(other) => {
                return Err(RunnerError::Config(format!("unknown activation '{other}'")))
            }
        };
        let output_map = match map.get("output_map") {
            Some("identity") => OutputMap::Identity,
            Some("softmax") => OutputMap::Softmax,
            None => match kind {
                ExperimentKind::SmallDataSweep => OutputMap::Softmax,
                _ => OutputMap::Identity,
            },
            Some(other) => {
                return Err(RunnerError::Config(format!("unknown output_map '{other}'")))
            }
        };
        let batch = match map.get("batch_size") {
            Some("full") | None => Batch::Full,
            Some(v) => Batch::Size(parse_as("batch_size", v)?),
        };

        let sinusoid = SinusoidSpec {
            m_train: match map.get("m_train") {
                Some(v) => parse_as("m_train", v)?,
                None => 80,
            },
            amplitude: match map.get("amplitude") {
                Some(v) => parse_as("amplitude", v)?,
                None => 1.0,
            },
            frequency: match map.get("frequency") {
                Some(v) => parse_as("frequency", v)?,
                None => 1.0,
            },
            phase: match map.get("phase") {
                Some(v) => parse_as("phase", v)?,
                None => 0.0,
            },
            x_low: match map.get("x_low") {
                Some(v) => parse_as("x_low", v)?,
                None => -5.0,
            },
            x_high: match map.get("x_high") {
                Some(v) => parse_as("x_high", v)?,
                None => 5.0,
            },
            noise_sd: match map.get("noise_sd") {
                Some(v) => parse_as("noise_sd", v)?,
                None => 0.3,
            },
        };

        let idx = {
            let train_images = map.get("train_images").map(PathBuf::from);
            let train_labels = map.get("train_labels").map(PathBuf::from);
            let test_images = map.get("test_images").map(PathBuf::from);
            let test_labels = map.get("test_labels").map(PathBuf::from);
            match (train_images, train_labels, test_images, test_labels) {
                (Some(a), Some(b), Some(c), Some(d)) => Some(IdxPaths {
                    train_images: a,
                    train_labels: b,
                    test_images: c,
                    test_labels: d,
                }),
                (None, None, None, None) => None,
                _ => {
                    return Err(RunnerError::Config(
                        "IDX paths must be given as a complete set: train_images, \
                         train_labels, test_images, test_labels"
                            .into(),
                    ))
                }
            }
        };

        let cfg = Self {
            kind,
            widths,
            n_s: match map.get("n_s") {
                Some(v) => parse_as("n_s", v)?,
                None => 20,
            },
            n_o: match map.get("n_o") {
                Some(v) => parse_as("n_o", v)?,
                None => 5,
            },
            master_seed: match map.get("master_seed") {
                Some(v) => parse_as("master_seed", v)?,
                None => 0,
            },
            epochs,
            step_size: match map.get("step_size") {
                Some(v) => parse_as("step_size", v)?,
                // Image classification trains stably at 0.1; the sinusoid
                // needs smaller steps under full-batch momentum.
                None => match kind {
                    ExperimentKind::SmallDataSweep => 0.1,
                    _ => 0.01,
                },
            },
            momentum: match map.get("momentum") {
                Some(v) => parse_as("momentum", v)?,
                None => 0.9,
            },
            batch,
            loss,
            activation,
            output_map,
            stop_train_loss: match map.get("stop_train_loss") {
                Some(v) => Some(parse_as("stop_train_loss", v)?),
                None => None,
            },
            tune_step_size: match map.get("tune_step_size") {
                Some(v) => parse_bool("tune_step_size", v)?,
                None => false,
            },
            step_size_grid: match map.get("step_size_grid") {
                Some(v) => parse_list("step_size_grid", v)?,
                None => vec![0.3, 0.1, 0.03, 0.01],
            },
            val_fraction: match map.get("val_fraction") {
                Some(v) => parse_as("val_fraction", v)?,
                None => 0.25,
            },
            tune_epochs: match map.get("tune_epochs") {
                Some(v) => parse_as("tune_epochs", v)?,
                None => (epochs / 10).max(1),
            },
            ci_level: match map.get("ci_level") {
                Some(v) => parse_as("ci_level", v)?,
                None => 0.99,
            },
            ci_resamples: match map.get("ci_resamples") {
                Some(v) => parse_as("ci_resamples", v)?,
                None => 1000,
            },
            sinusoid,
            n_test: match map.get("n_test") {
                Some(v) => parse_as("n_test", v)?,
                None => 256,
            },
            test_noise_sd: match map.get("test_noise_sd") {
                Some(v) => parse_as("test_noise_sd", v)?,
                None => 0.0,
            },
            idx,
            subsample_n: match map.get("subsample_n") {
                Some(v) => parse_as("subsample_n", v)?,
                None => 100,
            },
            test_subsample_n: match map.get("test_subsample_n") {
                Some(v) => Some(parse_as("test_subsample_n", v)?),
                None => None,
            },
            out_dir: PathBuf::from(map.get("out_dir").unwrap_or("results")),
            record_timings: match map.get("record_timings") {
                Some(v) => parse_bool("record_timings", v)?,
                None => false,
            },
        };

        let unknown = map.unknown_keys();
        if !unknown.is_empty() {
            return Err(RunnerError::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.kind.is_sweep() {
            if self.widths.is_empty() {
                return Err(RunnerError::Config("sweep needs non-empty widths".into()));
            }
            if !self.widths.windows(2).all(|w| w[0] < w[1]) {
                return Err(RunnerError::Config(
                    "widths must be strictly increasing".into(),
                ));
            }
            if self.n_s < 2 || self.n_o < 2 {
                return Err(RunnerError::Config(format!(
                    "need n_s >= 2 and n_o >= 2, got {}x{}",
                    self.n_s, self.n_o
                )));
            }
        }
        if self.kind == ExperimentKind::SmallDataSweep && self.idx.is_none() {
            return Err(RunnerError::Config(
                "small_data_sweep needs IDX file paths".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(RunnerError::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.tune_step_size && self.step_size_grid.is_empty() {
            return Err(RunnerError::Config(
                "tune_step_size needs a non-empty step_size_grid".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(RunnerError::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
schema_version = 1
experiment = sinusoid_sweep
widths = 5, 25, 100
";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::SinusoidSweep);
        assert_eq!(cfg.widths, vec![5, 25, 100]);
        assert_eq!(cfg.n_s, 20);
        assert_eq!(cfg.n_o, 5);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.ci_level, 0.99);
        assert_eq!(cfg.sinusoid.m_train, 80);
        assert_eq!(cfg.batch, Batch::Full);
        assert!(!cfg.record_timings);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{MINIMAL}learning_rate = 0.1\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn missing_schema_version_is_rejected() {
        let err = ExperimentConfig::parse("experiment = sinusoid_sweep\nwidths = 5\n").unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn widths_must_increase() {
        let text = "schema_version = 1\nexperiment = sinusoid_sweep\nwidths = 5, 5\n";
        assert!(ExperimentConfig::parse(text).is_err());
        let text2 = "schema_version = 1\nexperiment = sinusoid_sweep\nwidths = 25, 5\n";
        assert!(ExperimentConfig::parse(text2).is_err());
    }

    #[test]
    fn batch_size_accepts_full_or_number() {
        let full = format!("{MINIMAL}batch_size = full\n");
        assert_eq!(ExperimentConfig::parse(&full).unwrap().batch, Batch::Full);
        let eight = format!("{MINIMAL}batch_size = 8\n");
        assert_eq!(
            ExperimentConfig::parse(&eight).unwrap().batch,
            Batch::Size(8)
        );
    }

    #[test]
    fn small_data_requires_idx_paths() {
        let text = "schema_version = 1\nexperiment = small_data_sweep\nwidths = 5, 10\n";
        assert!(ExperimentConfig::parse(text).is_err());
        let with_paths = "\
schema_version = 1
experiment = small_data_sweep
widths = 5, 10
train_images = data/train-images.idx
train_labels = data/train-labels.idx
test_images = data/test-images.idx
test_labels = data/test-labels.idx
";
        let cfg = ExperimentConfig::parse(with_paths).unwrap();
        assert!(cfg.idx.is_some());
        assert_eq!(cfg.subsample_n, 100);
        assert_eq!(cfg.output_map, OutputMap::Softmax);
    }

    #[test]
    fn partial_idx_paths_are_rejected() {
        let text = "\
schema_version = 1
experiment = small_data_sweep
widths = 5, 10
train_images = data/train-images.idx
";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn check_kinds_parse_without_widths() {
        let cfg =
            ExperimentConfig::parse("schema_version = 1\nexperiment = linear_check\n").unwrap();
        assert_eq!(cfg.kind, ExperimentKind::LinearCheck);
        assert!(!cfg.kind.is_sweep());
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let text = format!("{MINIMAL}epochs = 10\nepochs = 20\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\
# sweep preset
schema_version = 1

experiment = sinusoid_sweep
widths = 5, 25
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.widths, vec![5, 25]);
    }
}
