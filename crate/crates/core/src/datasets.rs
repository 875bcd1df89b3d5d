//! Data regimes: noisy sinusoid regression, IDX-format image classification
//! with small-data subsampling, and bootstrap replicate training sets.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::numkit::{Matrix, NumError, RngStream};

const IDX_IMAGES_MAGIC: u32 = 2051; // 0x00000803
const IDX_LABELS_MAGIC: u32 = 2049; // 0x00000801

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("subsample size {requested} out of range 1..={available}")]
    SubsampleOutOfRange { requested: usize, available: usize },
    #[error("bad IDX magic in {file}: expected {expected}, found {found}")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("IDX payload size mismatch in {file}: expected {expected} bytes, found {found}")]
    PayloadSize {
        file: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Input/target pairs. Classification targets are one-hot rows; regression
/// targets are a single column.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Matrix,
    targets: Matrix,
    kind: TaskKind,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, kind: TaskKind) -> Result<Self, DataError> {
        if inputs.rows() != targets.rows() {
            return Err(DataError::InvalidSpec(format!(
                "inputs have {} rows but targets have {}",
                inputs.rows(),
                targets.rows()
            )));
        }
        if kind == TaskKind::Classification {
            for r in 0..targets.rows() {
                if !is_one_hot(targets.row(r)) {
                    return Err(DataError::InvalidSpec(format!(
                        "classification target row {r} is not one-hot"
                    )));
                }
            }
        }
        Ok(Self {
            inputs,
            targets,
            kind,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // m >= 1 is a construction invariant
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }

    fn take_rows(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let d = self.input_dim();
        let k = self.target_dim();
        let mut in_vals = Vec::with_capacity(indices.len() * d);
        let mut tg_vals = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            in_vals.extend_from_slice(self.inputs.row(i));
            tg_vals.extend_from_slice(self.targets.row(i));
        }
        Dataset::new(
            Matrix::new(indices.len(), d, in_vals)?,
            Matrix::new(indices.len(), k, tg_vals)?,
            self.kind,
        )
    }
}

pub fn is_one_hot(row: &[f64]) -> bool {
    let mut ones = 0;
    for &v in row {
        if v == 1.0 {
            ones += 1;
        } else if v != 0.0 {
            return false;
        }
    }
    ones == 1
}

/// Noisy sinusoid regression task: inputs uniform on `[x_low, x_high]`,
/// targets `amplitude * sin(frequency * x + phase)` plus centered Gaussian
/// noise with standard deviation `noise_sd`.
#[derive(Debug, Clone)]
pub struct SinusoidSpec {
    pub m_train: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub x_low: f64,
    pub x_high: f64,
    pub noise_sd: f64,
}

impl Default for SinusoidSpec {
    fn default() -> Self {
        Self {
            m_train: 80,
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
            x_low: -5.0,
            x_high: 5.0,
            noise_sd: 0.3,
        }
    }
}

impl SinusoidSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.m_train == 0 {
            return Err(DataError::InvalidSpec("m_train must be >= 1".into()));
        }
        if !(self.x_low < self.x_high) {
            return Err(DataError::InvalidSpec(format!(
                "x range [{}, {}] is empty",
                self.x_low, self.x_high
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(DataError::InvalidSpec(format!(
                "noise_sd must be finite and >= 0, got {}",
                self.noise_sd
            )));
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("frequency", self.frequency),
            ("phase", self.phase),
        ] {
            if !v.is_finite() {
                return Err(DataError::InvalidSpec(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Noiseless target value at `x`.
    pub fn noiseless_value(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x + self.phase).sin()
    }
}

pub fn gen_sinusoid(spec: &SinusoidSpec, stream: &mut RngStream) -> Result<Dataset, DataError> {
    spec.validate()?;
    let m = spec.m_train;
    let xs = stream.uniform(m, spec.x_low, spec.x_high)?;
    let noise = stream.gaussian(m, 0.0, spec.noise_sd * spec.noise_sd)?;
    let targets: Vec<f64> = xs
        .iter()
        .zip(&noise)
        .map(|(&x, &e)| spec.noiseless_value(x) + e)
        .collect();
    Dataset::new(
        Matrix::new(m, 1, xs)?,
        Matrix::new(m, 1, targets)?,
        TaskKind::Regression,
    )
}

/// Load an IDX image/label file pair into a classification dataset.
/// Pixels are scaled to `[0, 1]` and images flattened to one row each;
/// labels are one-hot encoded with width `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let image_bytes = fs::read(images_path).map_err(|source| DataError::Io {
        path: images_path.display().to_string(),
        source,
    })?;
    let label_bytes = fs::read(labels_path).map_err(|source| DataError::Io {
        path: labels_path.display().to_string(),
        source,
    })?;
    parse_idx_pair(&image_bytes, &label_bytes)
}

fn parse_idx_pair(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset, DataError> {
    let (n_images, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let (n_labels, labels) = parse_idx_labels(label_bytes)?;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let d = rows * cols;
    let inputs: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let k = usize::from(labels.iter().copied().max().unwrap_or(0)) + 1;
    let mut targets = vec![0.0; n_images * k];
    for (i, &label) in labels.iter().enumerate() {
        targets[i * k + usize::from(label)] = 1.0;
    }
    Dataset::new(
        Matrix::new(n_images, d, inputs)?,
        Matrix::new(n_images, k, targets)?,
        TaskKind::Classification,
    )
}

fn read_be_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::PayloadSize {
            file,
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), DataError> {
    const FILE: &str = "images";
    let magic = read_be_u32(bytes, 0, FILE)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            file: FILE,
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_be_u32(bytes, 4, FILE)? as usize;
    let rows = read_be_u32(bytes, 8, FILE)? as usize;
    let cols = read_be_u32(bytes, 12, FILE)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(DataError::PayloadSize {
            file: FILE,
            expected,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, &bytes[16..]))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<(usize, &[u8]), DataError> {
    const FILE: &str = "labels";
    let magic = read_be_u32(bytes, 0, FILE)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            file: FILE,
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_be_u32(bytes, 4, FILE)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(DataError::PayloadSize {
            file: FILE,
            expected,
            found: bytes.len(),
        });
    }
    Ok((n, &bytes[8..]))
}

/// `n` rows drawn without replacement, task kind preserved.
pub fn subsample(data: &Dataset, n: usize, stream: &mut RngStream) -> Result<Dataset, DataError> {
    let m = data.len();
    if n == 0 || n > m {
        return Err(DataError::SubsampleOutOfRange {
            requested: n,
            available: m,
        });
    }
    let indices = stream.sample_indices(m, n);
    data.take_rows(&indices)
}

/// `m` rows drawn with replacement from an `m`-row dataset.
pub fn bootstrap_replicate(data: &Dataset, stream: &mut RngStream) -> Result<Dataset, DataError> {
    let m = data.len();
    let indices: Vec<usize> = (0..m).map(|_| stream.next_index(m)).collect();
    data.take_rows(&indices)
}

/// Random split into `(holdout, rest)` with `n_holdout` rows held out.
/// Both parts must end up non-empty.
pub fn split_random(
    data: &Dataset,
    n_holdout: usize,
    stream: &mut RngStream,
) -> Result<(Dataset, Dataset), DataError> {
    let m = data.len();
    if n_holdout == 0 || n_holdout >= m {
        return Err(DataError::SubsampleOutOfRange {
            requested: n_holdout,
            available: m,
        });
    }
    let perm = stream.sample_indices(m, m);
    let holdout = data.take_rows(&perm[..n_holdout])?;
    let rest = data.take_rows(&perm[n_holdout..])?;
    Ok((holdout, rest))
}
