//! Similarity matrices from feature data, and the spectral baselines that
//! turn an indefinite kernel into a PSD one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::symlin::{eig, SymmetricMatrix};

/// Added on top of `-lambda_min` by the shift transform so the result is
/// strictly PSD.
pub const SHIFT_MARGIN: f64 = 1e-8;

/// Feature vectors with labels in `{-1, +1}`.
///
/// Points are stored densely; points of different lengths are compared as if
/// padded with zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::validation(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(Error::validation(format!("label {bad} is not -1 or +1")));
        }
        Ok(LabeledDataset { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest feature count over all points.
    pub fn dim(&self) -> usize {
        self.points.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Maps every feature to 1 if it exceeds `threshold`, else 0.
    pub fn binarize(&self, threshold: f64) -> LabeledDataset {
        LabeledDataset {
            points: self
                .points
                .iter()
                .map(|p| p.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    /// Concatenation `self ∪ other`, keeping order.
    pub fn concat(&self, other: &LabeledDataset) -> LabeledDataset {
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset { points, labels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    /// `x^T z`
    Linear,
    /// `exp(-gamma |x - z|^2)`
    Gaussian { gamma: f64 },
    /// `tanh(a x^T z + b)`
    Sigmoid { a: f64, b: f64 },
    /// `|A ∩ B| / min(|A|, |B|)` over the supports of binary vectors, 0 if
    /// either support is empty.
    Simpson,
    /// Matrix supplied from a file; cannot be evaluated on features.
    Precomputed,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::validation(format!("gaussian gamma must be > 0, got {gamma}")))
            }
            KernelSpec::Sigmoid { a, b } if !(a.is_finite() && b.is_finite()) => {
                Err(Error::validation("sigmoid parameters must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_indefinite_family(&self) -> bool {
        matches!(self, KernelSpec::Sigmoid { .. } | KernelSpec::Simpson)
    }

    /// Single kernel evaluation. Inputs must already be validated for the kind.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, z),
            KernelSpec::Gaussian { gamma } => (-gamma * squared_distance(x, z)).exp(),
            KernelSpec::Sigmoid { a, b } => (a * dot(x, z) + b).tanh(),
            KernelSpec::Simpson => {
                let na = x.iter().filter(|&&v| v != 0.0).count();
                let nb = z.iter().filter(|&&v| v != 0.0).count();
                if na == 0 || nb == 0 {
                    return 0.0;
                }
                let both = x.iter().zip(z).filter(|(&p, &q)| p != 0.0 && q != 0.0).count();
                both as f64 / na.min(nb) as f64
            }
            KernelSpec::Precomputed => f64::NAN,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Gaussian { gamma } => write!(f, "gaussian:gamma={gamma}"),
            KernelSpec::Sigmoid { a, b } => write!(f, "sigmoid:a={a},b={b}"),
            KernelSpec::Simpson => write!(f, "simpson"),
            KernelSpec::Precomputed => write!(f, "precomputed"),
        }
    }
}

/// Parses `linear`, `gaussian:gamma=G`, `sigmoid:a=A,b=B`, `simpson`,
/// `precomputed`.
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = match s.split_once(':') {
            Some((k, p)) => (k.trim(), p.trim()),
            None => (s.trim(), ""),
        };
        let get = |name: &str| -> Result<Option<f64>> {
            for part in params.split(',').filter(|p| !p.trim().is_empty()) {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| Error::validation(format!("bad kernel parameter '{part}'")))?;
                if key.trim() == name {
                    return value
                        .trim()
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|e| Error::validation(format!("kernel parameter {name}: {e}")));
                }
            }
            Ok(None)
        };
        let spec = match kind.to_ascii_lowercase().as_str() {
            "linear" => KernelSpec::Linear,
            "gaussian" | "rbf" => KernelSpec::Gaussian {
                gamma: get("gamma")?.unwrap_or(1.0),
            },
            "sigmoid" => KernelSpec::Sigmoid {
                a: get("a")?.unwrap_or(1.0),
                b: get("b")?.unwrap_or(0.0),
            },
            "simpson" => KernelSpec::Simpson,
            "precomputed" => KernelSpec::Precomputed,
            other => return Err(Error::validation(format!("unknown kernel kind '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

fn squared_distance(x: &[f64], z: &[f64]) -> f64 {
    let common = x.len().min(z.len());
    let mut acc: f64 = x[..common]
        .iter()
        .zip(&z[..common])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    acc += x[common..].iter().map(|v| v * v).sum::<f64>();
    acc += z[common..].iter().map(|v| v * v).sum::<f64>();
    acc
}

fn check_inputs(data: &LabeledDataset, spec: &KernelSpec) -> Result<()> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    match spec {
        KernelSpec::Precomputed => Err(Error::validation(
            "a precomputed kernel cannot be evaluated on features; load it from a file",
        )),
        KernelSpec::Simpson => {
            if data.points.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
                Err(Error::validation(
                    "simpson kernel requires binary (0/1) features; binarize first",
                ))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// `K[i][j] = k(x_i, x_j)`.
pub fn gram(data: &LabeledDataset, spec: &KernelSpec) -> Result<SymmetricMatrix> {
    check_inputs(data, spec)?;
    let n = data.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| spec.eval(&data.points[i], &data.points[j])).collect())
        .collect();
    SymmetricMatrix::from_fn(n, |i, j| rows[i][j - i])
}

/// `n_test x n_train` matrix with entries `k(test_i, train_j)`.
pub fn cross_gram(
    train: &LabeledDataset,
    test: &LabeledDataset,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    check_inputs(train, spec)?;
    if test.is_empty() {
        return Ok(DMatrix::zeros(0, train.len()));
    }
    check_inputs(test, spec)?;
    let rows: Vec<Vec<f64>> = test
        .points
        .par_iter()
        .map(|t| train.points.iter().map(|x| spec.eval(t, x)).collect())
        .collect();
    Ok(DMatrix::from_fn(test.len(), train.len(), |i, j| rows[i][j]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralMode {
    /// Zero the negative eigenvalues.
    Denoise,
    /// Replace every eigenvalue by its absolute value.
    Flip,
    /// Add `max(0, -lambda_min + SHIFT_MARGIN)` to every eigenvalue.
    Shift,
}

impl FromStr for SpectralMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "denoise" | "clip" => Ok(SpectralMode::Denoise),
            "flip" => Ok(SpectralMode::Flip),
            "shift" => Ok(SpectralMode::Shift),
            other => Err(Error::validation(format!("unknown spectral mode '{other}'"))),
        }
    }
}

impl fmt::Display for SpectralMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectralMode::Denoise => "denoise",
            SpectralMode::Flip => "flip",
            SpectralMode::Shift => "shift",
        })
    }
}

const PSD_ROUNDOFF: f64 = 1e-12;

pub fn spectral_transform(k: &SymmetricMatrix, mode: SpectralMode) -> Result<SymmetricMatrix> {
    let es = eig(k)?;
    // round-off negatives on a PSD input are not worth a transform
    let psd_floor = -PSD_ROUNDOFF * es.values.amax();
    if es.min_value() >= psd_floor {
        return Ok(k.clone());
    }
    match mode {
        SpectralMode::Denoise => {
            Ok(es.reconstruct_with(|l| l.max(0.0)))
        }
        SpectralMode::Flip => {
            Ok(es.reconstruct_with(f64::abs))
        }
        SpectralMode::Shift => {
            let lmin = es.min_value();
            Ok(k.add_identity(-lmin + SHIFT_MARGIN))
        }
    }
}
