//! Polynomial feature expansion, column standardization and row partitioning.

use ipg_core::{LogisticCost, Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::features::{intensity_symmetry, BinarySet, SymmetryMode};

/// Mean and population standard deviation of one raw feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Standardized features with a trailing intercept column and `±1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub a: Matrix,
    pub b: Vector,
    /// Statistics of the raw (pre-standardization) columns, intercept
    /// excluded.
    pub column_stats: Vec<ColumnStats>,
    pub column_names: Vec<String>,
}

/// Computes per-column statistics of `raw`. Zero-variance columns are an
/// error.
pub fn fit_column_stats(raw: &Matrix, names: &[String]) -> Result<Vec<ColumnStats>> {
    let n = raw.nrows() as f64;
    (0..raw.ncols())
        .map(|j| {
            let col = raw.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 0.0) || !std.is_finite() {
                return Err(DataError::ZeroVariance {
                    column: j,
                    name: names.get(j).cloned().unwrap_or_default(),
                });
            }
            Ok(ColumnStats { mean, std })
        })
        .collect()
}

impl DesignMatrix {
    /// Standardizes `raw` with its own statistics and appends the intercept.
    pub fn fit(raw: &Matrix, labels: Vector, names: Vec<String>) -> Result<Self> {
        let stats = fit_column_stats(raw, &names)?;
        Self::with_stats(raw, labels, names, stats)
    }

    /// Standardizes `raw` with given statistics, e.g. those of a training
    /// split, and appends the intercept.
    pub fn with_stats(raw: &Matrix, labels: Vector, names: Vec<String>, stats: Vec<ColumnStats>) -> Result<Self> {
        let (n, p) = raw.shape();
        if stats.len() != p || labels.len() != n || names.len() != p {
            return Err(DataError::Config(format!(
                "raw features {n}x{p} do not match {} labels / {} column stats / {} names",
                labels.len(),
                stats.len(),
                names.len()
            )));
        }
        let a = Matrix::from_fn(n, p + 1, |i, j| {
            if j == p {
                1.0
            } else {
                (raw[(i, j)] - stats[j].mean) / stats[j].std
            }
        });
        let mut column_names = names;
        column_names.push("intercept".into());
        Ok(Self {
            a,
            b: labels,
            column_stats: stats,
            column_names,
        })
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    /// `m` contiguous row blocks of `n/m` rows each, in stored order.
    pub fn partition(&self, m: usize) -> Result<Vec<(Matrix, Vector)>> {
        let n = self.nrows();
        if m == 0 || n % m != 0 {
            return Err(DataError::Config(format!(
                "{n} rows cannot be split evenly across {m} agents"
            )));
        }
        let k = n / m;
        Ok((0..m)
            .map(|i| {
                (
                    self.a.rows(i * k, k).into_owned(),
                    self.b.rows(i * k, k).into_owned(),
                )
            })
            .collect())
    }

    /// One logistic cost per agent over [`Self::partition`].
    pub fn logistic_parts(&self, m: usize) -> Result<Vec<LogisticCost>> {
        self.partition(m)?
            .into_iter()
            .map(|(a, b)| LogisticCost::new(a, b).map_err(DataError::from))
            .collect()
    }

    /// Logistic cost over all rows.
    pub fn logistic(&self) -> Result<LogisticCost> {
        Ok(LogisticCost::new(self.a.clone(), self.b.clone())?)
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Per-image `(intensity, symmetry)` for every channel, as `n × 2c`
/// columns ordered intensity then symmetry within each channel.
pub fn base_features(sel: &BinarySet, mode: SymmetryMode) -> Matrix {
    let img = &sel.images;
    let c = img.channels();
    Matrix::from_fn(sel.len(), 2 * c, |i, j| {
        let (inten, sym) = intensity_symmetry(img.channel(i, j / 2), img.rows(), img.cols(), mode);
        if j % 2 == 0 {
            inten
        } else {
            sym
        }
    })
}

/// Raw single-channel features `[a1 a2 a1² a1·a2 a2²]`.
pub fn mnist_raw_features(sel: &BinarySet, mode: SymmetryMode) -> Result<(Matrix, Vec<String>)> {
    if sel.images.channels() != 1 {
        return Err(DataError::Config(format!(
            "expected single-channel images, got {} channels",
            sel.images.channels()
        )));
    }
    let base = base_features(sel, mode);
    let raw = Matrix::from_fn(sel.len(), 5, |i, j| {
        let (a1, a2) = (base[(i, 0)], base[(i, 1)]);
        [a1, a2, a1 * a1, a1 * a2, a2 * a2][j]
    });
    Ok((raw, names(&["intensity", "symmetry", "intensity^2", "intensity*symmetry", "symmetry^2"])))
}

/// Raw three-channel features `[a1 … a6 a1² … a6²]`, where `a1 … a6` are
/// the intensity and symmetry of the red, green and blue channels.
pub fn cifar_raw_features(sel: &BinarySet, mode: SymmetryMode) -> Result<(Matrix, Vec<String>)> {
    if sel.images.channels() != 3 {
        return Err(DataError::Config(format!(
            "expected three-channel images, got {} channels",
            sel.images.channels()
        )));
    }
    let base = base_features(sel, mode);
    let raw = Matrix::from_fn(sel.len(), 12, |i, j| {
        let v = base[(i, j % 6)];
        if j < 6 {
            v
        } else {
            v * v
        }
    });
    let mut cols = Vec::with_capacity(12);
    for sq in ["", "^2"] {
        for ch in ["red", "green", "blue"] {
            cols.push(format!("{ch}_intensity{sq}"));
            cols.push(format!("{ch}_symmetry{sq}"));
        }
    }
    Ok((raw, cols))
}

fn labels(sel: &BinarySet) -> Vector {
    Vector::from_column_slice(&sel.signs)
}

/// Width-6 MNIST design: five standardized polynomial columns and the
/// intercept.
pub fn build_design_mnist(sel: &BinarySet, mode: SymmetryMode) -> Result<DesignMatrix> {
    let (raw, names) = mnist_raw_features(sel, mode)?;
    DesignMatrix::fit(&raw, labels(sel), names)
}

/// Width-13 CIFAR-10 design: twelve standardized columns and the intercept.
pub fn build_design_cifar(sel: &BinarySet, mode: SymmetryMode) -> Result<DesignMatrix> {
    let (raw, names) = cifar_raw_features(sel, mode)?;
    DesignMatrix::fit(&raw, labels(sel), names)
}

/// Applies a training design's statistics to another split.
pub fn build_design_like(train: &DesignMatrix, sel: &BinarySet, mode: SymmetryMode) -> Result<DesignMatrix> {
    let (raw, names) = match sel.images.channels() {
        1 => mnist_raw_features(sel, mode)?,
        _ => cifar_raw_features(sel, mode)?,
    };
    DesignMatrix::with_stats(&raw, labels(sel), names, train.column_stats.clone())
}
