use nalgebra::SymmetricEigen;

use super::CostModel;
use crate::error::{Error, Result};
use crate::numkit::{spectral_norm, Matrix, Vector};

/// Row factor `A_i` of a quadratic cost, so that the local Hessian is `A_iᵀA_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticFactor {
    /// Explicit `n × d` data matrix.
    Dense(Matrix),
    /// Rows that are scaled unit vectors: row `k` is `scales[k] · e_{cols[k]}`.
    /// This is how rows of a diagonal matrix are held without storing zeros.
    ScaledUnitRows {
        dim: usize,
        cols: Vec<usize>,
        scales: Vec<f64>,
    },
}

impl QuadraticFactor {
    pub fn nrows(&self) -> usize {
        match self {
            Self::Dense(a) => a.nrows(),
            Self::ScaledUnitRows { cols, .. } => cols.len(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Self::Dense(a) => a.ncols(),
            Self::ScaledUnitRows { dim, .. } => *dim,
        }
    }

    /// Dense copy of the factor; only for small instances.
    pub fn to_dense(&self) -> Matrix {
        match self {
            Self::Dense(a) => a.clone(),
            Self::ScaledUnitRows { dim, cols, scales } => {
                let mut a = Matrix::zeros(cols.len(), *dim);
                for (k, (&c, &s)) in cols.iter().zip(scales).enumerate() {
                    a[(k, c)] = s;
                }
                a
            }
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            Self::Dense(a) => Self::Dense(a.select_rows(rows.iter())),
            Self::ScaledUnitRows { dim, cols, scales } => Self::ScaledUnitRows {
                dim: *dim,
                cols: rows.iter().map(|&r| cols[r]).collect(),
                scales: rows.iter().map(|&r| scales[r]).collect(),
            },
        }
    }

    /// `scale · AᵀA · M`
    fn gram_times(&self, m: &Matrix, scale: f64) -> Matrix {
        match self {
            Self::Dense(a) => a.tr_mul(&(a * m)) * scale,
            Self::ScaledUnitRows { dim, cols, scales } => {
                let mut out = Matrix::zeros(*dim, m.ncols());
                // Column-major storage: walk columns in the outer loop.
                for j in 0..m.ncols() {
                    for (&c, &s) in cols.iter().zip(scales) {
                        out[(c, j)] += scale * s * s * m[(c, j)];
                    }
                }
                out
            }
        }
    }

    fn gram_times_vec(&self, v: &Vector, scale: f64) -> Vector {
        match self {
            Self::Dense(a) => a.tr_mul(&(a * v)) * scale,
            Self::ScaledUnitRows { dim, cols, scales } => {
                let mut out = Vector::zeros(*dim);
                for (&c, &s) in cols.iter().zip(scales) {
                    out[c] += scale * s * s * v[c];
                }
                out
            }
        }
    }

    fn half_sq_norm(&self, x: &Vector) -> f64 {
        match self {
            Self::Dense(a) => 0.5 * (a * x).norm_squared(),
            Self::ScaledUnitRows { cols, scales, .. } => {
                0.5 * cols
                    .iter()
                    .zip(scales)
                    .map(|(&c, &s)| (s * x[c]).powi(2))
                    .sum::<f64>()
            }
        }
    }
}

/// `f(x) = ½ xᵀ(AᵀA)x − bᵀx + c`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    factor: QuadraticFactor,
    linear: Option<Vector>,
    offset: f64,
}

impl QuadraticCost {
    pub fn new(factor: QuadraticFactor) -> Self {
        Self {
            factor,
            linear: None,
            offset: 0.0,
        }
    }

    pub fn with_affine(factor: QuadraticFactor, linear: Vector, offset: f64) -> Result<Self> {
        if linear.len() != factor.ncols() {
            return Err(Error::Dimension {
                context: "quadratic linear term",
                expected: factor.ncols(),
                actual: linear.len(),
            });
        }
        Ok(Self {
            factor,
            linear: Some(linear),
            offset,
        })
    }

    /// A cost whose Hessian is the given symmetric PSD matrix, using the
    /// symmetric square root as factor.
    pub fn from_hessian(h: &Matrix) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::Config("hessian must be square".into()));
        }
        let sym = (h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        if let Some(neg) = eig.eigenvalues.iter().find(|&&l| l < -1e-12 * h.norm()) {
            return Err(Error::Config(format!("hessian is not PSD (eigenvalue {neg})")));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let sqrt_h = &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Ok(Self::new(QuadraticFactor::Dense(sqrt_h)))
    }

    pub fn factor(&self) -> &QuadraticFactor {
        &self.factor
    }

    pub fn linear(&self) -> Option<&Vector> {
        self.linear.as_ref()
    }

    /// Shape `(rows, d)` of the data matrix held by this cost.
    pub fn factor_shape(&self) -> (usize, usize) {
        (self.factor.nrows(), self.factor.ncols())
    }

    /// Diagonal of the Hessian `AᵀA`.
    pub fn hessian_diag(&self) -> Vector {
        match &self.factor {
            QuadraticFactor::Dense(a) => {
                Vector::from_fn(a.ncols(), |j, _| a.column(j).norm_squared())
            }
            QuadraticFactor::ScaledUnitRows { dim, cols, scales } => {
                let mut out = Vector::zeros(*dim);
                for (&c, &s) in cols.iter().zip(scales) {
                    out[c] += s * s;
                }
                out
            }
        }
    }

    /// Splits the factor's rows into `m` contiguous blocks of equal size. The
    /// affine terms are divided evenly so the parts sum to this cost.
    pub fn partition_rows(&self, m: usize) -> Result<Vec<QuadraticCost>> {
        let n = self.factor.nrows();
        if m == 0 || n % m != 0 {
            return Err(Error::Config(format!(
                "{m} agents do not evenly divide {n} data rows"
            )));
        }
        let block = n / m;
        Ok((0..m)
            .map(|i| {
                let rows: Vec<usize> = (i * block..(i + 1) * block).collect();
                QuadraticCost {
                    factor: self.factor.select(&rows),
                    linear: self.linear.as_ref().map(|b| b / m as f64),
                    offset: self.offset / m as f64,
                }
            })
            .collect())
    }

    fn linear_part(&self) -> Vector {
        self.linear
            .clone()
            .unwrap_or_else(|| Vector::zeros(self.factor.ncols()))
    }
}

impl CostModel for QuadraticCost {
    fn dim(&self) -> usize {
        self.factor.ncols()
    }

    fn num_points(&self) -> usize {
        self.factor.nrows()
    }

    fn value(&self, x: &Vector) -> f64 {
        let lin = self.linear.as_ref().map(|b| b.dot(x)).unwrap_or(0.0);
        self.factor.half_sq_norm(x) - lin + self.offset
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.factor.gram_times_vec(x, 1.0) - self.linear_part()
    }

    fn hess_vec(&self, _x: &Vector, v: &Vector) -> Vector {
        self.factor.gram_times_vec(v, 1.0)
    }

    fn hess_mat(&self, _x: &Vector, m: &Matrix) -> Matrix {
        self.factor.gram_times(m, 1.0)
    }

    fn sampled_gradient(&self, x: &Vector, rows: &[usize], scale: f64) -> Vector {
        self.factor.select(rows).gram_times_vec(x, scale) - self.linear_part()
    }

    fn sampled_hess_mat(&self, _x: &Vector, rows: &[usize], scale: f64, m: &Matrix) -> Matrix {
        self.factor.select(rows).gram_times(m, scale)
    }

    fn hessian_bound(&self) -> Option<f64> {
        Some(match &self.factor {
            QuadraticFactor::Dense(a) => spectral_norm(a).powi(2),
            QuadraticFactor::ScaledUnitRows { .. } => {
                self.hessian_diag().iter().fold(0.0_f64, |m, v| m.max(*v))
            }
        })
    }
}

/// Diagonal `(1, 1/2, …, 1/d)` of the noisy-quadratic-model Hessian.
pub fn nqm_hessian_diag(d: usize) -> Vector {
    Vector::from_fn(d, |i, _| 1.0 / (i + 1) as f64)
}

/// Noisy quadratic model split across `m` agents.
///
/// The model's Hessian is `H = diag(1, 1/2, …, 1/d)`; agent `i` holds the
/// contiguous block of rows `i·d/m .. (i+1)·d/m` of `√H`, a `(d/m) × d` data
/// matrix, so the local Hessians sum to `H` exactly.
pub fn nqm_build(d: usize, m: usize) -> Result<Vec<QuadraticCost>> {
    if d == 0 || m == 0 || d % m != 0 {
        return Err(Error::Config(format!("{m} agents do not evenly divide d = {d}")));
    }
    let full = QuadraticCost::new(QuadraticFactor::ScaledUnitRows {
        dim: d,
        cols: (0..d).collect(),
        scales: nqm_hessian_diag(d).iter().map(|h| h.sqrt()).collect(),
    });
    full.partition_rows(m)
}
