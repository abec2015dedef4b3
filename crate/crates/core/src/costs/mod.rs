//! Local cost models `f^i` exposing the oracles the protocol consumes:
//! value, gradient and Hessian products.

mod logistic;
mod quadratic;

use std::fmt::Debug;
use std::sync::Arc;

pub use logistic::{sigmoid, softplus, LogisticCost};
pub use quadratic::{nqm_build, nqm_hessian_diag, QuadraticCost, QuadraticFactor};

use crate::numkit::{Matrix, Vector};

/// A convex, twice differentiable local cost built from `num_points` data
/// points. Row indices passed to the `sampled_*` oracles refer to those points.
pub trait CostModel: Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn num_points(&self) -> usize;

    fn value(&self, x: &Vector) -> f64;

    fn gradient(&self, x: &Vector) -> Vector;

    /// `∇²f(x) · v`
    fn hess_vec(&self, x: &Vector, v: &Vector) -> Vector;

    /// `∇²f(x) · M`; column `j` equals `hess_vec(x, M[:, j])`.
    fn hess_mat(&self, x: &Vector, m: &Matrix) -> Matrix;

    /// Gradient of the data terms over `rows`, multiplied by `scale`, plus any
    /// data-independent terms. With `scale = n / rows.len()` and rows drawn
    /// uniformly this is an unbiased estimate of [`CostModel::gradient`].
    fn sampled_gradient(&self, x: &Vector, rows: &[usize], scale: f64) -> Vector;

    /// Hessian-times-matrix restricted to `rows`, multiplied by `scale`.
    fn sampled_hess_mat(&self, x: &Vector, rows: &[usize], scale: f64, m: &Matrix) -> Matrix;

    /// A global upper bound on `λmax(∇²f(x))` when one is known in closed form.
    fn hessian_bound(&self) -> Option<f64> {
        None
    }

    /// Dense Hessian at `x`; intended for small-scale oracles and tests.
    fn hessian(&self, x: &Vector) -> Matrix {
        let d = self.dim();
        self.hess_mat(x, &Matrix::identity(d, d))
    }
}

/// The aggregate cost `f = Σ f^i` over a set of local costs. Rows are
/// numbered consecutively across the parts.
#[derive(Debug, Clone)]
pub struct Aggregate {
    parts: Vec<Arc<dyn CostModel>>,
    dim: usize,
}

impl Aggregate {
    pub fn new(parts: Vec<Arc<dyn CostModel>>) -> Self {
        let dim = parts.first().map(|p| p.dim()).unwrap_or(0);
        assert!(
            parts.iter().all(|p| p.dim() == dim),
            "aggregate parts must share a dimension"
        );
        Self { parts, dim }
    }

    pub fn parts(&self) -> &[Arc<dyn CostModel>] {
        &self.parts
    }

    fn split_rows(&self, rows: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.parts.len()];
        for &r in rows {
            let mut offset = 0;
            for (i, p) in self.parts.iter().enumerate() {
                if r < offset + p.num_points() {
                    out[i].push(r - offset);
                    break;
                }
                offset += p.num_points();
            }
        }
        out
    }
}

impl CostModel for Aggregate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_points(&self) -> usize {
        self.parts.iter().map(|p| p.num_points()).sum()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.parts.iter().map(|p| p.value(x)).sum()
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.parts
            .iter()
            .fold(Vector::zeros(self.dim), |acc, p| acc + p.gradient(x))
    }

    fn hess_vec(&self, x: &Vector, v: &Vector) -> Vector {
        self.parts
            .iter()
            .fold(Vector::zeros(self.dim), |acc, p| acc + p.hess_vec(x, v))
    }

    fn hess_mat(&self, x: &Vector, m: &Matrix) -> Matrix {
        self.parts
            .iter()
            .fold(Matrix::zeros(self.dim, m.ncols()), |acc, p| acc + p.hess_mat(x, m))
    }

    fn sampled_gradient(&self, x: &Vector, rows: &[usize], scale: f64) -> Vector {
        self.parts
            .iter()
            .zip(self.split_rows(rows))
            .fold(Vector::zeros(self.dim), |acc, (p, r)| {
                acc + p.sampled_gradient(x, &r, scale)
            })
    }

    fn sampled_hess_mat(&self, x: &Vector, rows: &[usize], scale: f64, m: &Matrix) -> Matrix {
        self.parts
            .iter()
            .zip(self.split_rows(rows))
            .fold(Matrix::zeros(self.dim, m.ncols()), |acc, (p, r)| {
                acc + p.sampled_hess_mat(x, &r, scale, m)
            })
    }

    fn hessian_bound(&self) -> Option<f64> {
        self.parts
            .iter()
            .map(|p| p.hessian_bound())
            .sum::<Option<f64>>()
    }
}
