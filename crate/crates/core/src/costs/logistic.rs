use super::CostModel;
use crate::error::{Error, Result};
use crate::numkit::{spectral_norm, Matrix, Vector};

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))` without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Unregularized logistic loss `Σ_k log(1 + exp(−b_k a_kᵀx))` with labels
/// `b_k ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticCost {
    features: Matrix,
    labels: Vector,
}

impl LogisticCost {
    pub fn new(features: Matrix, labels: Vector) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                context: "logistic labels",
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(Error::Config(format!("logistic labels must be ±1, found {bad}")));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &Vector {
        &self.labels
    }

    fn gradient_of(a: &Matrix, b: &Vector, x: &Vector, scale: f64) -> Vector {
        let z = a * x;
        let w = Vector::from_fn(b.len(), |k, _| -b[k] * sigmoid(-b[k] * z[k]) * scale);
        a.tr_mul(&w)
    }

    fn hess_mat_of(a: &Matrix, x: &Vector, m: &Matrix, scale: f64) -> Matrix {
        let z = a * x;
        let mut am = a * m;
        for (k, mut row) in am.row_iter_mut().enumerate() {
            let s = sigmoid(z[k]);
            row *= scale * s * (1.0 - s);
        }
        a.tr_mul(&am)
    }
}

impl CostModel for LogisticCost {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn num_points(&self) -> usize {
        self.features.nrows()
    }

    fn value(&self, x: &Vector) -> f64 {
        let z = &self.features * x;
        z.iter()
            .zip(self.labels.iter())
            .map(|(z, b)| softplus(-b * z))
            .sum()
    }

    fn gradient(&self, x: &Vector) -> Vector {
        Self::gradient_of(&self.features, &self.labels, x, 1.0)
    }

    fn hess_vec(&self, x: &Vector, v: &Vector) -> Vector {
        let z = &self.features * x;
        let mut av = &self.features * v;
        for (k, e) in av.iter_mut().enumerate() {
            let s = sigmoid(z[k]);
            *e *= s * (1.0 - s);
        }
        self.features.tr_mul(&av)
    }

    fn hess_mat(&self, x: &Vector, m: &Matrix) -> Matrix {
        Self::hess_mat_of(&self.features, x, m, 1.0)
    }

    fn sampled_gradient(&self, x: &Vector, rows: &[usize], scale: f64) -> Vector {
        let a = self.features.select_rows(rows.iter());
        let b = self.labels.select_rows(rows.iter());
        Self::gradient_of(&a, &b, x, scale)
    }

    fn sampled_hess_mat(&self, x: &Vector, rows: &[usize], scale: f64, m: &Matrix) -> Matrix {
        let a = self.features.select_rows(rows.iter());
        Self::hess_mat_of(&a, x, m, scale)
    }

    /// `σ(1−σ) ≤ ¼`, so `¼‖A‖²` bounds the Hessian everywhere.
    fn hessian_bound(&self) -> Option<f64> {
        Some(0.25 * spectral_norm(&self.features).powi(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn value_at_origin_is_n_log_two() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let c = LogisticCost::new(a, Vector::from_vec(vec![1.0, -1.0, 1.0])).unwrap();
        assert_relative_eq!(c.value(&Vector::zeros(2)), 3.0 * 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn value_decreases_to_zero_along_correct_direction() {
        let c = LogisticCost::new(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, 1.0)).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 1.0, 5.0, 20.0, 100.0, 800.0] {
            let v = c.value(&Vector::from_element(1, t));
            assert!(v.is_finite() && v < prev);
            prev = v;
        }
        assert!(prev < 1e-300);
        // the opposite direction stays finite as well
        let v = c.value(&Vector::from_element(1, -800.0));
        assert_relative_eq!(v, 800.0, epsilon = 1e-9);
    }

    #[test]
    fn gradient_at_origin_is_half_label_sum() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let b = Vector::from_vec(vec![1.0, -1.0, 1.0]);
        let c = LogisticCost::new(a.clone(), b.clone()).unwrap();
        let expected = -0.5 * a.tr_mul(&b);
        assert_relative_eq!(c.gradient(&Vector::zeros(2)), expected, epsilon = 1e-15);
    }

    #[test]
    fn balanced_identical_rows_have_zero_gradient() {
        let a = Matrix::from_row_slice(4, 2, &[0.3, -1.2, 0.3, -1.2, 0.3, -1.2, 0.3, -1.2]);
        let c = LogisticCost::new(a, Vector::from_vec(vec![1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(c.gradient(&Vector::zeros(2)), Vector::zeros(2));
    }

    #[test]
    fn hess_mat_examples() {
        let a = Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let c = LogisticCost::new(a, Vector::from_element(1, -1.0)).unwrap();
        let x = Vector::zeros(3);
        assert_eq!(c.hess_mat(&x, &Matrix::zeros(3, 3)), Matrix::zeros(3, 3));
        let h = c.hess_mat(&x, &Matrix::identity(3, 3));
        let mut expected = Matrix::zeros(3, 3);
        expected[(0, 0)] = 0.25;
        assert_eq!(h, expected);
    }

    #[test]
    fn rejects_non_pm_one_labels() {
        let err = LogisticCost::new(Matrix::zeros(2, 2), Vector::from_vec(vec![0.0, 1.0]));
        assert!(err.is_err());
    }
}
