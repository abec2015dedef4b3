use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{uniform_open, Matrix, SeededRng, Vector};

/// Zero-mean Gaussian vector `L·z`, `z ~ N(0, I)`, with covariance `LLᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianNoise {
    /// Independent components with the given standard deviations.
    Diagonal { std: Vector },
    /// Explicit `d × k` factor `L`.
    Dense { factor: Matrix },
}

impl GaussianNoise {
    /// Noise with diagonal covariance `diag(cov_diag) · scale²`.
    pub fn from_diagonal_covariance(cov_diag: &Vector, scale: f64) -> Self {
        Self::Diagonal {
            std: cov_diag.map(|c| c.max(0.0).sqrt() * scale),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal { std } => std.len(),
            Self::Dense { factor } => factor.nrows(),
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Vector {
        match self {
            Self::Diagonal { std } => std.map(|s| s * rng.normal()),
            Self::Dense { factor } => {
                let z = Vector::from_fn(factor.ncols(), |_, _| rng.normal());
                factor * z
            }
        }
    }
}

/// Which iterated variables receive process noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTargets {
    /// Every iterated variable: the estimate, preconditioner, momenta,
    /// moment estimates and inverse-Hessian approximation.
    #[default]
    All,
    EstimateOnly,
}

/// Additive perturbation applied to optimizer state after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    /// Independent uniform `(lo, hi)` draws added to every targeted entry.
    ProcessUniform {
        lo: f64,
        hi: f64,
        #[serde(default)]
        targets: NoiseTargets,
    },
    /// Gaussian corruption of gradient queries with covariance `scale² · H`,
    /// `H` the aggregate Hessian. Applied once to the aggregate gradient, or
    /// per agent with the local Hessians when `per_agent` is set.
    GradientGaussian {
        #[serde(default = "unit")]
        scale: f64,
        #[serde(default)]
        per_agent: bool,
    },
}

fn unit() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::ProcessUniform { lo, hi, .. } if !(lo <= hi) => Err(Error::Config(format!(
                "process noise bounds need lo <= hi, got ({lo}, {hi})"
            ))),
            Self::GradientGaussian { scale, .. } if !(*scale >= 0.0) => Err(Error::Config(
                format!("gradient noise scale must be >= 0, got {scale}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn process_targets(&self) -> Option<NoiseTargets> {
        match self {
            Self::ProcessUniform { targets, .. } => Some(*targets),
            _ => None,
        }
    }
}

/// Adds independent uniform draws to every entry of `vars`. Returns whether
/// any variable was perturbed; specs other than `ProcessUniform` and a
/// degenerate `lo = hi = 0` interval leave the state untouched.
pub fn inject_process_noise(
    vars: Vec<&mut [f64]>,
    spec: &NoiseSpec,
    rng: &mut SeededRng,
) -> Result<bool> {
    let (lo, hi) = match spec {
        NoiseSpec::ProcessUniform { lo, hi, .. } => (*lo, *hi),
        _ => return Ok(false),
    };
    spec.validate()?;
    if lo == 0.0 && hi == 0.0 {
        return Ok(false);
    }
    for var in vars {
        for e in var.iter_mut() {
            *e += if lo == hi { lo } else { uniform_open(rng, lo, hi) };
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_and_zero_interval_are_identity() {
        let mut x = vec![1.0, 2.0];
        let mut rng = SeededRng::new(1, 9);
        assert!(!inject_process_noise(vec![&mut x], &NoiseSpec::None, &mut rng).unwrap());
        let zero = NoiseSpec::ProcessUniform {
            lo: 0.0,
            hi: 0.0,
            targets: NoiseTargets::All,
        };
        assert!(!inject_process_noise(vec![&mut x], &zero, &mut rng).unwrap());
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn mnist_interval_is_bounded_and_reproducible() {
        let spec = NoiseSpec::ProcessUniform {
            lo: 0.0,
            hi: 2.3e-4,
            targets: NoiseTargets::EstimateOnly,
        };
        let run = || {
            let mut x = vec![0.5; 64];
            let mut k = vec![-1.0; 16];
            let mut rng = SeededRng::new(11, 3);
            inject_process_noise(vec![&mut x, &mut k], &spec, &mut rng).unwrap();
            (x, k)
        };
        let (x, k) = run();
        assert!(x.iter().all(|v| *v > 0.5 && *v < 0.5 + 2.3e-4));
        assert!(k.iter().all(|v| *v > -1.0 && *v < -1.0 + 2.3e-4));
        assert_eq!(run(), (x, k));
    }

    #[test]
    fn diagonal_gaussian_has_requested_scale() {
        let noise = GaussianNoise::from_diagonal_covariance(&Vector::from_vec(vec![4.0, 0.0]), 0.5);
        let mut rng = SeededRng::new(2, 0);
        let n = 20_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let s = noise.sample(&mut rng);
            assert_eq!(s[1], 0.0);
            sq += s[0] * s[0];
        }
        let var = sq / n as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }
}
