//! Dense linear algebra helpers, seeded random streams and spectral estimation.
//!
//! All arithmetic is `f64`. Vectors and matrices are plain `nalgebra` dynamic
//! types; the preconditioner is stored densely (d² reals), which is the memory
//! limit of the method at large `d`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::{Distribution, Open01};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default relative tolerance for [`spectral_max`].
pub const SPECTRAL_TOL: f64 = 1e-6;
/// Default iteration cap for [`spectral_max`].
pub const SPECTRAL_MAX_ITER: usize = 5000;

pub fn mat_vec(m: &Matrix, v: &Vector) -> Result<Vector> {
    ensure_dim("mat_vec rows", m.nrows(), m.ncols())?;
    ensure_dim("mat_vec", m.ncols(), v.len())?;
    Ok(m * v)
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Spectral (induced 2-) norm of a dense matrix via its singular values.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, s| acc.max(*s))
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    ev
}

/// A deterministic random stream identified by `(seed, stream_id)`.
///
/// Each logical actor (agent or server) owns its own stream; two streams with
/// the same pair produce bit-identical draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// A draw from the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `n` i.i.d. Gaussian draws with the given mean and standard deviation.
pub fn draw_normal(rng: &mut SeededRng, mean: f64, std: f64, n: usize) -> Result<Vector> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Config(format!("normal std must be >= 0, got {std}")));
    }
    Ok(Vector::from_fn(n, |_, _| mean + std * rng.normal()))
}

/// `n` i.i.d. uniform draws on the open interval (lo, hi); `lo == hi` yields a
/// constant vector.
pub fn draw_uniform(rng: &mut SeededRng, lo: f64, hi: f64, n: usize) -> Result<Vector> {
    if !(lo <= hi) {
        return Err(Error::Config(format!("uniform bounds need lo <= hi, got ({lo}, {hi})")));
    }
    if lo == hi {
        return Ok(Vector::from_element(n, lo));
    }
    Ok(Vector::from_fn(n, |_, _| uniform_open(rng, lo, hi)))
}

pub(crate) fn uniform_open(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = lo + (hi - lo) * rng.open01();
        // rounding can land on an endpoint when the interval is tiny
        if v > lo && v < hi {
            return v;
        }
    }
}

/// Result of a power-iteration eigenvalue estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SpectralEstimate {
    /// Upper bound on the true top eigenvalue when the estimate converged
    /// with relative tolerance `tol`.
    pub fn upper_bound(&self, tol: f64) -> f64 {
        self.value * (1.0 + tol)
    }
}

/// Largest eigenvalue of a symmetric PSD operator available only through
/// operator-vector products.
///
/// Power iteration from a seeded random start; the Rayleigh quotient never
/// exceeds the true λmax, so the estimate approaches it from below. Stops when
/// successive quotients agree to `tol` relative.
pub fn spectral_max<F>(
    hvp: F,
    d: usize,
    tol: f64,
    max_iter: usize,
    rng: &mut SeededRng,
) -> Result<SpectralEstimate>
where
    F: Fn(&Vector) -> Vector,
{
    if !(tol > 0.0) {
        return Err(Error::Config(format!("spectral tolerance must be > 0, got {tol}")));
    }
    if d == 0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut v = draw_normal(rng, 0.0, 1.0, d)?;
    let norm = v.norm();
    v /= norm;
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let w = hvp(&v);
        ensure_dim("spectral_max operator", d, w.len())?;
        let rayleigh = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        // some eigenvalue lies within the residual norm of the Rayleigh quotient
        let residual = (&w - &v * rayleigh).norm();
        lambda = rayleigh;
        if residual <= tol * rayleigh.abs() {
            return Ok(SpectralEstimate {
                value: lambda,
                iterations: it,
                converged: true,
            });
        }
        v = w / wn;
    }
    Ok(SpectralEstimate {
        value: lambda,
        iterations: max_iter,
        converged: false,
    })
}
