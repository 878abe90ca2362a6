//! Seeded randomized Hadamard transform and a dense uniform rotation.
//!
//! The RHT computes `y = 1/sqrt(d_pad) * H * D * pad(x)` where `H` is the
//! Walsh-Hadamard matrix, `D` a diagonal of signs derived from the seed via
//! the shared PRF, and `pad` zero-extends to the next power of two. Both
//! sides derive `D` from the seed, so only the seed is communicated. The
//! dense uniform rotation orthonormalizes a seeded Gaussian matrix and is
//! meant for small-dimension validation of rotation-based theory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::prf::prf;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("dimension must be at least 1")]
    EmptyInput,
    #[error("input has non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("vector length {got} does not match spec ({expected})")]
    LengthMismatch { got: usize, expected: usize },
    #[error("uniform rotation limited to d <= {limit}; use the Hadamard transform for d = {got}")]
    DimensionTooLarge { got: usize, limit: usize },
}

pub const UNIFORM_DIM_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationKind {
    Rht,
    Uniform,
}

/// Rotation parameters: kind, sign/matrix seed, original dimension `d`, and
/// padded dimension `d_pad` (smallest power of two at least `d`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationSpec {
    pub kind: RotationKind,
    pub seed: u64,
    pub dim: usize,
    pub dim_padded: usize,
}

impl RotationSpec {
    pub fn new(kind: RotationKind, seed: u64, dim: usize) -> Result<Self, TransformError> {
        if dim == 0 {
            return Err(TransformError::EmptyInput);
        }
        if kind == RotationKind::Uniform && dim > UNIFORM_DIM_LIMIT {
            return Err(TransformError::DimensionTooLarge { got: dim, limit: UNIFORM_DIM_LIMIT });
        }
        Ok(RotationSpec { kind, seed, dim, dim_padded: dim.next_power_of_two() })
    }

    pub fn rht(seed: u64, dim: usize) -> Result<Self, TransformError> {
        Self::new(RotationKind::Rht, seed, dim)
    }
}

/// In-place unnormalized Walsh-Hadamard butterfly, O(n log n). The summation
/// order is fixed; callers parallelize across vectors, not within one.
pub(crate) fn wht_inplace(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(half * 2) {
            for i in block..block + half {
                let a = data[i];
                let b = data[i + half];
                data[i] = a + b;
                data[i + half] = a - b;
            }
        }
        half *= 2;
    }
}

#[inline]
fn sign_at(seed: u64, i: usize) -> f64 {
    if prf(seed, i as u64) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn check_finite(x: &[f64]) -> Result<(), TransformError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(TransformError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Forward RHT: pads with zeros, applies the seeded sign diagonal, the
/// Walsh-Hadamard butterfly, and one `1/sqrt(d_pad)` scale pass. Preserves
/// the Euclidean norm up to rounding.
pub fn rht_forward(x: &[f64], spec: &RotationSpec) -> Result<Vec<f64>, TransformError> {
    if x.is_empty() {
        return Err(TransformError::EmptyInput);
    }
    if x.len() != spec.dim {
        return Err(TransformError::LengthMismatch { got: x.len(), expected: spec.dim });
    }
    check_finite(x)?;
    probe::note_forward();
    let n = spec.dim_padded;
    let mut y = vec![0.0; n];
    for (i, &v) in x.iter().enumerate() {
        y[i] = v * sign_at(spec.seed, i);
    }
    wht_inplace(&mut y);
    let scale = 1.0 / (n as f64).sqrt();
    for v in &mut y {
        *v *= scale;
    }
    Ok(y)
}

/// Inverse RHT: `H` is symmetric with `H*H = d_pad * I`, so the inverse is
/// the same butterfly and scale followed by undoing the signs; truncates the
/// padding back to `d`.
pub fn rht_inverse(y: &[f64], spec: &RotationSpec) -> Result<Vec<f64>, TransformError> {
    if y.len() != spec.dim_padded {
        return Err(TransformError::LengthMismatch { got: y.len(), expected: spec.dim_padded });
    }
    check_finite(y)?;
    probe::note_inverse();
    let n = spec.dim_padded;
    let mut x = y.to_vec();
    wht_inplace(&mut x);
    let scale = 1.0 / (n as f64).sqrt();
    for (i, v) in x.iter_mut().enumerate() {
        *v *= scale * sign_at(spec.seed, i);
    }
    x.truncate(spec.dim);
    Ok(x)
}

/// Dense rotation obtained by orthonormalizing a seeded matrix of standard
/// normal samples (QR with sign-fixed diagonal). Build once, apply many times.
pub struct UniformRotation {
    q: nalgebra::DMatrix<f64>,
    dim: usize,
}

impl UniformRotation {
    pub fn new(spec: &RotationSpec) -> Result<Self, TransformError> {
        if spec.dim == 0 {
            return Err(TransformError::EmptyInput);
        }
        if spec.dim > UNIFORM_DIM_LIMIT {
            return Err(TransformError::DimensionTooLarge {
                got: spec.dim,
                limit: UNIFORM_DIM_LIMIT,
            });
        }
        let n = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let gauss: nalgebra::DMatrix<f64> =
            nalgebra::DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let qr = gauss.qr();
        let r = qr.r();
        let mut q = qr.q();
        // Fix column signs by the sign of R's diagonal so the distribution is
        // invariant under the QR convention.
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                for i in 0..n {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        Ok(UniformRotation { q, dim: n })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, TransformError> {
        if x.len() != self.dim {
            return Err(TransformError::LengthMismatch { got: x.len(), expected: self.dim });
        }
        check_finite(x)?;
        let v = nalgebra::DVector::from_column_slice(x);
        Ok((&self.q * v).data.into())
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>, TransformError> {
        if y.len() != self.dim {
            return Err(TransformError::LengthMismatch { got: y.len(), expected: self.dim });
        }
        check_finite(y)?;
        let v = nalgebra::DVector::from_column_slice(y);
        Ok((self.q.transpose() * v).data.into())
    }

    /// `max |Q^T Q - I|`, the orthogonality residual.
    pub fn orthogonality_residual(&self) -> f64 {
        let gram = self.q.transpose() * &self.q;
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// One-shot uniform rotation of `x` (and its inverse through the same spec).
pub fn uniform_rotation(x: &[f64], spec: &RotationSpec) -> Result<Vec<f64>, TransformError> {
    UniformRotation::new(spec)?.forward(x)
}

pub fn uniform_rotation_inverse(
    y: &[f64],
    spec: &RotationSpec,
) -> Result<Vec<f64>, TransformError> {
    UniformRotation::new(spec)?.inverse(y)
}

/// Thread-local call counters used by tests to assert the decode path costs
/// one inverse transform per aggregate.
pub mod probe {
    use std::cell::Cell;

    thread_local! {
        static FORWARD: Cell<u64> = const { Cell::new(0) };
        static INVERSE: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        FORWARD.with(|c| c.set(0));
        INVERSE.with(|c| c.set(0));
    }

    pub fn forward_calls() -> u64 {
        FORWARD.with(Cell::get)
    }

    pub fn inverse_calls() -> u64 {
        INVERSE.with(Cell::get)
    }

    pub(crate) fn note_forward() {
        FORWARD.with(|c| c.set(c.get() + 1));
    }

    pub(crate) fn note_inverse() {
        INVERSE.with(|c| c.set(c.get() + 1));
    }
}
