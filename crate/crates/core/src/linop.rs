//! Matrix-free linear operators over flat `f64` buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A real linear map with an exact adjoint.
pub trait LinearOperator {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// `out = A x`; `out` is overwritten.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`; `out` is overwritten.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

/// `outer ∘ inner`, e.g. Radon after inverse DCT.
pub struct Composed<'a, A: ?Sized, B: ?Sized> {
    pub outer: &'a A,
    pub inner: &'a B,
}

impl<'a, A, B> Composed<'a, A, B>
where
    A: LinearOperator + ?Sized,
    B: LinearOperator + ?Sized,
{
    pub fn new(outer: &'a A, inner: &'a B) -> Self {
        assert_eq!(outer.input_len(), inner.output_len(), "composed operator shape mismatch");
        Self { outer, inner }
    }
}

impl<A, B> LinearOperator for Composed<'_, A, B>
where
    A: LinearOperator + ?Sized,
    B: LinearOperator + ?Sized,
{
    fn input_len(&self) -> usize {
        self.inner.input_len()
    }

    fn output_len(&self) -> usize {
        self.outer.output_len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.inner.output_len()];
        self.inner.apply(x, &mut mid);
        self.outer.apply(&mid, out);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.outer.input_len()];
        self.outer.apply_adjoint(y, &mut mid);
        self.inner.apply_adjoint(&mid, out);
    }
}

/// Power-method estimate of the spectral norm `||A||_2`.
///
/// Iterates on `A^T A` from a fixed pseudo-random start, so the result is
/// deterministic and nondecreasing in `iterations`.
pub fn operator_norm_estimate<A: LinearOperator + ?Sized>(op: &A, iterations: usize) -> f64 {
    let n = op.input_len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f70);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nx = norm2(&x);
    if nx == 0.0 {
        return 0.0;
    }
    scale(&mut x, 1.0 / nx);

    let mut y = vec![0.0; op.output_len()];
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        op.apply(&x, &mut y);
        estimate = norm2(&y);
        op.apply_adjoint(&y, &mut x);
        let nz = norm2(&x);
        if nz == 0.0 {
            break;
        }
        scale(&mut x, 1.0 / nz);
    }
    estimate
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scale(a: &mut [f64], s: f64) {
    a.iter_mut().for_each(|v| *v *= s);
}
