//! Monotone accelerated proximal gradient for `||A x - b||^2 + lambda ||x||_1`.
//!
//! FISTA with the monotone safeguard of Beck and Teboulle (the iterate only
//! moves when the objective does not increase) plus momentum restart on
//! rejection. Since the smooth part is quadratic, `A y` at the extrapolated
//! point is formed from already computed products, so each iteration costs
//! one `A` and one `A^T`.

use crate::linop::{dot, LinearOperator};

/// Consecutive small-decrease iterations required before stopping.
const PATIENCE: usize = 5;

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Problem data for one l1-regularised least-squares solve.
pub struct L1LeastSquares<'a, A: LinearOperator + ?Sized> {
    pub op: &'a A,
    pub target: &'a [f64],
    pub l1: f64,
    /// Lipschitz constant of the gradient `2 A^T (A x - b)`, i.e. `2 ||A||^2`.
    pub lipschitz: f64,
}

fn residual_sq(ax: &[f64], b: &[f64]) -> f64 {
    ax.iter().zip(b).map(|(a, t)| (a - t) * (a - t)).sum()
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

impl<A: LinearOperator + ?Sized> L1LeastSquares<'_, A> {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.op.output_len()];
        self.op.apply(x, &mut ax);
        residual_sq(&ax, self.target) + self.l1 * l1(x)
    }

    /// Runs at most `max_iter` iterations from `x0`. The returned objective
    /// never exceeds the objective at `x0`.
    pub fn solve(&self, x0: Vec<f64>, max_iter: usize, tol: f64) -> ProxOutcome {
        let n = self.op.input_len();
        let m = self.op.output_len();
        let step = 1.0 / self.lipschitz;
        let tau = self.l1 * step;

        let mut x = x0;
        let mut ax = vec![0.0; m];
        self.op.apply(&x, &mut ax);
        let mut fx = residual_sq(&ax, self.target) + self.l1 * l1(&x);

        let mut y = x.clone();
        let mut ay = ax.clone();
        let mut t = 1.0f64;
        let mut grad = vec![0.0; n];
        let mut resid = vec![0.0; m];
        let mut z = vec![0.0; n];
        let mut az = vec![0.0; m];
        let mut quiet = 0;
        let mut iterations = 0;

        while iterations < max_iter {
            iterations += 1;
            for ((r, a), b) in resid.iter_mut().zip(&ay).zip(self.target) {
                *r = 2.0 * (a - b);
            }
            self.op.apply_adjoint(&resid, &mut grad);
            for ((zi, yi), gi) in z.iter_mut().zip(&y).zip(&grad) {
                *zi = soft_threshold(yi - step * gi, tau);
            }
            self.op.apply(&z, &mut az);
            let fz = residual_sq(&az, self.target) + self.l1 * l1(&z);
            if !fz.is_finite() {
                // Leave the last finite iterate in place; caller checks the objective.
                break;
            }

            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            if fz <= fx {
                let decrease = fx - fz;
                // y = z + ((t - 1) / t_next) (z - x)
                let beta = (t - 1.0) / t_next;
                for i in 0..n {
                    y[i] = z[i] + beta * (z[i] - x[i]);
                }
                for i in 0..m {
                    ay[i] = az[i] + beta * (az[i] - ax[i]);
                }
                std::mem::swap(&mut x, &mut z);
                std::mem::swap(&mut ax, &mut az);
                fx = fz;
                t = t_next;
                if decrease <= tol * fx.abs().max(f64::MIN_POSITIVE) {
                    quiet += 1;
                    if quiet >= PATIENCE {
                        break;
                    }
                } else {
                    quiet = 0;
                }
            } else {
                // Rejected: restart momentum from the current iterate.
                y.copy_from_slice(&x);
                ay.copy_from_slice(&ax);
                t = 1.0;
            }
        }
        ProxOutcome { x, objective: fx, iterations }
    }
}

/// Row-major dense matrix as a linear operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LinearOperator for DenseOperator {
    fn input_len(&self) -> usize {
        self.cols
    }

    fn output_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[r * self.cols..(r + 1) * self.cols], x);
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += yr * a;
            }
        }
    }
}
