//! Orthonormal 2D DCT-II.
//!
//! `synthesize` is the inverse transform (coefficients to image) and
//! `analyze` the forward one. Both are separable products with a
//! precomputed orthonormal matrix, so `analyze` is the exact adjoint of
//! `synthesize`. Coefficients are stored row-major: `theta[v * width + u]`
//! holds horizontal frequency `u` and vertical frequency `v`.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid::{CoefVector, Image};
use crate::linop::LinearOperator;

/// Orthonormal DCT-II matrix `C[k][n] = s_k cos(pi (2n+1) k / 2N)`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            c[k * n + i] = s * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos();
        }
    }
    c
}

#[derive(Debug, Clone)]
pub struct DctBasis {
    width: usize,
    height: usize,
    cw: Vec<f64>,
    ch: Vec<f64>,
}

impl DctBasis {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid("DCT basis size must be nonzero");
        }
        Ok(Self { width, height, cw: dct_matrix(width), ch: dct_matrix(height) })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Image from coefficients (inverse DCT).
    pub fn synthesize(&self, theta: &CoefVector) -> Result<Image> {
        if theta.len() != self.width * self.height {
            return invalid(format!(
                "coefficient length {} does not match {}x{} basis",
                theta.len(),
                self.width,
                self.height
            ));
        }
        let mut out = vec![0.0; theta.len()];
        self.apply(theta.data(), &mut out);
        Image::new(self.width, self.height, out)
    }

    /// Coefficients from an image (forward DCT).
    pub fn analyze(&self, x: &Image) -> Result<CoefVector> {
        if x.dims() != self.dims() {
            return invalid(format!(
                "image is {:?} but basis is {:?}",
                x.dims(),
                self.dims()
            ));
        }
        let mut out = vec![0.0; x.len()];
        self.apply_adjoint(x.data(), &mut out);
        CoefVector::new(out)
    }

    /// `out = L * src * R` where `L` is `height x height` applied on columns
    /// and `R` is `width x width` applied on rows; `transpose` selects `L^T`/`R^T`.
    fn separable(&self, src: &[f64], out: &mut [f64], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        // Rows: tmp[y][u] = sum_x src[y][x] * M[x][u]
        for y in 0..h {
            let s = &src[y * w..(y + 1) * w];
            let t = &mut tmp[y * w..(y + 1) * w];
            if inverse {
                // image row from coefficient row: x[n] = sum_k C[k][n] c[k]
                for (k, &ck) in s.iter().enumerate() {
                    if ck == 0.0 {
                        continue;
                    }
                    let basis = &self.cw[k * w..(k + 1) * w];
                    for (tv, bv) in t.iter_mut().zip(basis) {
                        *tv += ck * bv;
                    }
                }
            } else {
                for (k, tv) in t.iter_mut().enumerate() {
                    let basis = &self.cw[k * w..(k + 1) * w];
                    *tv = basis.iter().zip(s).map(|(b, v)| b * v).sum();
                }
            }
        }
        // Columns.
        out.iter_mut().for_each(|v| *v = 0.0);
        if inverse {
            for k in 0..h {
                let src_row = &tmp[k * w..(k + 1) * w];
                for n in 0..h {
                    let c = self.ch[k * h + n];
                    let dst = &mut out[n * w..(n + 1) * w];
                    for (d, s) in dst.iter_mut().zip(src_row) {
                        *d += c * s;
                    }
                }
            }
        } else {
            for k in 0..h {
                let dst = &mut out[k * w..(k + 1) * w];
                for n in 0..h {
                    let c = self.ch[k * h + n];
                    let src_row = &tmp[n * w..(n + 1) * w];
                    for (d, s) in dst.iter_mut().zip(src_row) {
                        *d += c * s;
                    }
                }
            }
        }
    }
}

impl LinearOperator for DctBasis {
    fn input_len(&self) -> usize {
        self.width * self.height
    }

    fn output_len(&self) -> usize {
        self.width * self.height
    }

    /// Synthesis `Psi`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.separable(x, out, true);
    }

    /// Analysis `Psi^T`.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.separable(y, out, false);
    }
}
