//! Parallel-beam discrete Radon transform with an exact adjoint.
//!
//! Geometry: pixel `(i, j)` sits at `x = i - (w-1)/2`, `y = (h-1)/2 - j`
//! (row 0 at the top, `y` pointing up). The ray for angle `phi` and detector
//! bin `b` is the line `x cos(phi) + y sin(phi) = s_b` with
//! `s_b = (b - (bins-1)/2) * spacing`. At 0 degrees rays are vertical and the
//! projection is a column sum.
//!
//! Each ray is sampled once per row (when `|cos phi| >= |sin phi|`) or once
//! per column otherwise, with linear interpolation between the two nearest
//! pixels and a path-length factor `1 / max(|cos|, |sin|)` (Joseph's method).
//! The adjoint scatters along the very same rays with the very same weights,
//! so it is the algebraic transpose of `forward`, not a separately
//! discretised backprojector.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::{AngleSet, Image, Sinogram};
use crate::linop::LinearOperator;

#[derive(Debug, Clone, Copy)]
struct AngleGeom {
    cos: f64,
    sin: f64,
    /// Step over rows (`true`) or over columns.
    row_major: bool,
    inv: f64,
}

/// Ray-driven Radon operator for a fixed image size and angle set.
#[derive(Debug, Clone)]
pub struct RadonOperator {
    width: usize,
    height: usize,
    angles: AngleSet,
    bins: usize,
    bin_spacing: f64,
    geom: Vec<AngleGeom>,
}

/// Smallest odd integer not below the image diagonal.
pub fn default_bin_count(width: usize, height: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    let mut n = diag.ceil() as usize;
    if n.is_multiple_of(2) {
        n += 1;
    }
    n
}

impl RadonOperator {
    /// Operator with the default detector: `default_bin_count` bins, unit spacing.
    pub fn new(width: usize, height: usize, angles: AngleSet) -> Result<Self> {
        Self::with_detector(width, height, angles, default_bin_count(width, height), 1.0)
    }

    pub fn with_detector(
        width: usize,
        height: usize,
        angles: AngleSet,
        bins: usize,
        bin_spacing: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid("projector image size must be nonzero");
        }
        if bins == 0 {
            return invalid("projector needs at least one detector bin");
        }
        if !(bin_spacing.is_finite() && bin_spacing > 0.0) {
            return invalid(format!("bin spacing must be positive, got {bin_spacing}"));
        }
        let geom = angles
            .radians()
            .into_iter()
            .map(|phi| {
                let (sin, cos) = phi.sin_cos();
                let row_major = cos.abs() >= sin.abs();
                let inv = 1.0 / if row_major { cos.abs() } else { sin.abs() };
                AngleGeom { cos, sin, row_major, inv }
            })
            .collect();
        Ok(Self { width, height, angles, bins, bin_spacing, geom })
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn angles(&self) -> &AngleSet {
        &self.angles
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_spacing(&self) -> f64 {
        self.bin_spacing
    }

    pub fn forward(&self, x: &Image) -> Result<Sinogram> {
        if x.dims() != self.image_size() {
            return invalid(format!(
                "image is {:?} but projector expects {:?}",
                x.dims(),
                self.image_size()
            ));
        }
        let mut out = vec![0.0; self.output_len()];
        self.apply(x.data(), &mut out);
        Sinogram::new(self.angles.clone(), self.bins, out)
    }

    pub fn adjoint(&self, y: &Sinogram) -> Result<Image> {
        if y.bins() != self.bins || y.angles() != &self.angles {
            return invalid("sinogram geometry does not match projector");
        }
        let mut out = vec![0.0; self.input_len()];
        self.apply_adjoint(y.data(), &mut out);
        Image::new(self.width, self.height, out)
    }

    #[inline]
    fn offset(&self, b: usize) -> f64 {
        (b as f64 - (self.bins as f64 - 1.0) / 2.0) * self.bin_spacing
    }

    /// Visits every `(pixel index, weight)` pair of the ray at offset `s`.
    /// The ray is sampled once per line `k` (row when `row_major`, column
    /// otherwise) at fractional position `base + k * slope` along the line.
    #[inline]
    fn walk(&self, g: &AngleGeom, s: f64, mut f: impl FnMut(usize, f64)) {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let (lines, len, base, slope) = if g.row_major {
            // y = cy - k, pos = (s - y sin) / cos + cx
            (self.height, self.width, (s - cy * g.sin) / g.cos + cx, g.sin / g.cos)
        } else {
            // x = k - cx, pos = cy - (s - x cos) / sin
            (self.width, self.height, cy - (s + cx * g.cos) / g.sin, g.cos / g.sin)
        };
        let len_i = len as isize;
        // Lines where the sample lands strictly inside (-1, len).
        let (k_lo, k_hi) = if slope == 0.0 {
            (0, lines)
        } else {
            let a = (-1.0 - base) / slope;
            let b = (len as f64 - base) / slope;
            let lo = a.min(b).floor().max(0.0) as usize;
            let hi = (a.max(b).ceil() + 1.0).clamp(0.0, lines as f64) as usize;
            (lo.min(lines), hi)
        };
        let (stride_k, stride_i) = if g.row_major { (self.width, 1) } else { (1, self.width) };
        for k in k_lo..k_hi {
            let pos = base + k as f64 * slope;
            if pos <= -1.0 || pos >= len as f64 {
                continue;
            }
            let i0 = pos.floor();
            let frac = pos - i0;
            let i0 = i0 as isize;
            if i0 >= 0 {
                f(k * stride_k + i0 as usize * stride_i, (1.0 - frac) * g.inv);
            }
            if i0 + 1 < len_i {
                f(k * stride_k + (i0 + 1) as usize * stride_i, frac * g.inv);
            }
        }
    }
}

/// Angles per partial image in the adjoint; fixed so the summation order
/// does not depend on the thread count.
const ADJOINT_ANGLE_CHUNK: usize = 4;

impl LinearOperator for RadonOperator {
    fn input_len(&self) -> usize {
        self.width * self.height
    }

    fn output_len(&self) -> usize {
        self.geom.len() * self.bins
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.input_len());
        assert_eq!(out.len(), self.output_len());
        out.par_chunks_mut(self.bins)
            .zip(self.geom.par_iter())
            .for_each(|(row, g)| {
                for (b, v) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    self.walk(g, self.offset(b), |idx, w| acc += w * x[idx]);
                    *v = acc;
                }
            });
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.output_len());
        assert_eq!(out.len(), self.input_len());
        let n = self.input_len();
        let partials: Vec<Vec<f64>> = self
            .geom
            .par_chunks(ADJOINT_ANGLE_CHUNK)
            .zip(y.par_chunks(ADJOINT_ANGLE_CHUNK * self.bins))
            .map(|(geoms, rows)| {
                let mut acc = vec![0.0; n];
                for (g, row) in geoms.iter().zip(rows.chunks(self.bins)) {
                    for (b, &yb) in row.iter().enumerate() {
                        if yb != 0.0 {
                            self.walk(g, self.offset(b), |idx, w| acc[idx] += w * yb);
                        }
                    }
                }
                acc
            })
            .collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        for part in &partials {
            out.iter_mut().zip(part).for_each(|(o, p)| *o += p);
        }
    }
}
