//! Reconstruction quality metrics.
//!
//! `relative_mse` is `(1/n) * sum (y_i - x_i)^2 / sum x_i^2` with `x` the
//! ground truth and `n` the pixel count. The extra `1/n` is intentional and
//! keeps results comparable with published tables that use this definition.

use crate::error::{invalid, Result};
use crate::grid::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub relative_mse: f64,
    pub ssim: f64,
}

/// Relative MSE and SSIM with default parameters.
pub fn evaluate(recon: &Image, truth: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        relative_mse: relative_mse(recon, truth)?,
        ssim: ssim(recon, truth)?,
    })
}

pub fn relative_mse(recon: &Image, truth: &Image) -> Result<f64> {
    if !recon.same_dims(truth) {
        return invalid(format!(
            "relative_mse dimension mismatch: {:?} vs {:?}",
            recon.dims(),
            truth.dims()
        ));
    }
    let energy: f64 = truth.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return invalid("relative_mse is undefined for an all-zero ground truth");
    }
    let err: f64 = recon
        .data()
        .iter()
        .zip(truth.data())
        .map(|(y, x)| (y - x) * (y - x))
        .sum();
    Ok(err / energy / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; `None` means `max(truth) - min(truth)`, or 1 when
    /// the truth is flat.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: None }
    }
}

pub fn ssim(recon: &Image, truth: &Image) -> Result<f64> {
    ssim_with(recon, truth, &SsimParams::default())
}

/// Mean SSIM over every fully-contained window position.
pub fn ssim_with(recon: &Image, truth: &Image, params: &SsimParams) -> Result<f64> {
    if !recon.same_dims(truth) {
        return invalid(format!(
            "ssim dimension mismatch: {:?} vs {:?}",
            recon.dims(),
            truth.dims()
        ));
    }
    let (w, h) = truth.dims();
    let win = params.window;
    if win == 0 || win > w.min(h) {
        return invalid(format!("ssim window {win} does not fit a {w}x{h} image"));
    }
    let range = params.dynamic_range.unwrap_or_else(|| {
        let (lo, hi) = truth.min_max();
        if hi > lo {
            hi - lo
        } else {
            1.0
        }
    });
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);

    let kernel = gaussian_kernel(win, params.sigma);
    let x = recon.data();
    let y = truth.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = blur_valid(x, w, h, &kernel);
    let mu_y = blur_valid(y, w, h, &kernel);
    let e_xx = blur_valid(&xx, w, h, &kernel);
    let e_yy = blur_valid(&yy, w, h, &kernel);
    let e_xy = blur_valid(&xy, w, h, &kernel);

    let mut total = 0.0;
    for k in 0..mu_x.len() {
        let (mx, my) = (mu_x[k], mu_y[k]);
        let vx = e_xx[k] - mx * mx;
        let vy = e_yy[k] - my * my;
        let cov = e_xy[k] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += if den == 0.0 { 1.0 } else { num / den };
    }
    Ok(total / mu_x.len() as f64)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable correlation keeping only fully-overlapping positions.
fn blur_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = kernel.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(d, k)| k * tmp[(y + d) * ow + x])
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(n: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        Image::new(n, n, (0..n * n).map(|_| d.sample(&mut rng)).collect()).unwrap()
    }

    fn smooth(n: usize) -> Image {
        Image::from_fn(n, n, |x, y| {
            0.5 + 0.3 * (x as f64 / 5.0).sin() * (y as f64 / 7.0).cos() + 0.002 * x as f64
        })
        .unwrap()
    }

    /// Straight-line reference: explicit double loop over pixels.
    fn relative_mse_reference(recon: &Image, truth: &Image) -> f64 {
        let (w, h) = truth.dims();
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..h {
            for x in 0..w {
                let t = truth.get(x, y);
                let r = recon.get(x, y);
                num += (r - t).powi(2);
                den += t.powi(2);
            }
        }
        (num / den) / (w * h) as f64
    }

    #[test]
    fn relative_mse_basics() {
        let t = smooth(8);
        assert_eq!(relative_mse(&t, &t).unwrap(), 0.0);
        let n = 16;
        let ones = Image::new(4, 4, vec![1.0; n]).unwrap();
        let zeros = Image::zeros(4, 4).unwrap();
        assert!((relative_mse(&zeros, &ones).unwrap() - 1.0 / n as f64).abs() < 1e-15);
        assert!(relative_mse(&ones, &zeros).is_err());
        assert!(relative_mse(&ones, &Image::zeros(4, 5).unwrap()).is_err());
    }

    #[test]
    fn relative_mse_dual_implementation() {
        for seed in 0..5 {
            let a = noise(8, seed);
            let b = noise(8, seed + 100);
            let got = relative_mse(&a, &b).unwrap();
            let want = relative_mse_reference(&a, &b);
            assert!((got - want).abs() <= 1e-14 * want.max(1.0));
        }
    }

    #[test]
    fn relative_mse_is_asymmetric() {
        let a = smooth(8);
        let b = a.map(|v| 2.0 * v).unwrap();
        assert_ne!(relative_mse(&a, &b).unwrap(), relative_mse(&b, &a).unwrap());
    }

    #[test]
    fn relative_mse_quadratic_in_error_scale() {
        let x = smooth(12);
        let e = noise(12, 7);
        for s in [0.1, 0.5, 3.0] {
            let y1 = Image::new(12, 12, x.data().iter().zip(e.data()).map(|(a, b)| a + b).collect()).unwrap();
            let ys = Image::new(12, 12, x.data().iter().zip(e.data()).map(|(a, b)| a + s * b).collect()).unwrap();
            let r1 = relative_mse(&y1, &x).unwrap();
            let rs = relative_mse(&ys, &x).unwrap();
            assert!((rs - s * s * r1).abs() <= 1e-12 * rs.max(1e-300));
        }
    }

    #[test]
    fn ssim_identity() {
        let x = smooth(32);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let shifted = x.map(|v| v + 7.25).unwrap();
        assert_eq!(ssim(&shifted, &shifted).unwrap(), 1.0);
        let flat = Image::new(16, 16, vec![0.3; 256]).unwrap();
        assert_eq!(ssim(&flat, &flat).unwrap(), 1.0);
    }

    #[test]
    fn ssim_structure_sensitivity() {
        let n = 64;
        let x = smooth(n);
        let (lo, hi) = x.min_max();
        let c = 0.02 * (hi - lo);
        let offset = x.map(|v| v + c).unwrap();
        // Same per-pixel squared error, but with the offsets scattered.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut signs: Vec<f64> = (0..n * n).map(|i| if i % 2 == 0 { c } else { -c }).collect();
        signs.shuffle(&mut rng);
        let scattered =
            Image::new(n, n, x.data().iter().zip(&signs).map(|(v, s)| v + s).collect()).unwrap();
        assert!((relative_mse(&offset, &x).unwrap() - relative_mse(&scattered, &x).unwrap()).abs() < 1e-15);

        let s_offset = ssim(&offset, &x).unwrap();
        let s_scattered = ssim(&scattered, &x).unwrap();
        assert!(s_offset < 1.0);
        assert!(s_offset > s_scattered, "{s_offset} vs {s_scattered}");
    }

    #[test]
    fn independent_noise_decorrelated() {
        let mean: f64 = (0..10)
            .map(|s| ssim(&noise(128, 2 * s), &noise(128, 2 * s + 1)).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!(mean.abs() <= 0.05, "mean ssim {mean}");
    }

    #[test]
    fn ssim_bounds_and_errors() {
        let a = noise(20, 1);
        let b = smooth(20);
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!(ssim(&a, &smooth(21)).is_err());
        assert!(ssim(&Image::zeros(8, 8).unwrap(), &Image::zeros(8, 8).unwrap()).is_err());
        let p = SsimParams { window: 7, ..Default::default() };
        assert_eq!(ssim_with(&b, &b, &p).unwrap(), 1.0);
    }
}
