//! Filtered backprojection baseline.
//!
//! Frequencies are normalised so `omega = 1` at the detector Nyquist rate.
//! All filters except `None` are the ramp `|omega|` times a window:
//!
//! | filter      | window                      |
//! |-------------|-----------------------------|
//! | ram-lak     | 1                           |
//! | shepp-logan | `sinc(omega / 2)`           |
//! | cosine      | `cos(pi * omega / 2)`       |
//!
//! With this normalisation the backprojection sum is scaled by
//! `pi / (2 * n_angles * bin_spacing)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::grid::{Image, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Filter {
    RamLak,
    SheppLogan,
    #[default]
    Cosine,
    None,
}

impl Filter {
    pub fn name(self) -> &'static str {
        match self {
            Filter::RamLak => "ramlak",
            Filter::SheppLogan => "shepp-logan",
            Filter::Cosine => "cosine",
            Filter::None => "none",
        }
    }

    /// Frequency response at normalised frequency `omega` in `[-1, 1]`.
    pub fn response(self, omega: f64) -> f64 {
        let w = omega.abs();
        match self {
            Filter::None => 1.0,
            Filter::RamLak => w,
            Filter::SheppLogan => {
                let a = PI * w / 2.0;
                if a == 0.0 {
                    0.0
                } else {
                    w * a.sin() / a
                }
            }
            Filter::Cosine => w * (PI * w / 2.0).cos(),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ramlak" | "ram-lak" | "ramp" => Ok(Filter::RamLak),
            "shepp-logan" | "shepplogan" => Ok(Filter::SheppLogan),
            "cosine" => Ok(Filter::Cosine),
            "none" => Ok(Filter::None),
            other => invalid(format!("unknown projection filter '{other}'")),
        }
    }
}

fn padded_len(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

/// Filters a zero-padded copy of `row` and returns the whole padded signal.
pub fn filter_padded(row: &[f64], filter: Filter) -> Vec<f64> {
    let len = padded_len(row.len());
    let mut buf: Vec<Complex<f64>> = row
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    if filter == Filter::None {
        return buf.into_iter().map(|c| c.re).collect();
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 } / len as f64;
        *c *= filter.response(2.0 * f);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let norm = 1.0 / len as f64;
    buf.into_iter().map(|c| c.re * norm).collect()
}

/// Filters one detector row; the result has the row's length.
pub fn apply_projection_filter(row: &[f64], filter: Filter) -> Result<Vec<f64>> {
    if row.len() < 2 {
        return invalid("projection row needs at least two samples");
    }
    let mut out = filter_padded(row, filter);
    out.truncate(row.len());
    Ok(out)
}

/// [`apply_projection_filter`] with the filter given by name.
pub fn apply_projection_filter_named(row: &[f64], filter: &str) -> Result<Vec<f64>> {
    apply_projection_filter(row, filter.parse()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpConfig {
    pub filter: Filter,
    pub width: usize,
    pub height: usize,
    /// Detector bin spacing in pixels; must match the acquisition.
    pub bin_spacing: f64,
}

impl FbpConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self { filter: Filter::Cosine, width, height, bin_spacing: 1.0 }
    }

    pub fn with_filter(mut self, filter: Filter) -> Self {
        self.filter = filter;
        self
    }
}

/// Filters each projection, then backprojects with pixel-driven linear
/// interpolation on the detector.
pub fn fbp_reconstruct(sino: &Sinogram, cfg: &FbpConfig) -> Result<Image> {
    let n_angles = sino.angles().count();
    if n_angles == 0 {
        return invalid("cannot backproject an empty angle set");
    }
    let bins = sino.bins();
    if bins < 2 {
        return invalid("filtered backprojection needs at least two detector bins");
    }
    let filtered: Vec<Vec<f64>> = (0..n_angles)
        .map(|a| apply_projection_filter(sino.row(a), cfg.filter))
        .collect::<Result<_>>()?;
    let trig: Vec<(f64, f64)> = sino.angles().radians().iter().map(|p| p.sin_cos()).collect();

    let (w, h) = (cfg.width, cfg.height);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let centre_bin = (bins as f64 - 1.0) / 2.0;
    let scale = PI / (2.0 * n_angles as f64 * cfg.bin_spacing);

    Image::from_fn(w, h, |i, j| {
        let x = i as f64 - cx;
        let y = cy - j as f64;
        let mut acc = 0.0;
        for (row, &(sin, cos)) in filtered.iter().zip(&trig) {
            let t = (x * cos + y * sin) / cfg.bin_spacing + centre_bin;
            let t0 = t.floor();
            let frac = t - t0;
            let t0 = t0 as isize;
            if t0 >= 0 && (t0 as usize) < bins {
                acc += (1.0 - frac) * row[t0 as usize];
            }
            if t0 + 1 >= 0 && ((t0 + 1) as usize) < bins {
                acc += frac * row[(t0 + 1) as usize];
            }
        }
        acc * scale
    })
}
