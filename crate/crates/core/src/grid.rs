//! Value types shared by every stage of the pipeline.
//!
//! All arrays are row-major `f64`. Constructors reject non-finite entries so
//! downstream code never needs to re-check.

use crate::error::{invalid, Result};

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return invalid(format!("{what} has non-finite entry at index {i}"));
    }
    Ok(())
}

/// Dense 2D grayscale slice, row-major, `data[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return invalid(format!("image must be at least 2x2, got {width}x{height}"));
        }
        if data.len() != width * height {
            return invalid(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        check_finite(&data, "image")?;
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Returns a new image with every pixel mapped through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Maximum absolute per-pixel difference between two images.
pub fn image_linf_diff(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return invalid(format!(
            "image dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Set of projection angles in degrees, each in `[0, 180)`, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSet {
    degrees: Vec<f64>,
}

impl AngleSet {
    /// `count` angles at `k * 180 / count`.
    pub fn uniform(count: usize) -> Result<Self> {
        if count == 0 {
            return invalid("angle count must be at least 1");
        }
        let step = 180.0 / count as f64;
        Ok(Self {
            degrees: (0..count).map(|k| k as f64 * step).collect(),
        })
    }

    pub fn explicit(degrees: Vec<f64>) -> Result<Self> {
        validate_angles(&degrees)?;
        Ok(Self { degrees })
    }

    pub fn count(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn radians(&self) -> Vec<f64> {
        self.degrees.iter().map(|d| d.to_radians()).collect()
    }
}

/// Shorthand for [`AngleSet::uniform`].
pub fn make_uniform_angles(count: usize) -> Result<AngleSet> {
    AngleSet::uniform(count)
}

fn validate_angles(degrees: &[f64]) -> Result<()> {
    if degrees.is_empty() {
        return invalid("angle list is empty");
    }
    check_finite(degrees, "angle list")?;
    if let Some(a) = degrees.iter().find(|a| !(0.0..180.0).contains(*a)) {
        return invalid(format!("angle {a} outside [0, 180)"));
    }
    if degrees.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("angles must be strictly increasing");
    }
    Ok(())
}

/// Projection data indexed `(angle, bin)`, row-major with one row per angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    angles: AngleSet,
    bins: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(angles: AngleSet, bins: usize, data: Vec<f64>) -> Result<Self> {
        if bins == 0 {
            return invalid("sinogram needs at least one bin");
        }
        if data.len() != angles.count() * bins {
            return invalid(format!(
                "sinogram data length {} does not match {} angles x {bins} bins",
                data.len(),
                angles.count()
            ));
        }
        check_finite(&data, "sinogram")?;
        Ok(Self { angles, bins, data })
    }

    pub fn zeros(angles: AngleSet, bins: usize) -> Result<Self> {
        let n = angles.count() * bins;
        Self::new(angles, bins, vec![0.0; n])
    }

    pub fn angles(&self) -> &AngleSet {
        &self.angles
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Detector row for angle index `a`.
    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.bins..(a + 1) * self.bins]
    }

    /// Same geometry, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.angles.clone(), self.bins, data)
    }
}

/// Coefficient vector: DCT coefficients, eigen coefficients or patch codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector(Vec<f64>);

impl CoefVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "coefficient vector")?;
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.0
    }

    pub fn into_data(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }
}
