//! Synthetic phantoms: disks, ellipse sets, and a stack of slices through a
//! 3D ellipsoid head phantom that stands in for a template volume.

use crate::error::{invalid, Result};
use crate::grid::Image;

/// Ellipse in normalised coordinates (`[-1, 1]` across the image, `y` up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Renders additive ellipses, averaging `supersample^2` points per pixel.
pub fn render_ellipses(width: usize, height: usize, ellipses: &[Ellipse], supersample: usize) -> Result<Image> {
    if supersample == 0 {
        return invalid("supersample factor must be at least 1");
    }
    let ss = supersample as f64;
    let half = width.max(height) as f64 / 2.0;
    Image::from_fn(width, height, |i, j| {
        let mut acc = 0.0;
        for sy in 0..supersample {
            for sx in 0..supersample {
                let px = i as f64 + (sx as f64 + 0.5) / ss - 0.5;
                let py = j as f64 + (sy as f64 + 0.5) / ss - 0.5;
                let x = (px - (width as f64 - 1.0) / 2.0) / half;
                let y = ((height as f64 - 1.0) / 2.0 - py) / half;
                acc += ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.intensity)
                    .sum::<f64>();
            }
        }
        acc / (ss * ss)
    })
}

/// Centred disk of `radius` pixels with hard edges.
pub fn disk(width: usize, height: usize, radius: f64, value: f64) -> Result<Image> {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    Image::from_fn(width, height, |x, y| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        if r2 <= radius * radius {
            value
        } else {
            0.0
        }
    })
}

/// Modified Shepp-Logan head phantom (higher-contrast intensities).
pub fn shepp_logan(n: usize) -> Result<Image> {
    const E: [(f64, f64, f64, f64, f64, f64); 10] = [
        (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
        (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
        (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
        (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
        (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
        (0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
        (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
    ];
    let ellipses: Vec<Ellipse> = E
        .iter()
        .map(|&(cx, cy, a, b, angle_deg, intensity)| Ellipse { cx, cy, a, b, angle_deg, intensity })
        .collect();
    render_ellipses(n, n, &ellipses, 2)
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    centre: [f64; 3],
    axes: [f64; 3],
    angle_deg: f64,
    intensity: f64,
}

const HEAD: [Ellipsoid; 10] = [
    Ellipsoid { centre: [0.0, 0.0, 0.0], axes: [0.69, 0.92, 0.90], angle_deg: 0.0, intensity: 1.0 },
    Ellipsoid { centre: [0.0, -0.0184, 0.0], axes: [0.6624, 0.874, 0.88], angle_deg: 0.0, intensity: -0.8 },
    Ellipsoid { centre: [0.22, 0.0, -0.25], axes: [0.11, 0.31, 0.22], angle_deg: -18.0, intensity: -0.2 },
    Ellipsoid { centre: [-0.22, 0.0, -0.25], axes: [0.16, 0.41, 0.28], angle_deg: 18.0, intensity: -0.2 },
    Ellipsoid { centre: [0.0, 0.35, -0.25], axes: [0.21, 0.25, 0.41], angle_deg: 0.0, intensity: 0.15 },
    Ellipsoid { centre: [0.0, 0.1, -0.25], axes: [0.046, 0.046, 0.05], angle_deg: 0.0, intensity: 0.15 },
    Ellipsoid { centre: [0.0, -0.1, -0.25], axes: [0.046, 0.046, 0.05], angle_deg: 0.0, intensity: 0.15 },
    Ellipsoid { centre: [-0.08, -0.605, -0.25], axes: [0.046, 0.023, 0.05], angle_deg: 0.0, intensity: 0.15 },
    Ellipsoid { centre: [0.0, -0.606, -0.25], axes: [0.023, 0.023, 0.02], angle_deg: 0.0, intensity: 0.15 },
    Ellipsoid { centre: [0.06, -0.605, -0.25], axes: [0.023, 0.046, 0.02], angle_deg: 0.0, intensity: 0.15 },
];

/// Axial slice at height `z` through the 3D ellipsoid head phantom.
pub fn head_slice(n: usize, z: f64) -> Result<Image> {
    let ellipses: Vec<Ellipse> = HEAD
        .iter()
        .filter_map(|e| {
            let t = 1.0 - ((z - e.centre[2]) / e.axes[2]).powi(2);
            (t > 0.0).then(|| Ellipse {
                cx: e.centre[0],
                cy: e.centre[1],
                a: e.axes[0] * t.sqrt(),
                b: e.axes[1] * t.sqrt(),
                angle_deg: e.angle_deg,
                intensity: e.intensity,
            })
        })
        .collect();
    render_ellipses(n, n, &ellipses, 3)
}

/// Templates plus a test slice sharing one geometry.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub templates: Vec<Image>,
    pub test: Image,
}

/// Evenly spaced head slices in `z in [-0.45, -0.05]` as templates. The test
/// slice is an affine combination of templates (so it lies in their
/// eigenspace) plus a small feature absent from every template, scaled by
/// `perturbation`.
pub fn synthetic_dataset(n: usize, n_templates: usize, perturbation: f64) -> Result<SyntheticDataset> {
    if n_templates < 2 {
        return invalid("synthetic dataset needs at least two templates");
    }
    let templates: Vec<Image> = (0..n_templates)
        .map(|k| head_slice(n, -0.45 + 0.4 * k as f64 / (n_templates - 1) as f64))
        .collect::<Result<_>>()?;
    // Weights summing to one keep the mixture in the affine hull.
    let raw: Vec<f64> = (0..n_templates)
        .map(|k| {
            let u = (k as f64 + 0.5) / n_templates as f64;
            (-((u - 0.45) / 0.25).powi(2)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut test = vec![0.0; n * n];
    for (t, w) in templates.iter().zip(&raw) {
        for (acc, v) in test.iter_mut().zip(t.data()) {
            *acc += w / total * v;
        }
    }
    let lesion = render_ellipses(
        n,
        n,
        &[Ellipse { cx: 0.3, cy: -0.3, a: 0.12, b: 0.08, angle_deg: 30.0, intensity: 1.0 }],
        3,
    )?;
    for (acc, v) in test.iter_mut().zip(lesion.data()) {
        *acc += perturbation * v;
    }
    Ok(SyntheticDataset { templates, test: Image::new(n, n, test)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_area() {
        let d = disk(101, 101, 30.0, 1.0).unwrap();
        let area: f64 = d.data().iter().sum();
        assert!((area - std::f64::consts::PI * 900.0).abs() / area < 0.01);
    }

    #[test]
    fn head_slices_vary_and_stay_nonnegative() {
        let a = head_slice(32, -0.4).unwrap();
        let b = head_slice(32, -0.1).unwrap();
        assert_ne!(a, b);
        assert!(a.data().iter().all(|&v| v >= -1e-12));
        let sl = shepp_logan(32).unwrap();
        assert!(sl.min_max().1 > 0.9);
    }

    #[test]
    fn dataset_shape() {
        let d = synthetic_dataset(16, 4, 0.1).unwrap();
        assert_eq!(d.templates.len(), 4);
        assert_eq!(d.test.dims(), (16, 16));
        assert!(synthetic_dataset(16, 1, 0.0).is_err());
    }
}
