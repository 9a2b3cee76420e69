//! Global eigenspace prior built from template slices.
//!
//! The template covariance `C = 1/(N-1) sum (t_i - mu)(t_i - mu)^T` is never
//! formed. Its nonzero eigenpairs come from the `N x N` Gram matrix of the
//! centred templates: if `G u = g u` then `v = X u / sqrt(g)` is a unit
//! eigenvector of `C` with eigenvalue `g / (N-1)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::grid::{CoefVector, Image};
use crate::linop::dot;

/// Relative cut-off below which an eigenvalue is treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Two or more registered templates of identical size.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<Image>,
}

impl TemplateSet {
    pub fn new(templates: Vec<Image>) -> Result<Self> {
        if templates.len() < 2 {
            return invalid(format!("need at least 2 templates, got {}", templates.len()));
        }
        let dims = templates[0].dims();
        if let Some((i, t)) = templates.iter().enumerate().find(|(_, t)| t.dims() != dims) {
            return invalid(format!(
                "template {i} is {:?}, expected {:?}",
                t.dims(),
                dims
            ));
        }
        Ok(Self { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.templates[0].dims()
    }

    pub fn templates(&self) -> &[Image] {
        &self.templates
    }

    /// The set without template `index`, as used for held-out tuning.
    pub fn without(&self, index: usize) -> Result<Self> {
        if index >= self.templates.len() {
            return invalid(format!("template index {index} out of range"));
        }
        let mut rest = self.templates.clone();
        rest.remove(index);
        Self::new(rest)
    }
}

/// Mean image plus orthonormal principal directions of a template set.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPrior {
    mean: Image,
    /// One flattened unit-norm image per retained component.
    eigenvectors: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
}

pub fn build_prior(ts: &TemplateSet, k: Option<usize>) -> Result<EigenPrior> {
    let n = ts.len();
    if let Some(k) = k {
        if k > n - 1 {
            return invalid(format!("cannot keep {k} components from {n} templates"));
        }
    }
    let (w, h) = ts.dims();
    let p = w * h;

    let mut mean = vec![0.0; p];
    for t in ts.templates() {
        for (m, v) in mean.iter_mut().zip(t.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred: Vec<Vec<f64>> = ts
        .templates()
        .iter()
        .map(|t| t.data().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let gram = DMatrix::from_fn(n, n, |i, j| dot(&centred[i], &centred[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * top)
        .take(n - 1)
        .collect();
    if let Some(k) = k {
        keep.truncate(k);
    }

    let mut eigenvectors: Vec<Vec<f64>> = Vec::with_capacity(keep.len());
    let mut eigenvalues = Vec::with_capacity(keep.len());
    for &idx in &keep {
        let g = eig.eigenvalues[idx];
        let u = eig.eigenvectors.column(idx);
        let mut v = vec![0.0; p];
        for (coef, c) in u.iter().zip(&centred) {
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi += coef * ci;
            }
        }
        // Re-orthogonalise against earlier components, twice.
        for _ in 0..2 {
            for prev in &eigenvectors {
                let d = dot(&v, prev);
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        fix_sign(&mut v);
        eigenvectors.push(v);
        eigenvalues.push((g / (n - 1) as f64).max(0.0));
    }

    Ok(EigenPrior { mean: Image::new(w, h, mean)?, eigenvectors, eigenvalues })
}

/// Makes the entry of largest magnitude positive.
fn fix_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
        .0;
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl EigenPrior {
    /// Assembles a prior from stored parts, checking orthonormality.
    pub fn from_parts(mean: Image, eigenvectors: Vec<Vec<f64>>, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvectors.len() != eigenvalues.len() {
            return invalid("eigenvector and eigenvalue counts differ");
        }
        for (i, v) in eigenvectors.iter().enumerate() {
            if v.len() != mean.len() {
                return invalid(format!("eigenvector {i} has wrong length"));
            }
            for (j, u) in eigenvectors.iter().enumerate().take(i + 1) {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(v, u) - want).abs() > 1e-8 {
                    return invalid("eigenvectors are not orthonormal");
                }
            }
        }
        if eigenvalues.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return invalid("eigenvalues must be finite and nonnegative");
        }
        Ok(Self { mean, eigenvectors, eigenvalues })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mean.dims()
    }

    pub fn mean(&self) -> &Image {
        &self.mean
    }

    pub fn component_count(&self) -> usize {
        self.eigenvectors.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, i: usize) -> &[f64] {
        &self.eigenvectors[i]
    }

    pub fn eigenvector_image(&self, i: usize) -> Result<Image> {
        let (w, h) = self.dims();
        Image::new(w, h, self.eigenvectors[i].clone())
    }

    /// `alpha = V^T (x - mu)`.
    pub fn project_alpha(&self, x: &Image) -> Result<CoefVector> {
        if x.dims() != self.dims() {
            return invalid(format!(
                "image is {:?} but prior is {:?}",
                x.dims(),
                self.dims()
            ));
        }
        CoefVector::new(self.project_raw(x.data()))
    }

    /// `mu + V alpha`.
    pub fn reconstruct_from_alpha(&self, alpha: &CoefVector) -> Result<Image> {
        if alpha.len() != self.component_count() {
            return invalid(format!(
                "alpha has {} entries, prior has {} components",
                alpha.len(),
                self.component_count()
            ));
        }
        let (w, h) = self.dims();
        Image::new(w, h, self.reconstruct_raw(alpha.data()))
    }

    pub(crate) fn project_raw(&self, x: &[f64]) -> Vec<f64> {
        let centred: Vec<f64> = x.iter().zip(self.mean.data()).map(|(a, m)| a - m).collect();
        self.eigenvectors.iter().map(|v| dot(v, &centred)).collect()
    }

    pub(crate) fn reconstruct_raw(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = self.mean.data().to_vec();
        for (a, v) in alpha.iter().zip(&self.eigenvectors) {
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += a * vi);
        }
        out
    }
}
