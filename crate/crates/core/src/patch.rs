//! Image patches, K-SVD dictionary learning and CS reconstruction with a
//! patch-dictionary prior.

use std::borrow::Cow;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dct::DctBasis;
use crate::error::{invalid, Error, Result};
use crate::grid::{CoefVector, Image, Sinogram};
use crate::linop::{dot, LinearOperator};
use crate::projector::RadonOperator;
use crate::prox::{DenseOperator, L1LeastSquares};
use crate::solver::{check_geometry, fbp_initial_theta, solve_plain_from, SolveConfig, SolveResult, Tether, ThetaProblem};

/// Two atoms closer than this in absolute cosine count as identical.
const DUPLICATE_COHERENCE: f64 = 1.0 - 1e-8;

const MAGIC: &[u8; 4] = b"PDCT";
const FORMAT_VERSION: u32 = 1;

/// Square patches on a regular grid whose last origin is clamped so the
/// right and bottom edges are covered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGeometry {
    patch: usize,
    stride: usize,
    width: usize,
    height: usize,
    xs: Vec<usize>,
    ys: Vec<usize>,
}

fn origins(dim: usize, p: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=dim - p).step_by(stride).collect();
    if *v.last().unwrap() != dim - p {
        v.push(dim - p);
    }
    v
}

impl PatchGeometry {
    pub fn new(patch: usize, stride: usize, width: usize, height: usize) -> Result<Self> {
        if patch == 0 || patch > width.min(height) {
            return invalid(format!("patch side {patch} must be in 1..={}", width.min(height)));
        }
        if stride == 0 || stride > patch {
            return invalid(format!("stride {stride} must be in 1..={patch}"));
        }
        let xs = origins(width, patch, stride);
        let ys = origins(height, patch, stride);
        Ok(Self { patch, stride, width, height, xs, ys })
    }

    /// Reconstruction-time grid: stride `p / 2` (at least 1).
    pub fn overlapping(patch: usize, width: usize, height: usize) -> Result<Self> {
        Self::new(patch, (patch / 2).max(1), width, height)
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Pixels per patch, `p^2`.
    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn count(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// Top-left corners in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ys.iter().flat_map(move |&y| self.xs.iter().map(move |&x| (x, y)))
    }

    fn extract_into(&self, x: &[f64], out: &mut [f64]) {
        let (p, d) = (self.patch, self.dim());
        for ((ox, oy), dst) in self.origins().zip(out.chunks_exact_mut(d)) {
            for r in 0..p {
                let src = (oy + r) * self.width + ox;
                dst[r * p..(r + 1) * p].copy_from_slice(&x[src..src + p]);
            }
        }
    }

    fn assemble_into(&self, stacked: &[f64], sum: &mut [f64], count: Option<&mut [f64]>) {
        let (p, d) = (self.patch, self.dim());
        sum.iter_mut().for_each(|v| *v = 0.0);
        for ((ox, oy), src) in self.origins().zip(stacked.chunks_exact(d)) {
            for r in 0..p {
                let row = (oy + r) * self.width + ox;
                for (s, v) in sum[row..row + p].iter_mut().zip(&src[r * p..(r + 1) * p]) {
                    *s += v;
                }
            }
        }
        if let Some(count) = count {
            count.iter_mut().for_each(|v| *v = 0.0);
            for (ox, oy) in self.origins() {
                for r in 0..p {
                    let row = (oy + r) * self.width + ox;
                    count[row..row + p].iter_mut().for_each(|c| *c += 1.0);
                }
            }
        }
    }
}

/// Patch vectors (row-major within each patch) in grid order.
pub fn extract_patches(x: &Image, g: &PatchGeometry) -> Result<Vec<Vec<f64>>> {
    if x.dims() != g.image_size() {
        return invalid(format!("image is {:?} but patch grid is {:?}", x.dims(), g.image_size()));
    }
    let mut flat = vec![0.0; g.count() * g.dim()];
    g.extract_into(x.data(), &mut flat);
    Ok(flat.chunks_exact(g.dim()).map(|c| c.to_vec()).collect())
}

/// Returns `(sum_i P_i^T v_i, sum_i P_i^T 1)`.
pub fn assemble_patches(patches: &[Vec<f64>], g: &PatchGeometry) -> Result<(Image, Image)> {
    if patches.len() != g.count() {
        return invalid(format!("got {} patches, grid has {}", patches.len(), g.count()));
    }
    if patches.iter().any(|p| p.len() != g.dim()) {
        return invalid(format!("patch vectors must have length {}", g.dim()));
    }
    let flat: Vec<f64> = patches.concat();
    let (w, h) = g.image_size();
    let mut sum = vec![0.0; w * h];
    let mut count = vec![0.0; w * h];
    g.assemble_into(&flat, &mut sum, Some(&mut count));
    Ok((Image::new(w, h, sum)?, Image::new(w, h, count)?))
}

/// All patches of an image stacked into one vector, as a linear operator.
#[derive(Debug, Clone)]
pub struct PatchExtractor(pub PatchGeometry);

impl LinearOperator for PatchExtractor {
    fn input_len(&self) -> usize {
        self.0.width * self.0.height
    }

    fn output_len(&self) -> usize {
        self.0.count() * self.0.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.0.extract_into(x, out);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.0.assemble_into(y, out, None);
    }
}

/// Dictionary of unit-norm atoms for `p x p` patches, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDictionary {
    patch: usize,
    atom_count: usize,
    atoms: Vec<f64>,
}

impl PatchDictionary {
    pub fn new(patch: usize, atom_count: usize, atoms: Vec<f64>) -> Result<Self> {
        let d = patch * patch;
        if patch == 0 || atom_count == 0 {
            return invalid("dictionary needs a nonzero patch size and atom count");
        }
        if atoms.len() != d * atom_count {
            return invalid(format!("expected {} entries, got {}", d * atom_count, atoms.len()));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return invalid("dictionary has non-finite entries");
        }
        for (j, a) in atoms.chunks_exact(d).enumerate() {
            let n = dot(a, a).sqrt();
            if (n - 1.0).abs() > 1e-10 {
                return invalid(format!("atom {j} has norm {n}, expected 1"));
            }
        }
        let dict = Self { patch, atom_count, atoms };
        if dict.coherence() >= DUPLICATE_COHERENCE {
            return invalid("dictionary has duplicate atoms");
        }
        Ok(dict)
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.atoms[j * d..(j + 1) * d]
    }

    /// Column-major `d x m` entries.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Largest absolute inner product between distinct atoms.
    pub fn coherence(&self) -> f64 {
        let mut c = 0.0f64;
        for i in 0..self.atom_count {
            for j in i + 1..self.atom_count {
                c = c.max(dot(self.atom(i), self.atom(j)).abs());
            }
        }
        c
    }

    /// `D alpha`.
    pub fn synthesize(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                out.iter_mut().zip(self.atom(j)).for_each(|(o, v)| *o += a * v);
            }
        }
        out
    }

    fn gram(&self) -> Vec<f64> {
        let m = self.atom_count;
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = dot(self.atom(i), self.atom(j));
                g[i * m + j] = v;
                g[j * m + i] = v;
            }
        }
        g
    }

    fn row_major(&self) -> DenseOperator {
        let (d, m) = (self.dim(), self.atom_count);
        let mut data = vec![0.0; d * m];
        for j in 0..m {
            for (i, v) in self.atom(j).iter().enumerate() {
                data[i * m + j] = *v;
            }
        }
        DenseOperator { rows: d, cols: m, data }
    }

    /// Squared spectral norm `||D||^2`.
    fn norm_sq(&self) -> f64 {
        let d = self.dim();
        let dm = DMatrix::from_column_slice(d, self.atom_count, &self.atoms);
        let ddt = &dm * dm.transpose();
        SymmetricEigen::new(ddt).eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    /// Serialises as `PDCT`, then version, `d`, `m`, `p` as little-endian
    /// `u32`, then the column-major entries as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.atoms.len());
        out.extend_from_slice(MAGIC);
        for v in [FORMAT_VERSION, self.dim() as u32, self.atom_count as u32, self.patch as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.atoms {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return invalid("not a dictionary file (bad magic)");
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (version, d, m, p) = (word(0), word(1), word(2), word(3));
        if version != FORMAT_VERSION as usize {
            return invalid(format!("unsupported dictionary version {version}"));
        }
        if p * p != d {
            return invalid(format!("header says d = {d} but p = {p}"));
        }
        let body = &bytes[20..];
        if body.len() != 8 * d * m {
            return invalid(format!("expected {} payload bytes, found {}", 8 * d * m, body.len()));
        }
        let atoms = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(p, m, atoms)
    }
}

/// Orthogonal matching pursuit with a cached Gram matrix.
pub struct OmpCoder<'a> {
    dict: Cow<'a, PatchDictionary>,
    gram: Vec<f64>,
}

impl<'a> OmpCoder<'a> {
    pub fn new(dict: &'a PatchDictionary) -> Self {
        Self { gram: dict.gram(), dict: Cow::Borrowed(dict) }
    }

    fn new_owned(dict: PatchDictionary) -> OmpCoder<'static> {
        OmpCoder { gram: dict.gram(), dict: Cow::Owned(dict) }
    }

    /// Sparse code as `(atom, coefficient)` pairs, at most `sparsity` long.
    pub fn encode_sparse(&self, v: &[f64], sparsity: usize) -> Vec<(usize, f64)> {
        let m = self.dict.atom_count;
        let dtv: Vec<f64> = (0..m).map(|j| dot(self.dict.atom(j), v)).collect();
        let energy = dot(v, v);
        if energy == 0.0 {
            return Vec::new();
        }
        let mut corr = dtv.clone();
        let mut support: Vec<usize> = Vec::new();
        let mut coef: Vec<f64> = Vec::new();
        while support.len() < sparsity.min(self.dict.dim()) {
            let (k, best) = corr
                .iter()
                .enumerate()
                .filter(|(j, _)| !support.contains(j))
                .fold((usize::MAX, 0.0f64), |acc, (j, c)| if c.abs() > acc.1 { (j, c.abs()) } else { acc });
            if k == usize::MAX || best <= 1e-12 * energy.sqrt() {
                break;
            }
            support.push(k);
            let s = support.len();
            let gs = DMatrix::from_fn(s, s, |a, b| self.gram[support[a] * m + support[b]]);
            let Some(chol) = gs.cholesky() else {
                support.pop();
                break;
            };
            let rhs = nalgebra::DVector::from_iterator(s, support.iter().map(|&j| dtv[j]));
            let c = chol.solve(&rhs);
            coef = c.iter().copied().collect();
            for (j, cj) in corr.iter_mut().enumerate() {
                *cj = dtv[j] - support.iter().zip(&coef).map(|(&i, a)| self.gram[j * m + i] * a).sum::<f64>();
            }
            let resid = energy - support.iter().zip(&coef).map(|(&i, a)| dtv[i] * a).sum::<f64>();
            if resid <= 1e-24 * energy {
                break;
            }
        }
        support.into_iter().zip(coef).collect()
    }

    /// Dense code of length `m`.
    pub fn encode(&self, v: &[f64], sparsity: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dict.atom_count];
        for (j, c) in self.encode_sparse(v, sparsity) {
            out[j] = c;
        }
        out
    }
}

/// OMP code of `v` with at most `sparsity` nonzeros.
pub fn omp_encode(dict: &PatchDictionary, v: &[f64], sparsity: usize) -> Result<CoefVector> {
    if v.len() != dict.dim() {
        return invalid(format!("vector has length {}, atoms have {}", v.len(), dict.dim()));
    }
    if sparsity == 0 || sparsity > dict.dim() {
        return invalid(format!("sparsity must be in 1..={}", dict.dim()));
    }
    CoefVector::new(OmpCoder::new(dict).encode(v, sparsity))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsvdConfig {
    pub atom_count: usize,
    pub sparsity: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl KsvdConfig {
    /// `4 p^2` atoms, sparsity 8, 30 sweeps.
    pub fn for_patch(p: usize, seed: u64) -> Self {
        Self { atom_count: 4 * p * p, sparsity: 8.min(p * p), iterations: 30, seed }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.sparsity == 0 || self.sparsity > d {
            return invalid(format!("sparsity must be in 1..={d}"));
        }
        if self.atom_count <= d {
            return invalid(format!("atom count {} must exceed patch dimension {d}", self.atom_count));
        }
        if self.iterations == 0 {
            return invalid("K-SVD needs at least one sweep");
        }
        Ok(())
    }
}

/// Stride-1 patches of every template, randomly subsampled to at most `cap`.
pub fn training_patches(templates: &[Image], patch: usize, cap: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut all = Vec::new();
    for t in templates {
        let g = PatchGeometry::new(patch, 1, t.width(), t.height())?;
        all.extend(extract_patches(t, &g)?);
    }
    if all.len() <= cap {
        return Ok(all);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, all.len(), cap).into_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| std::mem::take(&mut all[i])).collect())
}

#[derive(Debug, Clone)]
pub struct KsvdOutput {
    pub dictionary: PatchDictionary,
    /// Mean squared representation error before the first sweep and after each.
    pub error_trace: Vec<f64>,
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Normalised copy of `v` unless it is (near) zero or duplicates an atom.
fn fresh_atom(v: &[f64], atoms: &[f64], d: usize, skip: usize) -> Option<Vec<f64>> {
    let n = dot(v, v).sqrt();
    if n <= 1e-12 {
        return None;
    }
    let u: Vec<f64> = v.iter().map(|x| x / n).collect();
    let dup = atoms
        .chunks_exact(d)
        .enumerate()
        .any(|(j, a)| j != skip && dot(a, &u).abs() >= DUPLICATE_COHERENCE);
    (!dup).then_some(u)
}

fn residual(x: &[f64], atoms: &[f64], d: usize, code: &[(usize, f64)]) -> Vec<f64> {
    let mut r = x.to_vec();
    for &(j, c) in code {
        r.iter_mut().zip(&atoms[j * d..(j + 1) * d]).for_each(|(ri, a)| *ri -= c * a);
    }
    r
}

/// K-SVD: OMP coding alternated with rank-1 atom updates. Unused atoms are
/// replaced by the worst represented patches. A sweep that would raise the
/// mean error is redone with each patch keeping its previous code where that
/// is better, and near-duplicate or rarely used atoms are re-seeded only when
/// that lowers the error, so the error trace cannot increase.
pub fn ksvd_train(patches: &[Vec<f64>], cfg: &KsvdConfig) -> Result<KsvdOutput> {
    let Some(first) = patches.first() else {
        return invalid("no training patches");
    };
    let d = first.len();
    let p = (d as f64).sqrt().round() as usize;
    if p * p != d || patches.iter().any(|v| v.len() != d) {
        return invalid("training patches must all have the same square length");
    }
    cfg.validate(d)?;
    let m = cfg.atom_count;
    if patches.len() < m {
        return invalid(format!("need at least {m} patches, got {}", patches.len()));
    }
    if patches.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("training patches contain non-finite values");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut atoms = vec![0.0; d * m];
    let order = sample(&mut rng, patches.len(), m).into_vec();
    for (j, &i) in order.iter().enumerate() {
        let a = fresh_atom(&patches[i], &atoms[..j * d], d, usize::MAX).unwrap_or_else(|| random_unit(&mut rng, d));
        atoms[j * d..(j + 1) * d].copy_from_slice(&a);
    }

    let coder = OmpCoder::new_owned(PatchDictionary { patch: p, atom_count: m, atoms: atoms.clone() });
    let (codes, errors): (Vec<_>, Vec<_>) = patches
        .par_iter()
        .map(|x| {
            let c = coder.encode_sparse(x, cfg.sparsity);
            let r = residual(x, &atoms, d, &c);
            let e = dot(&r, &r);
            (c, e)
        })
        .unzip();
    let mut state = KsvdState { atoms, codes, errors, rng };
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(state.mean_error());

    for _ in 0..cfg.iterations {
        let before = state.mean_error();
        let mut plain = state.clone();
        plain.sweep(patches, p, cfg.sparsity, false);
        state = if plain.mean_error() <= before {
            plain
        } else {
            // Greedy coding raised the error; redo the sweep keeping each
            // patch's previous code where it is better.
            state.sweep(patches, p, cfg.sparsity, true);
            state
        };
        state.reseed(patches, p, cfg.sparsity);
        trace.push(state.mean_error());
    }

    let dictionary = PatchDictionary::new(p, m, state.atoms)?;
    Ok(KsvdOutput { dictionary, error_trace: trace })
}

#[derive(Clone)]
struct KsvdState {
    atoms: Vec<f64>,
    codes: Vec<Vec<(usize, f64)>>,
    errors: Vec<f64>,
    rng: ChaCha8Rng,
}

impl KsvdState {
    fn mean_error(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// One K-SVD sweep: OMP coding, then a rank-1 update of every atom.
    /// With `keep_better` a patch keeps its previous code when that has the
    /// lower error, which makes the sweep monotone.
    fn sweep(&mut self, patches: &[Vec<f64>], p: usize, sparsity: usize, keep_better: bool) {
        let d = p * p;
        let m = self.atoms.len() / d;
        let atoms = &mut self.atoms;
        let codes = &mut self.codes;

        let coder = OmpCoder::new_owned(PatchDictionary { patch: p, atom_count: m, atoms: atoms.clone() });
        let fresh: Vec<(Vec<(usize, f64)>, f64)> = patches
            .par_iter()
            .zip(codes.par_iter())
            .map(|(x, old)| {
                let c = coder.encode_sparse(x, sparsity);
                let r = residual(x, atoms, d, &c);
                let e = dot(&r, &r);
                if keep_better {
                    let r = residual(x, atoms, d, old);
                    let eo = dot(&r, &r);
                    if eo < e {
                        return (old.clone(), eo);
                    }
                }
                (c, e)
            })
            .collect();
        let (new_codes, errors): (Vec<_>, Vec<_>) = fresh.into_iter().unzip();
        *codes = new_codes;

        let mut resid: Vec<Vec<f64>> =
            patches.par_iter().zip(codes.par_iter()).map(|(x, c)| residual(x, atoms, d, c)).collect();
        let mut users: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        for (i, c) in codes.iter().enumerate() {
            for (slot, &(j, _)) in c.iter().enumerate() {
                users[j].push((i, slot));
            }
        }
        let mut worst: Vec<usize> = (0..patches.len()).collect();
        worst.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
        let mut worst = worst.into_iter();

        for k in 0..m {
            if users[k].is_empty() {
                let rng = &mut self.rng;
                let replacement = worst
                    .by_ref()
                    .find_map(|i| fresh_atom(&patches[i], atoms, d, k))
                    .unwrap_or_else(|| loop {
                        let r = random_unit(rng, d);
                        if let Some(a) = fresh_atom(&r, atoms, d, k) {
                            break a;
                        }
                    });
                atoms[k * d..(k + 1) * d].copy_from_slice(&replacement);
                continue;
            }
            let old: Vec<f64> = atoms[k * d..(k + 1) * d].to_vec();
            // E = residual with atom k's contribution restored, one column per user.
            let e_cols: Vec<Vec<f64>> = users[k]
                .iter()
                .map(|&(i, slot)| {
                    let c = codes[i][slot].1;
                    resid[i].iter().zip(&old).map(|(r, a)| r + c * a).collect()
                })
                .collect();
            let Some(u) = top_left_singular_vector(&e_cols, d, &old) else { continue };
            for (&(i, slot), col) in users[k].iter().zip(&e_cols) {
                let c = dot(col, &u);
                codes[i][slot].1 = c;
                resid[i] = col.iter().zip(&u).map(|(e, a)| e - c * a).collect();
            }
            atoms[k * d..(k + 1) * d].copy_from_slice(&u);
        }
        self.errors = resid.iter().map(|r| dot(r, r)).collect();
    }

    /// Tries to move near-duplicate or rarely used atoms onto poorly
    /// represented patches. Each trial recodes every patch, keeping the
    /// better of its adjusted old code and a new OMP code, and is kept only
    /// if the total error drops.
    fn reseed(&mut self, patches: &[Vec<f64>], p: usize, sparsity: usize) {
        let d = p * p;
        let m = self.atoms.len() / d;
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.sort_by(|&a, &b| self.errors[b].total_cmp(&self.errors[a]).then(a.cmp(&b)));
        let mut next_worst = 0;
        let mut trials = 0;
        for k in 0..m {
            if trials >= RESEED_TRIALS {
                break;
            }
            let atom_k = &self.atoms[k * d..(k + 1) * d];
            let twin = (0..m).find(|&j| j != k && dot(&self.atoms[j * d..(j + 1) * d], atom_k).abs() > RESEED_COHERENCE);
            let uses = self.codes.iter().filter(|c| c.iter().any(|&(j, _)| j == k)).count();
            if twin.is_none() && uses >= RARE_USE {
                continue;
            }
            let candidate = loop {
                let Some(&w) = order.get(next_worst) else { break None };
                next_worst += 1;
                if let Some(a) = fresh_atom(&patches[w], &self.atoms, d, k) {
                    break Some(a);
                }
            };
            let Some(new_atom) = candidate else { break };
            trials += 1;

            let mut atoms = self.atoms.clone();
            atoms[k * d..(k + 1) * d].copy_from_slice(&new_atom);
            let coder = OmpCoder::new_owned(PatchDictionary { patch: p, atom_count: m, atoms: atoms.clone() });
            let recoded: Vec<(Vec<(usize, f64)>, f64)> = patches
                .par_iter()
                .zip(self.codes.par_iter())
                .zip(self.errors.par_iter())
                .map(|((x, code), &err)| {
                    let fallback = if code.iter().any(|&(j, _)| j == k) {
                        let mut support: Vec<usize> = code.iter().map(|&(j, _)| j).filter(|&j| j != k).collect();
                        if let Some(t) = twin {
                            if !support.contains(&t) {
                                support.push(t);
                            }
                        }
                        code_on_support(x, &atoms, d, &support)
                    } else {
                        Some((code.clone(), err))
                    };
                    let fresh = coder.encode_sparse(x, sparsity);
                    let r = residual(x, &atoms, d, &fresh);
                    let e = dot(&r, &r);
                    match fallback {
                        Some((c, fe)) if fe <= e => (c, fe),
                        _ => (fresh, e),
                    }
                })
                .collect();
            let before: f64 = self.errors.iter().sum();
            let after: f64 = recoded.iter().map(|r| r.1).sum();
            if after < before {
                self.atoms = atoms;
                (self.codes, self.errors) = recoded.into_iter().unzip();
            }
        }
    }
}

/// Atoms this close to another atom, or used by fewer than `RARE_USE`
/// patches, are candidates for re-seeding; at most `RESEED_TRIALS` per sweep.
const RESEED_COHERENCE: f64 = 0.9;
const RARE_USE: usize = 4;
const RESEED_TRIALS: usize = 8;

/// Least-squares code of `x` on a fixed support and its squared error.
fn code_on_support(x: &[f64], atoms: &[f64], d: usize, support: &[usize]) -> Option<(Vec<(usize, f64)>, f64)> {
    if support.is_empty() {
        return Some((Vec::new(), dot(x, x)));
    }
    let s = support.len();
    let col = |j: usize| &atoms[j * d..(j + 1) * d];
    let g = DMatrix::from_fn(s, s, |a, b| dot(col(support[a]), col(support[b])));
    let rhs = nalgebra::DVector::from_iterator(s, support.iter().map(|&j| dot(col(j), x)));
    let c = g.cholesky()?.solve(&rhs);
    let code: Vec<(usize, f64)> = support.iter().copied().zip(c.iter().copied()).collect();
    let r = residual(x, atoms, d, &code);
    Some((code, dot(&r, &r)))
}

/// Leading left singular vector of the matrix with the given columns, signed
/// to agree with `reference`. `None` when the matrix is zero.
fn top_left_singular_vector(cols: &[Vec<f64>], d: usize, reference: &[f64]) -> Option<Vec<f64>> {
    let mut eet = DMatrix::<f64>::zeros(d, d);
    for col in cols {
        for a in 0..d {
            for b in a..d {
                eet[(a, b)] += col[a] * col[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            eet[(a, b)] = eet[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(eet);
    let top = (0..d).fold(0, |best, i| if eig.eigenvalues[i] > eig.eigenvalues[best] { i } else { best });
    if eig.eigenvalues[top] <= 0.0 {
        return None;
    }
    let mut u: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let nu = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= nu);
    if dot(&u, reference) < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    Some(u)
}

/// How the per-patch codes are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchCoder {
    /// l1-regularised least squares solved by proximal gradient; keeps the
    /// outer objective monotone.
    Exact,
    /// OMP with the given sparsity. Faster, but the outer objective may rise.
    Omp { sparsity: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSolveConfig {
    pub base: SolveConfig,
    pub lambda3: f64,
    pub coder: PatchCoder,
}

impl PatchSolveConfig {
    pub fn new(base: SolveConfig, lambda3: f64) -> Self {
        Self { base, lambda3, coder: PatchCoder::Exact }
    }
}

/// Objective with the patch prior:
/// `||Phi Psi theta - y||^2 + l1 ||theta||_1
///  + (l2 / Np) sum_i ||P_i Psi theta - D a_i||^2 + (l3 / Np) sum_i ||a_i||_1`.
#[allow(clippy::too_many_arguments)]
pub fn patch_objective_value(
    theta: &CoefVector,
    codes: &[Vec<f64>],
    sino: &Sinogram,
    op: &RadonOperator,
    basis: &DctBasis,
    dict: &PatchDictionary,
    geometry: &PatchGeometry,
    cfg: &PatchSolveConfig,
) -> Result<f64> {
    check_geometry(sino, op, basis)?;
    check_patch_setup(op, dict, geometry)?;
    if codes.len() != geometry.count() || codes.iter().any(|c| c.len() != dict.atom_count()) {
        return invalid("patch codes do not match the grid and dictionary");
    }
    let x = basis.synthesize(theta)?;
    let phi = op.forward(&x)?;
    let data: f64 = phi.data().iter().zip(sino.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let np = geometry.count() as f64;
    let mut fit = 0.0;
    let mut l1 = 0.0;
    for (patch, code) in extract_patches(&x, geometry)?.iter().zip(codes) {
        let da = dict.synthesize(code);
        fit += patch.iter().zip(&da).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        l1 += code.iter().map(|v| v.abs()).sum::<f64>();
    }
    Ok(data + cfg.base.lambda1 * theta.l1_norm() + cfg.base.lambda2 / np * fit + cfg.lambda3 / np * l1)
}

fn check_patch_setup(op: &RadonOperator, dict: &PatchDictionary, geometry: &PatchGeometry) -> Result<()> {
    if geometry.image_size() != op.image_size() {
        return invalid("patch grid does not match projector image size");
    }
    if geometry.patch() != dict.patch() {
        return invalid(format!("grid patch side {} but dictionary has {}", geometry.patch(), dict.patch()));
    }
    Ok(())
}

impl<'a> ThetaProblem<'a> {
    /// Patch tether: `(lambda2 / Np) sum_i ||P_i Psi theta - D a_i||^2`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_patch_prior(
        sino: &Sinogram,
        op: &'a RadonOperator,
        basis: &'a DctBasis,
        dict: &PatchDictionary,
        geometry: &PatchGeometry,
        codes: &[Vec<f64>],
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        check_patch_setup(op, dict, geometry)?;
        if codes.len() != geometry.count() || codes.iter().any(|c| c.len() != dict.atom_count()) {
            return invalid("patch codes do not match the grid and dictionary");
        }
        let r: Vec<f64> = codes.iter().flat_map(|c| dict.synthesize(c)).collect();
        let weight = lambda2 / geometry.count() as f64;
        Self::tethered(sino, op, basis, Tether::Patches(PatchExtractor(geometry.clone())), weight, r, lambda1)
    }
}

struct CodeStep<'a> {
    dict: &'a PatchDictionary,
    dense: DenseOperator,
    lipschitz: f64,
    coder: PatchCoder,
    l1: f64,
    budget: usize,
    tol: f64,
}

impl CodeStep<'_> {
    fn run(&self, patches: &[Vec<f64>], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self.coder {
            PatchCoder::Exact => patches
                .par_iter()
                .zip(previous)
                .map(|(v, a0)| {
                    let p = L1LeastSquares { op: &self.dense, target: v, l1: self.l1, lipschitz: self.lipschitz };
                    p.solve(a0.clone(), self.budget, self.tol).x
                })
                .collect(),
            PatchCoder::Omp { sparsity } => {
                let coder = OmpCoder::new(self.dict);
                patches.par_iter().map(|v| coder.encode(v, sparsity)).collect()
            }
        }
    }
}

/// Alternates a theta-step on the full objective with per-patch code
/// updates. `lambda2 = 0` runs the plain CS solver.
pub fn solve_with_patch_prior(
    sino: &Sinogram,
    op: &RadonOperator,
    basis: &DctBasis,
    dict: &PatchDictionary,
    geometry: &PatchGeometry,
    cfg: &PatchSolveConfig,
) -> Result<SolveResult> {
    let base = &cfg.base;
    base.validate()?;
    if !(cfg.lambda3 >= 0.0 && cfg.lambda3.is_finite()) {
        return invalid(format!("lambda3 must be finite and >= 0, got {}", cfg.lambda3));
    }
    if let PatchCoder::Omp { sparsity } = cfg.coder {
        if sparsity == 0 || sparsity > dict.dim() {
            return invalid(format!("OMP sparsity must be in 1..={}", dict.dim()));
        }
    }
    check_geometry(sino, op, basis)?;
    check_patch_setup(op, dict, geometry)?;
    let (fbp, theta0) = fbp_initial_theta(sino, op, basis)?;
    if base.lambda2 == 0.0 {
        return solve_plain_from(sino, op, basis, base, theta0);
    }

    let step = CodeStep {
        dict,
        dense: dict.row_major(),
        lipschitz: 2.0 * dict.norm_sq() / 0.95,
        coder: cfg.coder,
        l1: cfg.lambda3 / base.lambda2,
        budget: base.inner_budget,
        tol: base.tol,
    };
    let failure = |trace: Vec<f64>| Error::NumericalFailure { message: "objective became non-finite".into(), trace };

    let mut theta = theta0;
    let zeros = vec![vec![0.0; dict.atom_count()]; geometry.count()];
    let mut codes = step.run(&extract_patches(&fbp, geometry)?, &zeros);
    let objective = |theta: &[f64], codes: &[Vec<f64>]| -> Result<f64> {
        let t = CoefVector::new(theta.to_vec())?;
        patch_objective_value(&t, codes, sino, op, basis, dict, geometry, cfg)
    };
    let mut trace = vec![objective(&theta, &codes).unwrap_or(f64::NAN)];
    if !trace[0].is_finite() {
        return Err(failure(trace));
    }
    let mut lip = None;
    let mut iterations = 0;
    for _ in 0..base.outer_iters {
        let problem = ThetaProblem::with_patch_prior(sino, op, basis, dict, geometry, &codes, base.lambda1, base.lambda2)?;
        let l = *lip.get_or_insert_with(|| problem.lipschitz_estimate());
        let (next, it) = problem.solve(theta, l, base.inner_budget, base.tol);
        iterations += it;
        theta = next;
        let Ok(t) = CoefVector::new(theta.clone()) else {
            trace.push(f64::NAN);
            return Err(failure(trace));
        };
        let x = basis.synthesize(&t)?;
        codes = step.run(&extract_patches(&x, geometry)?, &codes);
        let e = objective(&theta, &codes).unwrap_or(f64::NAN);
        let prev = *trace.last().unwrap();
        trace.push(e);
        if !e.is_finite() {
            return Err(failure(trace));
        }
        if base.tol > 0.0 && prev - e <= base.tol * prev.abs() {
            break;
        }
    }
    let theta = CoefVector::new(theta)?;
    let image = basis.synthesize(&theta)?;
    let alpha = CoefVector::new(codes.concat())?;
    Ok(SolveResult { image, theta, alpha: Some(alpha), objective_trace: trace, iterations_used: iterations })
}
