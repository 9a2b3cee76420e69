//! l1-regularised CS reconstruction in the DCT domain, with an optional
//! quadratic tether to the eigenspace prior.
//!
//! Plain CS minimises `E(theta) = ||Phi Psi theta - y||^2 + lambda1 ||theta||_1`.
//! With a prior the objective gains `lambda2 ||Psi theta - (mu + V alpha)||^2`
//! and is minimised by alternating a proximal-gradient theta-step with the
//! closed-form `alpha = V^T (Psi theta - mu)`.

use crate::dct::DctBasis;
use crate::error::{invalid, Error, Result};
use crate::fbp::{fbp_reconstruct, FbpConfig, Filter};
use crate::grid::{CoefVector, Image, Sinogram};
use crate::linop::{operator_norm_estimate, LinearOperator};
use crate::patch::PatchExtractor;
use crate::pca::EigenPrior;
use crate::projector::RadonOperator;
use crate::prox::L1LeastSquares;

/// Power iterations used for the step-size estimate.
const NORM_ITERATIONS: usize = 100;
/// Step is `STEP_SAFETY / L`.
const STEP_SAFETY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub outer_iters: usize,
    pub inner_budget: usize,
    /// Relative objective decrease that counts as converged, for the inner
    /// and outer loops. Zero runs all `outer_iters`.
    pub tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { lambda1: 1e-3, lambda2: 0.0, outer_iters: 10, inner_budget: 2000, tol: 1e-6 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return invalid(format!("lambda1 must be finite and >= 0, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return invalid(format!("lambda2 must be finite and >= 0, got {}", self.lambda2));
        }
        if self.outer_iters == 0 {
            return invalid("outer_iters must be at least 1");
        }
        if self.inner_budget == 0 {
            return invalid("inner_budget must be at least 1");
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return invalid("tol must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub image: Image,
    pub theta: CoefVector,
    pub alpha: Option<CoefVector>,
    /// Objective at the initial point followed by one value per outer iteration.
    pub objective_trace: Vec<f64>,
    /// Total proximal-gradient iterations over all theta-steps.
    pub iterations_used: usize,
}

pub(crate) fn check_geometry(sino: &Sinogram, op: &RadonOperator, basis: &DctBasis) -> Result<()> {
    if sino.bins() != op.bins() || sino.angles() != op.angles() {
        return invalid("sinogram geometry does not match projector");
    }
    if basis.dims() != op.image_size() {
        return invalid(format!(
            "basis is {:?} but projector image is {:?}",
            basis.dims(),
            op.image_size()
        ));
    }
    Ok(())
}

/// The identity on `n`-vectors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Identity(pub usize);

impl LinearOperator for Identity {
    fn input_len(&self) -> usize {
        self.0
    }

    fn output_len(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// `theta -> [Phi Psi theta ; sqrt(w) T Psi theta]`, the augmented system of
/// a theta-subproblem. `T` is the identity for the eigenspace prior and the
/// stacked patch extractor for the dictionary prior.
pub(crate) struct Stacked<'a> {
    pub op: &'a RadonOperator,
    pub basis: &'a DctBasis,
    pub tether: Option<(Tether, f64)>,
}

pub(crate) enum Tether {
    Identity(Identity),
    Patches(PatchExtractor),
}

impl Tether {
    fn get(&self) -> &dyn LinearOperator {
        match self {
            Tether::Identity(i) => i,
            Tether::Patches(p) => p,
        }
    }
}

impl LinearOperator for Stacked<'_> {
    fn input_len(&self) -> usize {
        self.op.input_len()
    }

    fn output_len(&self) -> usize {
        self.op.output_len() + self.tether.as_ref().map_or(0, |(t, _)| t.get().output_len())
    }

    fn apply(&self, theta: &[f64], out: &mut [f64]) {
        let mut u = vec![0.0; self.basis.output_len()];
        self.basis.apply(theta, &mut u);
        let (head, tail) = out.split_at_mut(self.op.output_len());
        self.op.apply(&u, head);
        if let Some((t, w)) = &self.tether {
            t.get().apply(&u, tail);
            let s = w.sqrt();
            tail.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let (head, tail) = y.split_at(self.op.output_len());
        let mut u = vec![0.0; self.op.input_len()];
        self.op.apply_adjoint(head, &mut u);
        if let Some((t, w)) = &self.tether {
            let t = t.get();
            let mut v = vec![0.0; t.input_len()];
            t.apply_adjoint(tail, &mut v);
            let s = w.sqrt();
            u.iter_mut().zip(&v).for_each(|(a, b)| *a += s * b);
        }
        self.basis.apply_adjoint(&u, out);
    }
}

/// One theta-subproblem: `||Phi Psi theta - y||^2 + w ||T Psi theta - r||^2
/// + lambda1 ||theta||_1` with `alpha` (hence `r`) held fixed.
pub struct ThetaProblem<'a> {
    system: Stacked<'a>,
    /// `[y ; sqrt(w) r]`
    target: Vec<f64>,
    r: Vec<f64>,
    lambda1: f64,
}

impl<'a> ThetaProblem<'a> {
    /// Data term only.
    pub fn plain(sino: &Sinogram, op: &'a RadonOperator, basis: &'a DctBasis, lambda1: f64) -> Result<Self> {
        check_geometry(sino, op, basis)?;
        Ok(Self { system: Stacked { op, basis, tether: None }, target: sino.data().to_vec(), r: Vec::new(), lambda1 })
    }

    /// Eigenspace tether with `r = mu + V alpha`.
    pub fn with_prior(
        sino: &Sinogram,
        op: &'a RadonOperator,
        basis: &'a DctBasis,
        prior: &EigenPrior,
        alpha: &CoefVector,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        check_geometry(sino, op, basis)?;
        if prior.dims() != op.image_size() {
            return invalid("prior dimensions do not match projector");
        }
        let r = prior.reconstruct_from_alpha(alpha)?.into_data();
        Self::tethered(sino, op, basis, Tether::Identity(Identity(op.input_len())), lambda2, r, lambda1)
    }

    pub(crate) fn tethered(
        sino: &Sinogram,
        op: &'a RadonOperator,
        basis: &'a DctBasis,
        tether: Tether,
        weight: f64,
        r: Vec<f64>,
        lambda1: f64,
    ) -> Result<Self> {
        check_geometry(sino, op, basis)?;
        let t = tether.get();
        if t.input_len() != op.input_len() || t.output_len() != r.len() {
            return invalid("tether operator does not match image or target size");
        }
        let s = weight.sqrt();
        let mut target = sino.data().to_vec();
        target.extend(r.iter().map(|v| s * v));
        Ok(Self { system: Stacked { op, basis, tether: Some((tether, weight)) }, target, r, lambda1 })
    }

    fn data_and_tether(&self, theta: &[f64]) -> (f64, f64) {
        let mut u = vec![0.0; self.system.basis.output_len()];
        self.system.basis.apply(theta, &mut u);
        let m = self.system.op.output_len();
        let mut phi = vec![0.0; m];
        self.system.op.apply(&u, &mut phi);
        let data: f64 = phi.iter().zip(&self.target[..m]).map(|(a, b)| (a - b).powi(2)).sum();
        let tether = match &self.system.tether {
            None => 0.0,
            Some((t, w)) => {
                let t = t.get();
                let mut tu = vec![0.0; t.output_len()];
                t.apply(&u, &mut tu);
                w * tu.iter().zip(&self.r).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            }
        };
        (data, tether)
    }

    /// Smooth part of the objective, evaluated term by term.
    pub fn smooth_value(&self, theta: &[f64]) -> f64 {
        let (d, t) = self.data_and_tether(theta);
        d + t
    }

    /// Gradient of [`Self::smooth_value`].
    pub fn smooth_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; self.system.output_len()];
        self.system.apply(theta, &mut ax);
        let r: Vec<f64> = ax.iter().zip(&self.target).map(|(a, b)| 2.0 * (a - b)).collect();
        let mut g = vec![0.0; theta.len()];
        self.system.apply_adjoint(&r, &mut g);
        g
    }

    pub fn lipschitz_estimate(&self) -> f64 {
        let n = operator_norm_estimate(&self.system, NORM_ITERATIONS);
        2.0 * n * n
    }

    pub(crate) fn solve(&self, theta0: Vec<f64>, lipschitz: f64, budget: usize, tol: f64) -> (Vec<f64>, usize) {
        let p = L1LeastSquares {
            op: &self.system,
            target: &self.target,
            l1: self.lambda1,
            lipschitz: lipschitz / STEP_SAFETY,
        };
        let out = p.solve(theta0, budget, tol);
        (out.x, out.iterations)
    }
}

/// DCT coefficients of the cosine-filtered FBP image, with non-finite
/// entries replaced by zero.
pub fn fbp_initial_theta(sino: &Sinogram, op: &RadonOperator, basis: &DctBasis) -> Result<(Image, Vec<f64>)> {
    let (w, h) = op.image_size();
    let mut cfg = FbpConfig::new(w, h).with_filter(Filter::Cosine);
    cfg.bin_spacing = op.bin_spacing();
    let img = fbp_reconstruct(sino, &cfg)?.map(|v| if v.is_finite() { v } else { 0.0 })?;
    let theta = basis.analyze(&img)?.into_data();
    Ok((img, theta))
}

/// Evaluates the full objective: data fit, l1 term and, when `prior` and
/// `alpha` are both given, the eigenspace tether.
pub fn objective_value(
    theta: &CoefVector,
    alpha: Option<&CoefVector>,
    sino: &Sinogram,
    op: &RadonOperator,
    basis: &DctBasis,
    prior: Option<&EigenPrior>,
    cfg: &SolveConfig,
) -> Result<f64> {
    check_geometry(sino, op, basis)?;
    let x = basis.synthesize(theta)?;
    let phi = op.forward(&x)?;
    let data: f64 = phi.data().iter().zip(sino.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let mut e = data + cfg.lambda1 * theta.l1_norm();
    match (prior, alpha) {
        (Some(p), Some(a)) => {
            if p.dims() != op.image_size() {
                return invalid("prior dimensions do not match projector");
            }
            let r = p.reconstruct_from_alpha(a)?;
            let t: f64 = x.data().iter().zip(r.data()).map(|(a, b)| (a - b).powi(2)).sum();
            e += cfg.lambda2 * t;
        }
        (None, None) => {}
        _ => return invalid("prior and alpha must be given together"),
    }
    Ok(e)
}

fn non_finite(trace: Vec<f64>) -> Error {
    Error::NumericalFailure { message: "objective became non-finite".into(), trace }
}

fn finish(basis: &DctBasis, theta: Vec<f64>, alpha: Option<CoefVector>, trace: Vec<f64>, iterations: usize) -> Result<SolveResult> {
    let theta = CoefVector::new(theta).map_err(|_| non_finite(trace.clone()))?;
    let image = basis.synthesize(&theta)?;
    Ok(SolveResult { image, theta, alpha, objective_trace: trace, iterations_used: iterations })
}

/// Plain CS from the FBP warm start.
pub fn solve_plain_cs(sino: &Sinogram, op: &RadonOperator, basis: &DctBasis, cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    check_geometry(sino, op, basis)?;
    let (_, theta0) = fbp_initial_theta(sino, op, basis)?;
    solve_plain_from(sino, op, basis, cfg, theta0)
}

pub(crate) fn solve_plain_from(
    sino: &Sinogram,
    op: &RadonOperator,
    basis: &DctBasis,
    cfg: &SolveConfig,
    theta0: Vec<f64>,
) -> Result<SolveResult> {
    let problem = ThetaProblem::plain(sino, op, basis, cfg.lambda1)?;
    let plain = SolveConfig { lambda2: 0.0, ..cfg.clone() };
    let e0 = objective_value(&CoefVector::new(theta0.clone())?, None, sino, op, basis, None, &plain)?;
    let mut trace = vec![e0];
    if !e0.is_finite() {
        return Err(non_finite(trace));
    }
    let lip = problem.lipschitz_estimate();
    let (theta, iters) = problem.solve(theta0, lip, cfg.inner_budget, cfg.tol);
    let e = theta
        .iter()
        .all(|v| v.is_finite())
        .then(|| CoefVector::new(theta.clone()).and_then(|t| objective_value(&t, None, sino, op, basis, None, &plain)))
        .transpose()?
        .unwrap_or(f64::NAN);
    trace.push(e);
    if !e.is_finite() {
        return Err(non_finite(trace));
    }
    finish(basis, theta, None, trace, iters)
}

/// Alternating minimisation with the eigenspace prior. `lambda2 = 0` runs the
/// plain CS solver unchanged.
pub fn solve_with_prior(
    sino: &Sinogram,
    op: &RadonOperator,
    basis: &DctBasis,
    prior: &EigenPrior,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    check_geometry(sino, op, basis)?;
    if prior.dims() != op.image_size() {
        return invalid(format!(
            "prior is {:?} but projector image is {:?}",
            prior.dims(),
            op.image_size()
        ));
    }
    if cfg.lambda2 == 0.0 {
        return solve_plain_cs(sino, op, basis, cfg);
    }
    let (fbp, mut theta) = fbp_initial_theta(sino, op, basis)?;
    let mut alpha = prior.project_alpha(&fbp)?;
    let e0 = objective_value(&CoefVector::new(theta.clone())?, Some(&alpha), sino, op, basis, Some(prior), cfg)?;
    let mut trace = vec![e0];
    if !e0.is_finite() {
        return Err(non_finite(trace));
    }
    let mut lip = None;
    let mut iterations = 0;
    for _ in 0..cfg.outer_iters {
        let problem = ThetaProblem::with_prior(sino, op, basis, prior, &alpha, cfg.lambda1, cfg.lambda2)?;
        // The system operator does not depend on alpha.
        let l = *lip.get_or_insert_with(|| problem.lipschitz_estimate());
        let (next, it) = problem.solve(theta, l, cfg.inner_budget, cfg.tol);
        iterations += it;
        theta = next;
        let Ok(t) = CoefVector::new(theta.clone()) else {
            trace.push(f64::NAN);
            return Err(non_finite(trace));
        };
        let x = basis.synthesize(&t)?;
        alpha = prior.project_alpha(&x)?;
        let e = objective_value(&t, Some(&alpha), sino, op, basis, Some(prior), cfg)?;
        let prev = *trace.last().unwrap_or(&e);
        trace.push(e);
        if !e.is_finite() {
            return Err(non_finite(trace));
        }
        if cfg.tol > 0.0 && prev - e <= cfg.tol * prev.abs() {
            break;
        }
    }
    finish(basis, theta, Some(alpha), trace, iterations)
}
