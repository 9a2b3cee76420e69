use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tomoprior::{AngleSet, Filter, KsvdConfig, PatchCoder, PatchGeometry, SolveConfig};

use crate::error::{invalid, HarnessError, Result};

pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_TRAINING_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fbp,
    Cs,
    CsPca,
    CsDict,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Cs => "cs",
            Method::CsPca => "cs-pca",
            Method::CsDict => "cs-dict",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either a number of evenly spaced angles over `[0, 180)` or explicit
/// angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AngleSpec {
    Count(usize),
    List(Vec<f64>),
}

impl AngleSpec {
    pub fn to_angle_set(&self) -> Result<AngleSet> {
        Ok(match self {
            AngleSpec::Count(n) => AngleSet::uniform(*n)?,
            AngleSpec::List(d) => AngleSet::explicit(d.clone())?,
        })
    }

    pub fn count(&self) -> usize {
        match self {
            AngleSpec::Count(n) => *n,
            AngleSpec::List(d) => d.len(),
        }
    }
}

impl fmt::Display for AngleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AngleSpec::Count(n) => write!(f, "{n}"),
            AngleSpec::List(d) => {
                let parts: Vec<String> = d.iter().map(|a| a.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

impl FromStr for AngleSpec {
    type Err = HarnessError;

    /// `12` for a count, `0,45,90` (or `[0,45,90]`) for explicit degrees.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(n) = s.parse::<usize>() {
            return Ok(AngleSpec::Count(n));
        }
        let inner = s.trim_start_matches('[').trim_end_matches(']');
        inner
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| HarnessError::Invalid(format!("bad angle '{p}'"))))
            .collect::<Result<Vec<_>>>()
            .map(AngleSpec::List)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambdas {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { lambda1: 0.3, lambda2: 1.0, lambda3: 0.05 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchOverrides {
    pub size: Option<usize>,
    pub stride: Option<usize>,
    /// Code patches with OMP at this sparsity instead of the exact solver.
    pub omp_sparsity: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsvdOverrides {
    pub atom_count: Option<usize>,
    pub sparsity: Option<usize>,
    pub iterations: Option<usize>,
    pub training_cap: Option<usize>,
}

impl KsvdOverrides {
    pub fn resolve(&self, patch: usize, seed: u64) -> KsvdConfig {
        let d = KsvdConfig::for_patch(patch, seed);
        KsvdConfig {
            atom_count: self.atom_count.unwrap_or(d.atom_count),
            sparsity: self.sparsity.unwrap_or(d.sparsity),
            iterations: self.iterations.unwrap_or(d.iterations),
            seed,
        }
    }

    pub fn training_cap(&self) -> usize {
        self.training_cap.unwrap_or(DEFAULT_TRAINING_CAP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverKnobs {
    pub outer_iters: usize,
    pub inner_budget: usize,
    pub tol: f64,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self { outer_iters: d.outer_iters, inner_budget: d.inner_budget, tol: d.tol }
    }
}

fn default_angles() -> AngleSpec {
    AngleSpec::Count(12)
}

fn default_noise() -> f64 {
    0.02
}

fn default_filter() -> String {
    Filter::Cosine.name().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of every emitted file; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub test_image: PathBuf,
    pub method: Method,
    #[serde(default = "default_angles")]
    pub angles: AngleSpec,
    #[serde(default = "default_noise")]
    pub noise_fraction: f64,
    #[serde(default)]
    pub lambdas: Lambdas,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub patch: PatchOverrides,
    #[serde(default)]
    pub ksvd: KsvdOverrides,
    #[serde(default)]
    pub solver: SolverKnobs,
    /// Principal components kept; all nonzero ones when absent.
    #[serde(default)]
    pub components: Option<usize>,
    /// Precomputed prior, used instead of the templates for cs-pca.
    #[serde(default)]
    pub prior_file: Option<PathBuf>,
    /// Precomputed dictionary, used instead of training for cs-dict.
    #[serde(default)]
    pub dictionary_file: Option<PathBuf>,
    #[serde(default = "default_filter")]
    pub fbp_filter: String,
}

impl ExperimentConfig {
    pub fn new(test_image: impl Into<PathBuf>, method: Method, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            label: None,
            templates_dir: None,
            test_image: test_image.into(),
            method,
            angles: default_angles(),
            noise_fraction: default_noise(),
            lambdas: Lambdas::default(),
            seed,
            output_dir: output_dir.into(),
            patch: PatchOverrides::default(),
            ksvd: KsvdOverrides::default(),
            solver: SolverKnobs::default(),
            components: None,
            prior_file: None,
            dictionary_file: None,
            fbp_filter: default_filter(),
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.name().to_string())
    }

    pub fn filter(&self) -> Result<Filter> {
        Ok(self.fbp_filter.parse()?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_fraction.is_finite() && self.noise_fraction >= 0.0) {
            return invalid("noise_fraction must be finite and nonnegative");
        }
        let l = &self.lambdas;
        for (name, v) in [("lambda1", l.lambda1), ("lambda2", l.lambda2), ("lambda3", l.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be finite and nonnegative"));
            }
        }
        self.angles.to_angle_set()?;
        self.filter()?;
        self.solve_config().validate()?;
        if let Some(label) = &self.label {
            if label.is_empty() || label.contains(['/', '\\']) {
                return invalid("label must be a nonempty file stem");
            }
        }
        if self.components == Some(0) {
            return invalid("components must be at least 1");
        }
        if self.ksvd.training_cap == Some(0) {
            return invalid("training_cap must be at least 1");
        }
        if self.patch.omp_sparsity == Some(0) {
            return invalid("omp_sparsity must be at least 1");
        }
        match self.method {
            Method::CsPca if self.templates_dir.is_none() && self.prior_file.is_none() => {
                invalid("cs-pca needs templates_dir or prior_file")
            }
            Method::CsDict if self.templates_dir.is_none() && self.dictionary_file.is_none() => {
                invalid("cs-dict needs templates_dir or dictionary_file")
            }
            _ => Ok(()),
        }
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            lambda1: self.lambdas.lambda1,
            lambda2: self.lambdas.lambda2,
            outer_iters: self.solver.outer_iters,
            inner_budget: self.solver.inner_budget,
            tol: self.solver.tol,
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch.size.unwrap_or(DEFAULT_PATCH)
    }

    pub fn patch_geometry(&self, width: usize, height: usize) -> Result<PatchGeometry> {
        let p = self.patch_size();
        Ok(PatchGeometry::new(p, self.patch.stride.unwrap_or((p / 2).max(1)), width, height)?)
    }

    pub fn patch_coder(&self) -> PatchCoder {
        match self.patch.omp_sparsity {
            Some(sparsity) => PatchCoder::Omp { sparsity },
            None => PatchCoder::Exact,
        }
    }

    /// K-SVD settings with defaults filled in; `seed` is the derived
    /// dictionary stream, not the experiment seed.
    pub fn ksvd_config(&self, seed: u64) -> KsvdConfig {
        self.ksvd.resolve(self.patch_size(), seed)
    }

    /// Every knob that can influence an output, as sorted key/value pairs.
    /// Optional overrides are recorded with their resolved values.
    pub fn manifest_entries(&self) -> BTreeMap<String, String> {
        fn path(p: &Option<PathBuf>) -> String {
            p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
        }
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let p = self.patch_size();
        let ksvd = self.ksvd_config(0);
        put("label", self.label());
        put("method", self.method.to_string());
        put("templates_dir", path(&self.templates_dir));
        put("test_image", self.test_image.display().to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("angles", self.angles.to_string());
        put("noise_fraction", self.noise_fraction.to_string());
        put("lambda1", self.lambdas.lambda1.to_string());
        put("lambda2", self.lambdas.lambda2.to_string());
        put("lambda3", self.lambdas.lambda3.to_string());
        put("seed", self.seed.to_string());
        put("patch.size", p.to_string());
        put("patch.stride", self.patch.stride.unwrap_or((p / 2).max(1)).to_string());
        put("patch.coder", match self.patch_coder() {
            PatchCoder::Exact => "exact".into(),
            PatchCoder::Omp { sparsity } => format!("omp:{sparsity}"),
        });
        put("ksvd.atom_count", ksvd.atom_count.to_string());
        put("ksvd.sparsity", ksvd.sparsity.to_string());
        put("ksvd.iterations", ksvd.iterations.to_string());
        put("ksvd.training_cap", self.ksvd.training_cap().to_string());
        put("solver.outer_iters", self.solver.outer_iters.to_string());
        put("solver.inner_budget", self.solver.inner_budget.to_string());
        put("solver.tol", self.solver.tol.to_string());
        put("components", self.components.map_or_else(|| "all".into(), |k| k.to_string()));
        put("prior_file", path(&self.prior_file));
        put("dictionary_file", path(&self.dictionary_file));
        put("fbp_filter", self.fbp_filter.clone());
        m
    }
}

/// Which weight a tuning sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TunedParameter {
    Lambda1,
    Lambda2,
    Lambda3,
}

impl TunedParameter {
    pub fn apply(self, lambdas: &mut Lambdas, value: f64) {
        match self {
            TunedParameter::Lambda1 => lambdas.lambda1 = value,
            TunedParameter::Lambda2 => lambdas.lambda2 = value,
            TunedParameter::Lambda3 => lambdas.lambda3 = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningSweep {
    pub parameter: TunedParameter,
    pub grid: Vec<f64>,
    pub held_out_template_index: usize,
}

impl TuningSweep {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return invalid("tuning grid is empty");
        }
        if self.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("tuning grid values must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Parses `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |p: &str| HarnessError::Invalid(format!("bad grid value '{p}'"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.parse::<f64>().map_err(|_| bad(p))).collect::<Result<_>>()?;
        let (start, step, stop) = (v[0], v[1], v[2]);
        if step.is_nan() || step <= 0.0 || stop < start {
            return invalid("grid range needs step > 0 and stop >= start");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad(p))).collect()
}

/// Batch file for `table`: an output path plus experiment tables. Keys in
/// `defaults` fill in anything an experiment leaves out.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub output: PathBuf,
    #[serde(default)]
    pub defaults: toml::Table,
    #[serde(default)]
    pub experiment: Vec<toml::Table>,
}

impl TableFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Invalid(e.to_string()))
    }

    pub fn experiments(&self) -> Result<Vec<ExperimentConfig>> {
        self.experiment
            .iter()
            .map(|t| {
                let mut merged = self.defaults.clone();
                for (k, v) in t {
                    merged.insert(k.clone(), v.clone());
                }
                merged.try_into::<ExperimentConfig>().map_err(|e| HarnessError::Invalid(e.to_string()))
            })
            .collect()
    }
}
