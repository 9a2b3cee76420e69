use std::path::{Path, PathBuf};
use std::time::Instant;

use tomoprior::{
    build_prior, evaluate, fbp_reconstruct, ksvd_train, solve_plain_cs, solve_with_patch_prior, solve_with_prior,
    training_patches, DctBasis, EigenPrior, FbpConfig, Image, KsvdOutput, MetricReport, PatchDictionary,
    PatchSolveConfig, RadonOperator, Sinogram, TemplateSet,
};

use crate::config::{ExperimentConfig, KsvdOverrides, Method, TuningSweep};
use crate::error::{invalid, HarnessError, Result};
use crate::io;
use crate::noise::{add_measurement_noise, derived_seed};

const DICTIONARY_STREAM: u64 = 1;
const PATCH_SAMPLE_STREAM: u64 = 2;

pub const CSV_HEADER: [&str; 11] = [
    "label",
    "method",
    "angles",
    "noise",
    "lambda1",
    "lambda2",
    "lambda3",
    "relative_mse",
    "ssim",
    "wall_seconds",
    "status",
];

/// Prior knowledge a method reconstructs with.
#[derive(Debug, Clone)]
pub enum PriorModel {
    None,
    Eigen(EigenPrior),
    Dictionary(PatchDictionary),
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Image,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub png: PathBuf,
    pub raw: PathBuf,
    pub metrics: PathBuf,
    pub trace: PathBuf,
    pub manifest: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: &Path, label: &str) -> Self {
        Self {
            png: dir.join(format!("{label}.png")),
            raw: dir.join(format!("{label}.f64")),
            metrics: dir.join(format!("{label}_metrics.csv")),
            trace: dir.join(format!("{label}_trace.csv")),
            manifest: dir.join(format!("{label}_manifest.txt")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub wall_seconds: f64,
    pub reconstruction: Reconstruction,
    pub outputs: OutputPaths,
}

/// K-SVD on stride-1 template patches of side `patch`. Patch sampling and
/// dictionary initialisation draw from separate streams of `seed`.
pub fn train_dictionary(templates: &[Image], patch: usize, ksvd: &KsvdOverrides, seed: u64) -> Result<KsvdOutput> {
    let patches = training_patches(templates, patch, ksvd.training_cap(), derived_seed(seed, PATCH_SAMPLE_STREAM))?;
    let ksvd = ksvd.resolve(patch, derived_seed(seed, DICTIONARY_STREAM));
    if patches.len() < ksvd.atom_count {
        return invalid(format!("{} training patches for {} atoms", patches.len(), ksvd.atom_count));
    }
    Ok(ksvd_train(&patches, &ksvd)?)
}

fn needs_templates(cfg: &ExperimentConfig) -> bool {
    match cfg.method {
        Method::Fbp | Method::Cs => false,
        Method::CsPca => cfg.prior_file.is_none(),
        Method::CsDict => cfg.dictionary_file.is_none(),
    }
}

fn check_dims(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return invalid(format!("{what} is {}x{}, test image is {}x{}", got.0, got.1, want.0, want.1));
    }
    Ok(())
}

/// Builds or loads the prior the configured method needs. `templates` are
/// used unless a precomputed file is configured.
pub fn prepare_prior(cfg: &ExperimentConfig, templates: Option<&[Image]>, dims: (usize, usize)) -> Result<PriorModel> {
    match cfg.method {
        Method::Fbp | Method::Cs => Ok(PriorModel::None),
        Method::CsPca => {
            let prior = match (&cfg.prior_file, templates) {
                (Some(path), _) => io::load_prior(path)?,
                (None, Some(t)) => {
                    if t.len() < 2 {
                        return invalid("cs-pca needs at least two templates");
                    }
                    build_prior(&TemplateSet::new(t.to_vec())?, cfg.components)?
                }
                (None, None) => return invalid("cs-pca needs templates or a prior file"),
            };
            check_dims("prior", prior.dims(), dims)?;
            Ok(PriorModel::Eigen(prior))
        }
        Method::CsDict => {
            let dict = match (&cfg.dictionary_file, templates) {
                (Some(path), _) => io::load_dictionary(path)?,
                (None, Some(t)) => {
                    for x in t {
                        check_dims("template", x.dims(), dims)?;
                    }
                    train_dictionary(t, cfg.patch_size(), &cfg.ksvd, cfg.seed)?.dictionary
                }
                (None, None) => return invalid("cs-dict needs templates or a dictionary file"),
            };
            if dict.patch() != cfg.patch_size() {
                return invalid(format!("dictionary patch {} differs from configured {}", dict.patch(), cfg.patch_size()));
            }
            Ok(PriorModel::Dictionary(dict))
        }
    }
}

/// Runs the configured method on a sinogram.
pub fn reconstruct(
    cfg: &ExperimentConfig,
    model: &PriorModel,
    sino: &Sinogram,
    op: &RadonOperator,
) -> Result<Reconstruction> {
    let (w, h) = op.image_size();
    let basis = DctBasis::new(w, h)?;
    let solve = cfg.solve_config();
    let result = match (cfg.method, model) {
        (Method::Fbp, _) => {
            let image = fbp_reconstruct(sino, &FbpConfig::new(w, h).with_filter(cfg.filter()?))?;
            return Ok(Reconstruction { image, objective_trace: Vec::new() });
        }
        (Method::Cs, _) => solve_plain_cs(sino, op, &basis, &solve)?,
        (Method::CsPca, PriorModel::Eigen(prior)) => solve_with_prior(sino, op, &basis, prior, &solve)?,
        (Method::CsDict, PriorModel::Dictionary(dict)) => {
            let pcfg = PatchSolveConfig { base: solve, lambda3: cfg.lambdas.lambda3, coder: cfg.patch_coder() };
            solve_with_patch_prior(sino, op, &basis, dict, &cfg.patch_geometry(w, h)?, &pcfg)?
        }
        (m, _) => return invalid(format!("no prior prepared for method {m}")),
    };
    Ok(Reconstruction { image: result.image, objective_trace: result.objective_trace })
}

/// Forward projection plus measurement noise seeded by `seed`.
pub fn simulate(truth: &Image, op: &RadonOperator, noise_fraction: f64, seed: u64) -> Result<Sinogram> {
    add_measurement_noise(&op.forward(truth)?, noise_fraction, seed)
}

fn csv_record(cfg: &ExperimentConfig, result: &std::result::Result<(MetricReport, f64), String>) -> Vec<String> {
    let mut row = vec![
        cfg.label(),
        cfg.method.to_string(),
        cfg.angles.count().to_string(),
        cfg.noise_fraction.to_string(),
        cfg.lambdas.lambda1.to_string(),
        cfg.lambdas.lambda2.to_string(),
        cfg.lambdas.lambda3.to_string(),
    ];
    match result {
        Ok((r, secs)) => {
            row.extend([r.relative_mse.to_string(), r.ssim.to_string(), format!("{secs:.6}"), "ok".into()])
        }
        Err(msg) => row.extend([String::new(), String::new(), String::new(), format!("error: {msg}")]),
    }
    row
}

fn to_csv(rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

fn manifest_text(cfg: &ExperimentConfig, derived: &[(&str, String)]) -> String {
    let mut entries = cfg.manifest_entries();
    for (k, v) in derived {
        entries.insert((*k).to_string(), v.clone());
    }
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Loads the inputs, simulates the measurement, reconstructs and writes the
/// image (PNG and raw), a one-row metrics CSV, the objective trace and a
/// manifest of every setting.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let truth = io::load_image(&cfg.test_image)?;
    let templates = if needs_templates(cfg) {
        let dir = cfg.templates_dir.as_ref().expect("validated");
        let t = io::load_templates(dir)?;
        for x in &t {
            check_dims("template", x.dims(), truth.dims())?;
        }
        Some(t)
    } else {
        None
    };
    let (w, h) = truth.dims();
    let op = RadonOperator::new(w, h, cfg.angles.to_angle_set()?)?;
    let clean = op.forward(&truth)?;
    let sino = add_measurement_noise(&clean, cfg.noise_fraction, cfg.seed)?;

    let start = Instant::now();
    let model = prepare_prior(cfg, templates.as_deref(), (w, h))?;
    let recon = reconstruct(cfg, &model, &sino, &op)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let report = evaluate(&recon.image, &truth)?;

    let label = cfg.label();
    let outputs = OutputPaths::new(&cfg.output_dir, &label);
    io::save_png(&outputs.png, &recon.image)?;
    io::save_raw_image(&outputs.raw, &recon.image)?;
    io::write_atomic(&outputs.metrics, &to_csv(&[csv_record(cfg, &Ok((report, wall_seconds)))])?)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, e) in recon.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{e}\n"));
    }
    io::write_atomic(&outputs.trace, trace.as_bytes())?;
    let mean = clean.data().iter().sum::<f64>() / clean.data().len() as f64;
    let derived = [
        ("image.width", w.to_string()),
        ("image.height", h.to_string()),
        ("detector.bins", op.bins().to_string()),
        ("noise_sigma", (cfg.noise_fraction * mean).abs().to_string()),
        ("template_count", templates.as_ref().map_or(0, Vec::len).to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
    ];
    io::write_atomic(&outputs.manifest, manifest_text(cfg, &derived).as_bytes())?;
    Ok(ExperimentOutcome { report, wall_seconds, reconstruction: recon, outputs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningRow {
    pub value: f64,
    pub relative_mse: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub best: f64,
    pub table: Vec<TuningRow>,
}

impl TuningOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,relative_mse,ssim\n");
        for r in &self.table {
            s.push_str(&format!("{},{},{}\n", r.value, r.relative_mse, r.ssim));
        }
        s
    }
}

/// Reconstructs the held-out template at each grid value with a prior built
/// from the remaining templates. The lowest relative MSE wins; ties go to
/// the smaller value.
pub fn tune_lambda(sweep: &TuningSweep, base: &ExperimentConfig) -> Result<TuningOutcome> {
    sweep.validate()?;
    let mut cfg = base.clone();
    cfg.prior_file = None;
    cfg.dictionary_file = None;
    cfg.validate()?;
    let Some(dir) = &cfg.templates_dir else {
        return invalid("tuning needs templates_dir");
    };
    let mut templates = io::load_templates(dir)?;
    let k = sweep.held_out_template_index;
    if k >= templates.len() {
        return invalid(format!("held-out index {k} but only {} templates", templates.len()));
    }
    let truth = templates.remove(k);
    let (w, h) = truth.dims();
    for x in &templates {
        check_dims("template", x.dims(), (w, h))?;
    }
    let op = RadonOperator::new(w, h, cfg.angles.to_angle_set()?)?;
    let sino = simulate(&truth, &op, cfg.noise_fraction, cfg.seed)?;
    let model = prepare_prior(&cfg, Some(&templates), (w, h))?;

    let mut table = Vec::with_capacity(sweep.grid.len());
    for &value in &sweep.grid {
        sweep.parameter.apply(&mut cfg.lambdas, value);
        let recon = reconstruct(&cfg, &model, &sino, &op)?;
        let r = evaluate(&recon.image, &truth)?;
        table.push(TuningRow { value, relative_mse: r.relative_mse, ssim: r.ssim });
    }
    let best = table
        .iter()
        .min_by(|a, b| a.relative_mse.total_cmp(&b.relative_mse).then(a.value.total_cmp(&b.value)))
        .expect("grid is nonempty")
        .value;
    Ok(TuningOutcome { best, table })
}

#[derive(Debug)]
pub struct TableRow {
    pub config: ExperimentConfig,
    pub result: Result<(MetricReport, f64)>,
}

#[derive(Debug)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

impl Table {
    /// Header plus one row per experiment, in input order.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| csv_record(&r.config, &r.result.as_ref().map(|v| *v).map_err(|e| e.to_string())))
            .collect();
        to_csv(&rows)
    }

    pub fn first_failure(&self) -> Option<&HarnessError> {
        self.rows.iter().find_map(|r| r.result.as_ref().err())
    }

    /// 0 when every row succeeded, otherwise the code of the first failure.
    pub fn exit_code(&self) -> u8 {
        self.first_failure().map_or(0, HarnessError::exit_code)
    }
}

/// Runs every experiment in order. A failing experiment becomes an error
/// row and the rest still run.
pub fn run_table(cfgs: &[ExperimentConfig]) -> Result<Table> {
    if cfgs.is_empty() {
        return invalid("table has no experiments");
    }
    let rows = cfgs
        .iter()
        .map(|c| TableRow {
            config: c.clone(),
            result: run_experiment(c).map(|o| (o.report, o.wall_seconds)),
        })
        .collect();
    Ok(Table { rows })
}
