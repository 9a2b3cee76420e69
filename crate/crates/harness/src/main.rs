use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tomoprior::phantom::{disk, shepp_logan};
use tomoprior::{build_prior, fbp_reconstruct, FbpConfig, RadonOperator, TemplateSet};
use tomoprior_harness::dataset::write_image_pair;
use tomoprior_harness::{
    io, parse_grid, run_experiment, run_table, simulate, train_dictionary, tune_lambda, write_synthetic_dataset,
    AngleSpec, ExperimentConfig, HarnessError, KsvdOverrides, Lambdas, Method, PatchOverrides, Result, SolverKnobs,
    TableFile, TunedParameter, TuningSweep,
};

#[derive(Parser)]
#[command(name = "tomoprior", version, about = "Sparse-view CT reconstruction with template priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a test phantom or a synthetic template dataset.
    Phantom(PhantomArgs),
    /// Forward-project an image, optionally adding measurement noise.
    Project(ProjectArgs),
    /// Filtered backprojection of a stored sinogram.
    Fbp(FbpArgs),
    /// Simulate, reconstruct and score one experiment.
    Reconstruct(ExperimentArgs),
    /// Train a patch dictionary on template images.
    TrainDict(TrainDictArgs),
    /// Build the eigenspace prior of a template set.
    BuildPrior(BuildPriorArgs),
    /// Sweep one weight on a held-out template.
    Tune(TuneArgs),
    /// Run a batch of experiments from a TOML file into one CSV.
    Table(TableArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    Synthetic,
    SheppLogan,
    Disk,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    kind: PhantomKind,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Template count for the synthetic dataset.
    #[arg(long, default_value_t = 6)]
    templates: usize,
    /// Strength of the feature absent from every template.
    #[arg(long, default_value_t = 0.3)]
    perturbation: f64,
    /// Directory for `synthetic`, raw image path otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "12")]
    angles: AngleSpec,
    #[arg(long, default_value_t = 0.0)]
    noise_fraction: f64,
    /// Required when noise_fraction is positive.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FbpArgs {
    #[arg(long)]
    sinogram: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value = "cosine")]
    fbp_filter: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    #[arg(long)]
    test_image: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, default_value = "12")]
    angles: AngleSpec,
    #[arg(long, default_value_t = 0.02)]
    noise_fraction: f64,
    #[arg(long, default_value_t = Lambdas::default().lambda1)]
    lambda1: f64,
    #[arg(long, default_value_t = Lambdas::default().lambda2)]
    lambda2: f64,
    #[arg(long, default_value_t = Lambdas::default().lambda3)]
    lambda3: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patch_stride: Option<usize>,
    #[arg(long)]
    omp_sparsity: Option<usize>,
    #[command(flatten)]
    ksvd: KsvdArgs,
    #[arg(long, default_value_t = SolverKnobs::default().outer_iters)]
    outer_iters: usize,
    #[arg(long, default_value_t = SolverKnobs::default().inner_budget)]
    inner_budget: usize,
    #[arg(long, default_value_t = SolverKnobs::default().tol)]
    tol: f64,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    prior_file: Option<PathBuf>,
    #[arg(long)]
    dictionary_file: Option<PathBuf>,
    #[arg(long, default_value = "cosine")]
    fbp_filter: String,
}

#[derive(Args)]
struct KsvdArgs {
    #[arg(long)]
    atom_count: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    ksvd_iterations: Option<usize>,
    #[arg(long)]
    training_cap: Option<usize>,
}

impl KsvdArgs {
    fn overrides(&self) -> KsvdOverrides {
        KsvdOverrides {
            atom_count: self.atom_count,
            sparsity: self.sparsity,
            iterations: self.ksvd_iterations,
            training_cap: self.training_cap,
        }
    }
}

impl ExperimentArgs {
    fn config(&self) -> ExperimentConfig {
        ExperimentConfig {
            label: self.label.clone(),
            templates_dir: self.templates_dir.clone(),
            test_image: self.test_image.clone(),
            method: self.method,
            angles: self.angles.clone(),
            noise_fraction: self.noise_fraction,
            lambdas: Lambdas { lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3 },
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            patch: PatchOverrides { size: self.patch_size, stride: self.patch_stride, omp_sparsity: self.omp_sparsity },
            ksvd: self.ksvd.overrides(),
            solver: SolverKnobs { outer_iters: self.outer_iters, inner_budget: self.inner_budget, tol: self.tol },
            components: self.components,
            prior_file: self.prior_file.clone(),
            dictionary_file: self.dictionary_file.clone(),
            fbp_filter: self.fbp_filter.clone(),
        }
    }
}

#[derive(Args)]
struct TrainDictArgs {
    #[arg(long)]
    templates_dir: PathBuf,
    #[arg(long, default_value_t = tomoprior_harness::config::DEFAULT_PATCH)]
    patch_size: usize,
    #[command(flatten)]
    ksvd: KsvdArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildPriorArgs {
    #[arg(long)]
    templates_dir: PathBuf,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_enum, default_value = "lambda2")]
    parameter: TunedParameter,
    /// `start:step:stop` or a comma-separated list.
    #[arg(long, default_value = "0:0.1:2")]
    grid: String,
    #[arg(long, default_value_t = 0)]
    held_out: usize,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    config: PathBuf,
}

fn phantom(a: &PhantomArgs) -> Result<()> {
    match a.kind {
        PhantomKind::Synthetic => {
            let paths = write_synthetic_dataset(&a.out, a.size, a.templates, a.perturbation)?;
            println!("templates {}", paths.templates_dir.display());
            println!("test {}", paths.test_image.display());
        }
        PhantomKind::SheppLogan => write_image_pair(&a.out, &shepp_logan(a.size)?)?,
        PhantomKind::Disk => write_image_pair(&a.out, &disk(a.size, a.size, a.size as f64 / 3.0, 1.0)?)?,
    }
    Ok(())
}

fn project(a: &ProjectArgs) -> Result<()> {
    let x = io::load_image(&a.image)?;
    let seed = match (a.seed, a.noise_fraction > 0.0) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => return Err(HarnessError::Invalid("--seed is required with noise".into())),
    };
    let op = RadonOperator::new(x.width(), x.height(), a.angles.to_angle_set()?)?;
    io::save_sinogram(&a.out, &simulate(&x, &op, a.noise_fraction, seed)?)
}

fn fbp(a: &FbpArgs) -> Result<()> {
    let sino = io::load_sinogram(&a.sinogram)?;
    let cfg = FbpConfig::new(a.width, a.height).with_filter(a.fbp_filter.parse()?);
    write_image_pair(&a.out, &fbp_reconstruct(&sino, &cfg)?)
}

fn reconstruct(a: &ExperimentArgs) -> Result<()> {
    let out = run_experiment(&a.config())?;
    println!(
        "relative_mse {} ssim {} wall_seconds {:.3} image {}",
        out.report.relative_mse,
        out.report.ssim,
        out.wall_seconds,
        out.outputs.png.display()
    );
    Ok(())
}

fn train_dict(a: &TrainDictArgs) -> Result<()> {
    let templates = io::load_templates(&a.templates_dir)?;
    let out = train_dictionary(&templates, a.patch_size, &a.ksvd.overrides(), a.seed)?;
    io::save_dictionary(&a.out, &out.dictionary)?;
    println!("final representation error {}", out.error_trace.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn build_prior_cmd(a: &BuildPriorArgs) -> Result<()> {
    let ts = TemplateSet::new(io::load_templates(&a.templates_dir)?)?;
    let prior = build_prior(&ts, a.components)?;
    io::save_prior(&a.out, &prior)?;
    println!("components {}", prior.component_count());
    Ok(())
}

fn tune(a: &TuneArgs) -> Result<()> {
    let base = a.experiment.config();
    let sweep = TuningSweep { parameter: a.parameter, grid: parse_grid(&a.grid)?, held_out_template_index: a.held_out };
    let out = tune_lambda(&sweep, &base)?;
    let name = format!("{}_tune_{:?}.csv", base.label(), a.parameter).to_lowercase();
    io::write_atomic(&base.output_dir.join(name), out.to_csv().as_bytes())?;
    print!("{}", out.to_csv());
    println!("best {}", out.best);
    Ok(())
}

fn table(a: &TableArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| HarnessError::Io(format!("{}: {e}", a.config.display())))?;
    let file = TableFile::parse(&text)?;
    let t = run_table(&file.experiments()?)?;
    let csv = t.to_csv()?;
    io::write_atomic(&file.output, &csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    if let Some(e) = t.first_failure() {
        eprintln!("error: {e}");
    }
    Ok(t.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Phantom(a) => phantom(a).map(|_| 0),
        Command::Project(a) => project(a).map(|_| 0),
        Command::Fbp(a) => fbp(a).map(|_| 0),
        Command::Reconstruct(a) => reconstruct(a).map(|_| 0),
        Command::TrainDict(a) => train_dict(a).map(|_| 0),
        Command::BuildPrior(a) => build_prior_cmd(a).map(|_| 0),
        Command::Tune(a) => tune(a).map(|_| 0),
        Command::Table(a) => table(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
