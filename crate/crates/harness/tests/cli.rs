use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;
use tomoprior::Image;
use tomoprior_harness::io::{load_image, load_sinogram, save_raw_image};

fn tomoprior(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomoprior")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prior_pipeline_end_to_end() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let o = tomoprior(&["phantom", "--size", "32", "--templates", "4", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let prior = dir.path().join("prior.epri");
    let o = tomoprior(&["build-prior", "--templates-dir", s(&data.join("templates")), "--out", s(&prior)]);
    assert_eq!(code(&o), 0);
    let out = dir.path().join("out");
    let o = tomoprior(&[
        "reconstruct", "--test-image", s(&data.join("test.f64")), "--method", "cs-pca", "--prior-file", s(&prior),
        "--angles", "8", "--seed", "3", "--inner-budget", "200", "--outer-iters", "3", "--output-dir", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("relative_mse "));
    for f in ["cs-pca.png", "cs-pca.f64", "cs-pca_metrics.csv", "cs-pca_trace.csv", "cs-pca_manifest.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn project_then_fbp() {
    let dir = tempdir().unwrap();
    let img = dir.path().join("sl.f64");
    assert_eq!(code(&tomoprior(&["phantom", "--kind", "shepp-logan", "--size", "32", "--out", s(&img)])), 0);
    let sino = dir.path().join("sino.f64");
    assert_eq!(code(&tomoprior(&["project", "--image", s(&img), "--angles", "0,45,90", "--out", s(&sino)])), 0);
    assert_eq!(load_sinogram(&sino).unwrap().angles().degrees(), &[0.0, 45.0, 90.0]);
    // Noise without a seed is refused.
    let o = tomoprior(&["project", "--image", s(&img), "--noise-fraction", "0.02", "--out", s(&sino)]);
    assert_eq!(code(&o), 2);
    let rec = dir.path().join("rec.f64");
    let o = tomoprior(&["fbp", "--sinogram", s(&sino), "--width", "32", "--height", "32", "--out", s(&rec)]);
    assert_eq!(code(&o), 0);
    assert_eq!(load_image(&rec).unwrap().dims(), (32, 32));
}

#[test]
fn train_dict_and_tune() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&tomoprior(&["phantom", "--size", "16", "--templates", "3", "--out", s(&data)])), 0);
    let dict = dir.path().join("d.pdct");
    let o = tomoprior(&[
        "train-dict", "--templates-dir", s(&data.join("templates")), "--patch-size", "4", "--atom-count", "20",
        "--sparsity", "2", "--ksvd-iterations", "2", "--seed", "5", "--out", s(&dict),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(&fs::read(&dict).unwrap()[..4], b"PDCT");

    let out = dir.path().join("tune");
    let o = tomoprior(&[
        "tune", "--templates-dir", s(&data.join("templates")), "--test-image", s(&data.join("test.f64")),
        "--method", "cs-pca", "--grid", "0,1", "--held-out", "1", "--seed", "2", "--inner-budget", "100",
        "--output-dir", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("best "));
    assert!(out.join("cs-pca_tune_lambda2.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("none.f64");
    let base = ["reconstruct", "--method", "cs", "--output-dir", s(dir.path())];

    // Usage error: no seed.
    let mut a = base.to_vec();
    a.extend(["--test-image", s(&missing)]);
    assert_eq!(code(&tomoprior(&a)), 2);

    let mut a = base.to_vec();
    a.extend(["--test-image", s(&missing), "--seed", "1"]);
    assert_eq!(code(&tomoprior(&a)), 3);

    let mut a = base.to_vec();
    a.extend(["--test-image", s(&missing), "--seed", "1", "--noise-fraction", "-1"]);
    assert_eq!(code(&tomoprior(&a)), 2);

    // Values this large overflow the squared data term.
    let huge = dir.path().join("huge.f64");
    save_raw_image(&huge, &Image::new(8, 8, vec![1e200; 64]).unwrap()).unwrap();
    let mut a = base.to_vec();
    a.extend(["--test-image", s(&huge), "--seed", "1", "--noise-fraction", "0"]);
    let o = tomoprior(&a);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn table_writes_csv_and_reports_failures() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&tomoprior(&["phantom", "--size", "16", "--templates", "3", "--out", s(&data)])), 0);
    let csv = dir.path().join("table.csv");
    let toml = format!(
        r#"output = "{}"
[defaults]
test_image = "{}"
templates_dir = "{}"
output_dir = "{}"
seed = 4
solver = {{ outer_iters = 2, inner_budget = 100, tol = 1e-6 }}

[[experiment]]
method = "fbp"

[[experiment]]
method = "cs-pca"

[[experiment]]
method = "cs"
label = "missing"
test_image = "{}"
"#,
        s(&csv),
        s(&data.join("test.f64")),
        s(&data.join("templates")),
        s(&dir.path().join("out")),
        s(&dir.path().join("nothing.f64")),
    );
    let cfg = dir.path().join("table.toml");
    fs::write(&cfg, toml).unwrap();
    let o = tomoprior(&["table", "--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("fbp,fbp,12,"));
    assert!(lines[2].starts_with("cs-pca,cs-pca,12,"));
    assert!(lines[3].starts_with("missing,cs,") && lines[3].contains("error: i/o error"));
}
