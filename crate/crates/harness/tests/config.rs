use std::collections::BTreeSet;
use std::path::PathBuf;

use tomoprior_harness::*;

fn full_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new("t.f64", Method::CsDict, 5, "out");
    c.label = Some("run".into());
    c.templates_dir = Some("tpl".into());
    c.patch = PatchOverrides { size: Some(6), stride: Some(2), omp_sparsity: Some(3) };
    c.ksvd = KsvdOverrides { atom_count: Some(50), sparsity: Some(4), iterations: Some(5), training_cap: Some(900) };
    c.components = Some(3);
    c.prior_file = Some("p.epri".into());
    c.dictionary_file = Some("d.pdct".into());
    c
}

type Knob = (&'static str, fn(&mut ExperimentConfig));

/// One perturbation per serialised field, keyed by its dotted path.
const KNOBS: &[Knob] = &[
    ("label", |c| c.label = Some("other".into())),
    ("templates_dir", |c| c.templates_dir = Some("elsewhere".into())),
    ("test_image", |c| c.test_image = "u.f64".into()),
    ("method", |c| c.method = Method::CsPca),
    ("angles", |c| c.angles = AngleSpec::List(vec![0.0, 30.0])),
    ("noise_fraction", |c| c.noise_fraction = 0.021),
    ("lambdas.lambda1", |c| c.lambdas.lambda1 += 1e-9),
    ("lambdas.lambda2", |c| c.lambdas.lambda2 += 1e-9),
    ("lambdas.lambda3", |c| c.lambdas.lambda3 += 1e-9),
    ("seed", |c| c.seed += 1),
    ("output_dir", |c| c.output_dir = "out2".into()),
    ("patch.size", |c| c.patch.size = Some(4)),
    ("patch.stride", |c| c.patch.stride = Some(1)),
    ("patch.omp_sparsity", |c| c.patch.omp_sparsity = None),
    ("ksvd.atom_count", |c| c.ksvd.atom_count = Some(51)),
    ("ksvd.sparsity", |c| c.ksvd.sparsity = Some(5)),
    ("ksvd.iterations", |c| c.ksvd.iterations = Some(6)),
    ("ksvd.training_cap", |c| c.ksvd.training_cap = Some(901)),
    ("solver.outer_iters", |c| c.solver.outer_iters += 1),
    ("solver.inner_budget", |c| c.solver.inner_budget += 1),
    ("solver.tol", |c| c.solver.tol *= 2.0),
    ("components", |c| c.components = None),
    ("prior_file", |c| c.prior_file = None),
    ("dictionary_file", |c| c.dictionary_file = Some("e.pdct".into())),
    ("fbp_filter", |c| c.fbp_filter = "ramp".into()),
];

fn flatten(prefix: &str, t: &toml::Table, out: &mut BTreeSet<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(inner) => flatten(&key, inner, out),
            _ => {
                out.insert(key);
            }
        }
    }
}

#[test]
fn every_knob_changes_the_manifest() {
    let base = full_config();
    let mut fields = BTreeSet::new();
    flatten("", &toml::Table::try_from(&base).unwrap(), &mut fields);
    let audited: BTreeSet<String> = KNOBS.iter().map(|(k, _)| k.to_string()).collect();
    assert_eq!(fields, audited, "every config field needs a perturbation");

    let m0 = base.manifest_entries();
    for (name, perturb) in KNOBS {
        let mut c = base.clone();
        perturb(&mut c);
        assert_ne!(c, base, "{name} perturbation is a no-op");
        assert_ne!(c.manifest_entries(), m0, "manifest misses {name}");
    }
}

#[test]
fn defaults_resolve_in_manifest() {
    let c = ExperimentConfig::new("t.f64", Method::Cs, 1, "o");
    let m = c.manifest_entries();
    assert_eq!(m["patch.size"], "8");
    assert_eq!(m["patch.stride"], "4");
    assert_eq!(m["ksvd.atom_count"], "256");
    assert_eq!(m["ksvd.sparsity"], "8");
    assert_eq!(m["ksvd.iterations"], "30");
    assert_eq!(m["ksvd.training_cap"], "20000");
    assert_eq!(m["components"], "all");
    assert_eq!(m["label"], "cs");
}

#[test]
fn angle_spec_parsing() {
    assert_eq!("12".parse::<AngleSpec>().unwrap(), AngleSpec::Count(12));
    assert_eq!("0, 45,90".parse::<AngleSpec>().unwrap(), AngleSpec::List(vec![0.0, 45.0, 90.0]));
    assert_eq!("[1.5]".parse::<AngleSpec>().unwrap(), AngleSpec::List(vec![1.5]));
    assert!("a,b".parse::<AngleSpec>().is_err());
    assert_eq!(AngleSpec::List(vec![0.0, 30.0]).count(), 2);
}

#[test]
fn grid_parsing() {
    let g = parse_grid("0:0.1:2").unwrap();
    assert_eq!(g.len(), 21);
    assert!((g[20] - 2.0).abs() < 1e-12);
    assert_eq!(parse_grid("0.5, 1").unwrap(), vec![0.5, 1.0]);
    assert!(parse_grid("1:0:2").is_err());
    assert!(parse_grid("x").is_err());
}

#[test]
fn validation_rules() {
    let ok = ExperimentConfig::new("t.f64", Method::Cs, 1, "o");
    assert!(ok.validate().is_ok());
    let check = |f: fn(&mut ExperimentConfig)| {
        let mut c = ok.clone();
        f(&mut c);
        let e = c.validate().unwrap_err();
        assert!(matches!(e, HarnessError::Invalid(_)), "{e}");
        assert_eq!(e.exit_code(), 2);
    };
    check(|c| c.noise_fraction = -0.1);
    check(|c| c.lambdas.lambda1 = f64::NAN);
    check(|c| c.angles = AngleSpec::Count(0));
    check(|c| c.fbp_filter = "bogus".into());
    check(|c| c.label = Some("a/b".into()));
    check(|c| c.method = Method::CsPca);
    check(|c| c.method = Method::CsDict);
    check(|c| c.solver.outer_iters = 0);
    check(|c| c.components = Some(0));
}

#[test]
fn table_file_merges_defaults() {
    let text = r#"
output = "results/table.csv"

[defaults]
test_image = "data/test.f64"
templates_dir = "data/templates"
seed = 3
output_dir = "results"
angles = 12

[[experiment]]
method = "fbp"

[[experiment]]
method = "cs-pca"
label = "pca"
angles = [0.0, 60.0, 120.0]
lambdas = { lambda1 = 0.3, lambda2 = 1.5, lambda3 = 0.0 }
"#;
    let f = TableFile::parse(text).unwrap();
    assert_eq!(f.output, PathBuf::from("results/table.csv"));
    let cfgs = f.experiments().unwrap();
    assert_eq!(cfgs.len(), 2);
    assert_eq!(cfgs[0].method, Method::Fbp);
    assert_eq!(cfgs[0].angles, AngleSpec::Count(12));
    assert_eq!(cfgs[0].seed, 3);
    assert_eq!(cfgs[0].noise_fraction, 0.02);
    assert_eq!(cfgs[1].label(), "pca");
    assert_eq!(cfgs[1].angles.count(), 3);
    assert_eq!(cfgs[1].lambdas.lambda2, 1.5);

    let unknown = "output = \"x.csv\"\n[[experiment]]\nmethod = \"cs\"\nseed = 1\ntest_image = \"t\"\noutput_dir = \"o\"\nlamda1 = 2\n";
    assert!(TableFile::parse(unknown).unwrap().experiments().is_err());
    let no_seed = "output = \"x.csv\"\n[[experiment]]\nmethod = \"cs\"\ntest_image = \"t\"\noutput_dir = \"o\"\n";
    assert!(TableFile::parse(no_seed).unwrap().experiments().is_err());
}
