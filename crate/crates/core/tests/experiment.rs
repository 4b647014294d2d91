use std::path::Path;

use dynct::experiment::{
    load_config, parse_config, run_experiment, ExperimentConfig, Method, NoiseMode, CONFIG_SNAPSHOT, ERROR_FILE,
    METRICS_FILE, OUTPUT_ROOT_ENV,
};
use dynct::nf::NfArch;
use dynct::ErrorKind;

fn small(dir: &Path, method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(dir);
    cfg.method = method;
    cfg.seed = 3;
    cfg.dataset.size = 16;
    cfg.dataset.frames = 8;
    cfg.noise.mode = NoiseMode::Fixed;
    cfg.noise.sigma = 0.02;
    cfg.solver.outer_iters = 3;
    cfg.solver.inner_steps = 2;
    cfg.solver.lr = 5e-3;
    cfg.solver.arch = NfArch {
        frequencies: 3,
        hidden_layers: 2,
        width: 8,
        ..Default::default()
    };
    cfg
}

fn error_manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(ERROR_FILE)).unwrap()).unwrap()
}

#[test]
fn unknown_keys_and_versions_are_rejected() {
    let ok = "schema_version = 1\noutput_dir = \"out\"\n[solver]\nlambda = 0.5\n";
    assert_eq!(parse_config(ok).unwrap().solver.lambda, 0.5);
    let typo = "schema_version = 1\noutput_dir = \"out\"\n[solver]\nlamda = 0.5\n";
    assert_eq!(parse_config(typo).unwrap_err().kind(), ErrorKind::Validation);
    let top = "schema_version = 1\noutput_dir = \"out\"\nmethd = \"fbp\"\n";
    assert!(parse_config(top).is_err());
    let mut cfg = parse_config("schema_version = 2\noutput_dir = \"out\"\n").unwrap();
    assert!(cfg.validate().is_err());
    cfg.schema_version = 1;
    cfg.method = Method::Fbp;
    cfg.noise.mode = NoiseMode::None;
    assert!(cfg.validate().is_ok());
}

#[test]
fn missing_restorer_fails_before_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::RsrNf);
    cfg.restorer.checkpoint = Some(dir.path().join("nope.dct"));
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Validation);
    let m = error_manifest(dir.path());
    assert_eq!(m["stage"], "validate");
    assert_eq!(m["kind"], "validation");
    assert!(!dir.path().join("truth.dct").exists());
}

#[test]
fn failing_stage_leaves_partial_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("object.dct");
    std::fs::write(&bogus, b"not a container").unwrap();
    let out = dir.path().join("run");
    let mut cfg = small(&out, Method::Fbp);
    cfg.dataset.source = dynct::experiment::DatasetSource::Object;
    cfg.dataset.path = Some(bogus);
    assert!(run_experiment(&cfg).is_err());
    assert_eq!(error_manifest(&out)["stage"], "dataset");
    assert!(out.join(CONFIG_SNAPSHOT).exists());
}

#[test]
fn rerun_reproduces_metrics_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&dir.path().join("a"), Method::TempNf);
    let first = run_experiment(&cfg).unwrap();
    let csv1 = std::fs::read(first.dir.join(METRICS_FILE)).unwrap();
    let second = run_experiment(&cfg).unwrap();
    assert_eq!(csv1, std::fs::read(second.dir.join(METRICS_FILE)).unwrap());
    for f in ["reconstruction.dct", "per_frame.csv", "history.csv", "psnr_vs_t.svg", "xt_slice.png"] {
        assert!(first.dir.join(f).exists(), "{f} missing");
    }
    assert!(!first.dir.join(ERROR_FILE).exists());

    // the resolved snapshot is itself a runnable config
    let mut snap = load_config(first.dir.join(CONFIG_SNAPSHOT)).unwrap();
    snap.output_dir = dir.path().join("b");
    let third = run_experiment(&snap).unwrap();
    assert_eq!(csv1, std::fs::read(third.dir.join(METRICS_FILE)).unwrap());
}

#[test]
fn distinct_view_sweep_emits_one_row_each() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::Fbp);
    cfg.schedule.sweep_distinct = vec![2, 4, 8];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 3);
    assert_eq!(out.rows.iter().map(|r| r.distinct_views).collect::<Vec<_>>(), vec![2, 4, 8]);
    let text = std::fs::read_to_string(out.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(out.dir.join("psnr_vs_distinct_views.svg").exists());
    assert!(out.dir.join("distinct-4").join("per_frame.csv").exists());
}

#[test]
fn sweep_rejects_non_divisors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::Fbp);
    cfg.schedule.sweep_distinct = vec![3];
    assert_eq!(run_experiment(&cfg).unwrap_err().kind(), ErrorKind::Validation);
}

#[test]
fn relative_output_dirs_follow_the_root_variable() {
    let root = tempfile::tempdir().unwrap();
    std::env::set_var(OUTPUT_ROOT_ENV, root.path());
    let cfg = small(Path::new("rel"), Method::Fbp);
    let resolved = cfg.resolved_output_dir();
    std::env::remove_var(OUTPUT_ROOT_ENV);
    assert_eq!(resolved, root.path().join("rel"));
    assert_eq!(small(root.path(), Method::Fbp).resolved_output_dir(), root.path());
}
