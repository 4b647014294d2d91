use std::path::Path;
use std::process::{Command, Output};

fn dynct(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynct"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn phantom_simulate_fbp_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = dynct(&["phantom", "--size", "16", "--frames", "8", "--seed", "2", "--out", "truth.dct"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = dynct(&["simulate", "--object", "truth.dct", "--sigma", "0.01", "--out", "sino.dct"], d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("sigma 0.010000"));
    let o = dynct(
        &["reconstruct", "--sinograms", "sino.dct", "--method", "fbp", "--truth", "truth.dct", "--out", "fbp.dct"],
        d,
    );
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("psnr "));
    let o = dynct(&["evaluate", "--estimate", "fbp.dct", "--reference", "truth.dct", "--frames", "0,3"], d);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["frames_evaluated"], serde_json::json!([0, 3]));
}

#[test]
fn temp_nf_reconstruct_and_embed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(dynct(&["phantom", "--size", "16", "--frames", "8", "--out", "t.dct"], d).status.success());
    assert!(dynct(&["simulate", "--object", "t.dct", "--sigma", "0", "--out", "s.dct"], d).status.success());
    let o = dynct(
        &[
            "reconstruct", "--sinograms", "s.dct", "--method", "temp-nf", "--outer-iters", "2", "--inner-steps", "2",
            "--out", "r.dct", "--history", "h.csv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(d.join("h.csv")).unwrap().lines().count(), 3);
    let o = dynct(&["embed", "--object", "t.dct", "--method", "psm", "--rank", "1,2", "--out", "e.csv"], d);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(d.join("e.csv")).unwrap().lines().count(), 3);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // validation: rsr-nf without a restorer
    std::fs::write(
        d.join("exp.toml"),
        "schema_version = 1\noutput_dir = \"out\"\n[dataset]\nsize = 16\nframes = 8\n",
    )
    .unwrap();
    assert_eq!(dynct(&["run", "exp.toml"], d).status.code(), Some(2));
    assert!(d.join("out").join("error.json").exists());
    // unknown key
    std::fs::write(d.join("bad.toml"), "schema_version = 1\noutput_dir = \"o\"\nlambda = 1\n").unwrap();
    assert_eq!(dynct(&["run", "bad.toml"], d).status.code(), Some(2));
    // unreadable input
    let o = dynct(&["evaluate", "--estimate", "missing.dct", "--reference", "missing.dct"], d);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_runs_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("sweep.toml"),
        "schema_version = 1\noutput_dir = \"sweep\"\nmethod = \"fbp\"\n\
         [dataset]\nsize = 16\nframes = 8\n[noise]\nmode = \"none\"\n",
    )
    .unwrap();
    let o = dynct(&["sweep", "sweep.toml", "--distinct", "2,8"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("sweep").join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
