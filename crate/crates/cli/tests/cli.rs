use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn activecam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_activecam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A slow two-target group kept off the border, written under `dir`.
fn synth_slow(dir: &Path) {
    let rd = dir.to_str().unwrap();
    let o = activecam(&[
        "--run-dir", rd,
        "--set", "synth.frames=80",
        "--set", "synth.targets=2",
        "--set", "synth.motion=group",
        "--set", "synth.group_spread=10",
        "--set", "synth.speed_min=0.5",
        "--set", "synth.speed_max=1.5",
        "--set", "synth.margin=40",
        "synth",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn report_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("seq_report.kv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
        .to_string()
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let o = activecam(&["--set", "train.epoch=3", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epoch"), "{}", stderr(&o));
}

#[test]
fn bad_value_exits_2() {
    let o = activecam(&["--set", "train.epochs=many", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochs"));
}

#[test]
fn config_file_syntax_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nthis line has no equals sign\n").unwrap();
    let o = activecam(&["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg:2:"), "{}", stderr(&o));
}

#[test]
fn missing_sequence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = activecam(&[
        "--run-dir", dir.path().to_str().unwrap(),
        "run", "--controller", "oracle",
        "--sequence", missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_documents_every_key() {
    let o = activecam(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["seed", "train.epochs", "train.lr", "synth.margin", "filter.k", "eval.start"] {
        assert!(text.contains(&format!("  {key} = ")), "{key} not in --help");
    }
}

#[test]
fn static_window_never_moves_and_oracle_keeps_targets_in_view() {
    let dir = tempfile::tempdir().unwrap();
    synth_slow(dir.path());
    let rd = dir.path().to_str().unwrap();
    let o = activecam(&["--run-dir", rd, "eval-seq", "--controllers", "static,oracle"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let trace = fs::read_to_string(dir.path().join("traces/synthetic_static.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("frame,cx,cy,mx,my,n_visible,centroid_dist"));
    let centers: Vec<(String, String)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].to_string())
        })
        .collect();
    assert_eq!(centers.len(), 80);
    assert!(centers.iter().all(|c| *c == centers[0]));

    assert_eq!(report_value(dir.path(), "synthetic.oracle.monitoring_time"), "1.000000");
}

#[test]
fn run_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synth_slow(dir.path());
    let rd = dir.path().to_str().unwrap();
    let seq = dir.path().join("sequences/synthetic");
    let crops = dir.path().join("crops");
    let o = activecam(&[
        "--run-dir", rd,
        "run", "--controller", "oracle",
        "--sequence", seq.to_str().unwrap(),
        "--dump-crops", crops.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("run_trace.csv")).unwrap().lines().count(), 81);
    assert!(dir.path().join("run_report.kv").exists());
    assert_eq!(fs::read_dir(&crops).unwrap().count(), 80);
}
