use std::path::Path;
use std::process::{Command, Output};

fn dfgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfgs")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_scene(dir: &Path, scene: &str) {
    let o = dfgs(&["gen", "--scene", scene, "--width", "32", "--height", "32", "--out", arg(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&dfgs(&["--help"])), 0);
    assert_eq!(code(&dfgs(&["eval", "--help"])), 0);
    assert_eq!(code(&dfgs(&["--version"])), 0);
    assert_eq!(code(&dfgs(&[])), 1);
    assert_eq!(code(&dfgs(&["gen"])), 1);
    assert_eq!(code(&dfgs(&["frobnicate"])), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dfgs(&["eval", "--scene", "S9", "--out", arg(dir.path())])), 1);
    assert_eq!(code(&dfgs(&["eval", "--variants", "bogus", "--out", arg(dir.path())])), 1);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"not_a_field": true}"#).unwrap();
    assert_eq!(code(&dfgs(&["--config", arg(&cfg), "eval", "--out", arg(dir.path())])), 1);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = dfgs(&["infer", "--data", arg(&missing), "--query", "0", "--out", arg(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn gen_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_scene(a.path(), "S4");
    gen_scene(b.path(), "S4");
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.path().join("report.json")).unwrap());
    assert!(a.path().join("images/0000.png").is_file());
    assert!(a.path().join("cameras.json").is_file());
    let c = tempfile::tempdir().unwrap();
    let o = dfgs(&["--seed", "77", "gen", "--scene", "S4", "--width", "32", "--height", "32", "--out", arg(c.path())]);
    assert_eq!(code(&o), 0);
    assert_ne!(ra, std::fs::read(c.path().join("report.json")).unwrap());
}

#[test]
fn recon_mask_infer_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_scene(&data, "S4");
    let out = dir.path().join("recon");
    let o = dfgs(&["recon", "--data", arg(&data), "--refs", "1,2,4", "--views", "3", "--out", arg(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").is_file());

    let out = dir.path().join("mask");
    let o =
        dfgs(&["--dump-trace", "mask", "--data", arg(&data), "--query", "6", "--refs", "4,5,7,8", "--out", arg(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trace").is_dir());
    assert!(out.join("query_render.png").is_file());

    let out = dir.path().join("infer");
    let o = dfgs(&["infer", "--data", arg(&data), "--query", "6", "--out", arg(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("render.png").is_file());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("stage2"));

    let o = dfgs(&["infer", "--data", arg(&data), "--query", "99", "--out", arg(&out)]);
    assert_ne!(code(&o), 0);
}

#[test]
fn eval_reports_are_bitwise_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |d: &Path, extra: &[&str]| {
        let mut args = vec!["eval", "--scene", "S2", "--res", "40", "--variants", "baseline,full", "--out", arg(d)];
        args.extend_from_slice(extra);
        let o = dfgs(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(a.path(), &[]);
    run(b.path(), &[]);
    for f in ["report.json", "report.csv", "config.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    run(c.path(), &["--stats"]);
    let report = std::fs::read_to_string(c.path().join("report.json")).unwrap();
    assert!(report.contains("timings_ms"));
}

#[test]
fn bench_writes_ladder_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        dfgs(&["bench", "--scenes", "S1,S4", "--res", "32", "--variants", "baseline,full", "--out", arg(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bench: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("bench.json")).unwrap()).unwrap();
    assert!(bench.is_object());
    assert!(dir.path().join("S1").join("report.json").is_file());
    assert!(dir.path().join("S4").join("report.json").is_file());
}
