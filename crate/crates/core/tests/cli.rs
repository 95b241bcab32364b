use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn p4d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p4d")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key)?.trim_start().strip_prefix('=').map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("{key} missing from\n{stdout}"))
}

fn synth(dir: &Path, objects: &str, scans: &str, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--objects", objects, "--scans", scans, "--seed", "3", "--out", path(&data)];
    args.extend_from_slice(extra);
    ok(&p4d(&args));
    data
}

#[test]
fn gt_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "3", "6", &[]);
    let out = ok(&p4d(&["evaluate", "--gt", path(&data), "--pred", path(&data), "--sequences", "00"]));
    for key in ["LSTQ", "S_cls", "S_assoc", "PQ", "MOTSA"] {
        assert_eq!(value(&out, key), 1.0, "{key}");
    }
}

#[test]
fn split_corruption_halves_the_tube() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("corrupt.toml");
    fs::write(&spec, "[[corruption]]\nkind = \"split_tube\"\nid = 1\nat_scan = 5\n").unwrap();
    let data = synth(dir.path(), "1", "10", &["--corruption", path(&spec)]);
    assert!(data.join("00/predictions/000009.label").is_file());
    let report = dir.path().join("report.txt");
    let out = ok(&p4d(&["evaluate", "--gt", path(&data), "--pred", path(&data), "--report", path(&report)]));
    assert_eq!(value(&out, "S_assoc"), 0.5);
    assert_eq!(value(&out, "S_cls"), 1.0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.txt.json")).unwrap()).unwrap();
    assert_eq!(json["s_assoc"], 0.5);
    assert_eq!(fs::read_to_string(&report).unwrap(), out.lines().take_while(|l| !l.starts_with("report:")).map(|l| format!("{l}\n")).collect::<String>());
}

#[test]
fn combine_prints_lstq() {
    let out = ok(&p4d(&["evaluate", "--combine", "0.6511", "0.6046"]));
    assert_eq!(out.trim(), "LSTQ = 0.6274");
}

#[test]
fn run_then_evaluate_on_oracle_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "3", "8", &[]);
    let preds = dir.path().join("preds");
    let args = [
        "run", "--data", path(&data), "--out", path(&preds), "--sequences", "00", "--feature-mode", "emb", "--seed", "5",
    ];
    ok(&p4d(&args));
    let first: Vec<Vec<u8>> = (0..8)
        .map(|t| fs::read(preds.join(format!("00/predictions/{t:06}.label"))).unwrap())
        .collect();
    ok(&p4d(&args));
    for (t, bytes) in first.iter().enumerate() {
        assert_eq!(&fs::read(preds.join(format!("00/predictions/{t:06}.label"))).unwrap(), bytes);
    }
    let out = ok(&p4d(&["evaluate", "--gt", path(&data), "--pred", path(&preds), "--sequences", "00"]));
    assert!(value(&out, "S_assoc") >= 0.95);
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "2", "4", &[]);
    let preds = dir.path().join("preds");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 1\n[volume]\nstrategy = \"decay\"\ntau = 3\n[cluster]\nfeature_mode = \"emb\"\n[io]\ndata = {:?}\nout = {:?}\nsequences = [\"00\"]\n",
            path(&data),
            path(&preds)
        ),
    )
    .unwrap();
    ok(&p4d(&["run", "--config", path(&cfg)]));
    assert!(preds.join("00/predictions/000003.label").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = p4d(&["evaluate", "--gt", path(&missing), "--pred", path(&missing), "--sequences", "00"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let data = synth(dir.path(), "1", "3", &[]);
    let preds = dir.path().join("p");
    let out = p4d(&["run", "--data", path(&data), "--out", path(&preds), "--sequences", "00", "--tau", "0"]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(p4d(&["evaluate", "--combine", "1.5", "0.5"]).status.code(), Some(1));
    assert_eq!(p4d(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(p4d(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradient_check_passes() {
    let out = ok(&p4d(&["check-gradients", "--trials", "5", "--seed", "2"]));
    assert!(out.lines().skip(1).all(|l| l.ends_with("pass")), "{out}");
}

#[test]
fn inspect_reports_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "1", "2", &[]);
    let out = ok(&p4d(&["inspect", path(&data.join("00/velodyne/000000.bin")), path(&data.join("00/labels/000000.label"))]));
    assert!(out.lines().count() >= 2);
}
