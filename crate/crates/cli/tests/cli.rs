use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cpr(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpr"))
        .args(args)
        .env("CPR_OUT_DIR", out_dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("CPR_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn manifest_line(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap();
    let json = first.strip_prefix("# manifest: ").expect("manifest line");
    serde_json::from_str(json).unwrap()
}

#[test]
fn classify_inside_the_complete_sharing_region() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&cpr(
        &["--preset", "complete_sharing", "classify", "--g", "0.4,0.4"],
        dir.path(),
    ));
    assert_eq!(v["verdict"], "stable");
    assert_eq!(v["manifest"]["subcommand"], "classify");
    assert_eq!(v["manifest"]["config"]["name"], "complete_sharing");
    assert_eq!(v["manifest"]["timestamp_unix"], 1_700_000_000u64);
}

#[test]
fn weak_threshold_at_five_db() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&cpr(
        &[
            "--preset",
            "rayleigh_5db",
            "threshold",
            "--direction",
            "1",
            "--criterion",
            "weak",
        ],
        dir.path(),
    ));
    let t = v["threshold"].as_f64().unwrap();
    assert!((t - 0.756).abs() <= 0.01, "{t}");
    assert_eq!(v["criterion"]["kind"], "weakly_stable");
}

#[test]
fn empty_region_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&cpr(
        &[
            "--preset",
            "complete_sharing",
            "region",
            "--axis",
            "0.5:0.1:0.01",
        ],
        dir.path(),
    ));
    assert_eq!(v["cells"], 0);
    let csv = fs::read_to_string(dir.path().join("region.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[1],
        "G1,G2,verdict,satisfied,P1,P2,Theta1,Theta2,Theta_total"
    );
}

#[test]
fn region_artifacts_carry_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    stdout_json(&cpr(
        &[
            "--preset",
            "reservation",
            "region",
            "--axis",
            "0:0.6:0.1",
            "--criterion",
            "weak",
        ],
        dir.path(),
    ));
    for name in ["region.csv", "region_boundary.csv"] {
        let m = manifest_line(&dir.path().join(name));
        assert_eq!(m["subcommand"], "region");
        assert_eq!(m["params"]["criterion"]["criterion"], "weak");
    }
    let json: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("region.json")).unwrap()).unwrap();
    assert_eq!(json["manifest"]["subcommand"], "region");
    assert_eq!(json["map"]["cells"].as_array().unwrap().len(), 49);
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{
  "user_classes": [{"degree": {"2": 1.0}}],
  "receiver_classes": [{"fraction": 1.0, "model": {"kind": "slotted_aloha"}}],
  "routing": [[0.9]]
}
"#,
    )
    .unwrap();
    let out = cpr(
        &["--config", path.to_str().unwrap(), "classify", "--g", "0.3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("routing[0]") && err.contains("line 4"),
        "{err}"
    );
}

#[test]
fn ambiguous_load_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpr(
        &["--preset", "complete_sharing", "classify", "--g", "0.4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let v = stdout_json(&cpr(
        &[
            "--preset",
            "complete_sharing",
            "classify",
            "--g",
            "0.8",
            "--direction",
            "0.5,0.5",
        ],
        dir.path(),
    ));
    assert_eq!(v["g"], serde_json::json!([0.4, 0.4]));
}

#[test]
fn strict_surfaces_indeterminate_results() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--preset",
        "complete_sharing",
        "--max-iter",
        "3",
        "classify",
        "--g",
        "0.4,0.4",
    ];
    let out = cpr(&args, dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["verdict"], "indeterminate");
    let mut strict = args.to_vec();
    strict.insert(0, "--strict");
    assert_eq!(cpr(&strict, dir.path()).status.code(), Some(3));
}

#[test]
fn identical_runs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sim = [
        "--preset",
        "nonuniform",
        "simulate",
        "--g",
        "0.3,0.3",
        "--t",
        "500",
        "--trials",
        "8",
    ];
    let region = ["--preset", "partitioning", "region", "--axis", "0:0.6:0.05"];
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let mut s = sim.to_vec();
        s.extend(["--workers", workers]);
        stdout_json(&cpr(&s, dir.path()));
        let mut r = region.to_vec();
        r.extend(["--workers", workers]);
        stdout_json(&cpr(&r, dir.path()));
    }
    for name in [
        "simulate.json",
        "simulate.csv",
        "region.csv",
        "region.json",
        "region_boundary.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn de_trace_writes_every_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&cpr(
        &[
            "--preset", "coop_iv", "de-trace", "--g", "0.5,0.5", "--start", "zeros",
        ],
        dir.path(),
    ));
    let csv = fs::read_to_string(dir.path().join("de_trace.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows[0], "iteration,q1,q2,P1,P2");
    assert_eq!(
        rows.len() - 1,
        v["iterations"].as_u64().unwrap() as usize + 1
    );
}

#[test]
fn throughput_at_a_point_and_over_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&cpr(
        &["--preset", "reservation", "throughput", "--g", "0.45,0.4"],
        dir.path(),
    ));
    assert!((v["total"].as_f64().unwrap() - 0.85).abs() < 1e-9);
    let v = stdout_json(&cpr(
        &[
            "--preset",
            "reservation",
            "throughput",
            "--axis",
            "0:0.6:0.1",
        ],
        dir.path(),
    ));
    assert!(v["max_total_throughput"].as_f64().unwrap() > 0.7);
    assert!(dir.path().join("throughput.csv").exists());
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpr(&["presets"], dir.path());
    let names = String::from_utf8(out.stdout).unwrap();
    assert!(names.lines().any(|n| n == "rayleigh_20db"));
    assert_eq!(names.lines().count(), 17);
}
