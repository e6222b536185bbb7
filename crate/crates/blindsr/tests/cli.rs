//! End-to-end tests of the `blindsr` binary: exit codes, file artifacts,
//! determinism, and error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn blindsr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindsr"))
        .args(args)
        .current_dir(dir)
        .env("BLINDSR_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn synth_args(out: &str) -> Vec<&str> {
    vec![
        "synth", "--n", "48", "--K", "2", "--s", "2", "--r", "2", "--mode", "separated",
        "--seed", "7", "--out", out,
    ]
}

#[test]
fn synth_writes_five_deterministic_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blindsr(&synth_args("a"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = ["gt.json", "basis_0.cmx", "basis_1.cmx", "measurement.csv", "manifest.json"];
    for f in files {
        assert!(tmp.path().join("a").join(f).exists(), "{f} missing");
    }
    assert_eq!(std::fs::read_dir(tmp.path().join("a")).unwrap().count(), 5);

    // identical seed, identical bytes
    let out = blindsr(&synth_args("b"), tmp.path());
    assert!(out.status.success());
    for f in files {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
}

#[test]
fn missing_required_flag_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blindsr(&["synth", "--K", "2", "--s", "2", "--r", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(msg.contains("--n") || msg.contains("usage"), "stderr: {msg}");
}

#[test]
fn snr_flag_scales_noise_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(blindsr(&synth_args("clean"), tmp.path()).status.success());
    let mut noisy_args = synth_args("noisy");
    noisy_args.extend(["--snr", "20"]);
    assert!(blindsr(&noisy_args, tmp.path()).status.success());

    let read = |dir: &str| -> Vec<(f64, f64)> {
        let text = std::fs::read_to_string(tmp.path().join(dir).join("measurement.csv")).unwrap();
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect()
    };
    let clean = read("clean");
    let noisy = read("noisy");
    let norm = |v: &[(f64, f64)]| v.iter().map(|(re, im)| re * re + im * im).sum::<f64>().sqrt();
    let diff: Vec<(f64, f64)> = clean
        .iter()
        .zip(&noisy)
        .map(|(c, n)| (n.0 - c.0, n.1 - c.1))
        .collect();
    // sigma = ||y|| / 10^(20/20) = 0.1 ||y||, and the noise is unit-normalized
    let ratio = norm(&diff) / norm(&clean);
    assert!((ratio - 0.1).abs() < 1e-12, "noise ratio {ratio}");
}

#[test]
fn solve_then_extract_recovers_instance() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(blindsr(&synth_args("inst"), tmp.path()).status.success());
    let out = blindsr(&["solve", "--dir", "inst"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "xhat_0.cmx", "xhat_1.cmx", "summary.json"] {
        assert!(tmp.path().join("inst").join(f).exists(), "{f} missing");
    }
    let trace = std::fs::read_to_string(tmp.path().join("inst/trace.csv")).unwrap();
    assert!(trace.starts_with("iter,rel_err,objective,wall_ms"));
    assert!(trace.lines().count() <= 151 + 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("inst/summary.json")).unwrap())
            .unwrap();
    assert!(summary["final_rel_err"].as_f64().unwrap() <= 1e-4);

    let out = blindsr(&["extract", "--dir", "inst"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let score: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("inst/score.json")).unwrap())
            .unwrap();
    let rows = score["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert!(row["location_err"].as_f64().unwrap() <= 1e-3);
    }
    assert!(tmp.path().join("inst/estimate/gt.json").exists());
}

#[test]
fn corrupt_cmx_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(blindsr(&synth_args("inst"), tmp.path()).status.success());
    let path = tmp.path().join("inst/basis_0.cmx");
    let mut text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let broken_line = 3;
    let mut edited: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    edited[broken_line - 1] = "not a number".into();
    text = edited.join("\n");
    text.push('\n');
    std::fs::write(&path, text).unwrap();

    let out = blindsr(&["solve", "--dir", "inst"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("basis_0.cmx"), "stderr: {msg}");
    assert!(msg.contains(&broken_line.to_string()), "stderr: {msg}");
}

#[test]
fn vanilla_mode_dispatches() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(blindsr(&synth_args("inst"), tmp.path()).status.success());
    let out = blindsr(
        &["solve", "--dir", "inst", "--mode", "vanilla", "--iters", "40", "--tol", "1e-2"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("inst/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["mode"], "vanilla");
}

#[test]
fn bench_noise_emits_requested_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blindsr(
        &[
            "bench", "noise", "--out", "out", "--snr", "0:10:60", "--trials", "2",
            "--n", "32", "--K", "1", "--s", "1", "--r", "1",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(tmp.path().join("out/noise/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 8); // header + 7 SNR rows
    assert!(tmp.path().join("out/noise/plot.svg").exists());
    assert!(tmp.path().join("out/noise/manifest.json").exists());
}

#[test]
fn bench_unknown_family_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blindsr(&["bench", "nonsense"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_cond_emits_paired_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blindsr(
        &[
            "bench", "cond", "--out", "out", "--kappas", "1,5", "--n", "32", "--K", "1",
            "--s", "1", "--r", "1",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "trace_scaled_kappa1.csv",
        "trace_vanilla_kappa1.csv",
        "trace_scaled_kappa5.csv",
        "trace_vanilla_kappa5.csv",
        "grid.csv",
        "plot.svg",
        "manifest.json",
    ] {
        assert!(tmp.path().join("out/cond").join(f).exists(), "{f} missing");
    }
}
