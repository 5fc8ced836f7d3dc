//! End-to-end CLI runs through the compiled binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mxfar")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin())
        .args(args)
        .env("MXFAR_LOG", "quiet")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mxfar_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn simulate_fit_test_fpdc_pipeline() {
    let dir = tmp_dir("pipeline");
    let sim = dir.join("sim");
    let (code, _, err) = run(&[
        "simulate",
        "--kind",
        "expar",
        "--seed",
        "7",
        "--output-dir",
        sim.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "simulate failed: {err}");
    let panel = sim.join("panel.csv");
    assert!(
        panel.exists() && sim.join("truth.json").exists() && sim.join("manifest.json").exists()
    );

    let fit = dir.join("fit");
    let (code, _, err) = run(&[
        "fit",
        "--input",
        panel.to_str().unwrap(),
        "--p",
        "1",
        "--ref-channel",
        "2",
        "--ref-lag",
        "2",
        "--bandwidth",
        "0.45",
        "--output-dir",
        fit.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "fit failed: {err}");
    let coeff = std::fs::read_to_string(fit.join("coefficients.csv")).unwrap();
    assert!(coeff.starts_with("channel,group,target_lag_channel,lag,u0,alpha,beta"));
    // 50 grid points x 2 channels x 2 regressors + header.
    assert_eq!(coeff.lines().count(), 1 + 50 * 2 * 2);

    let tst = dir.join("tst");
    let (code, stdout, err) = run(&[
        "test",
        "--input",
        panel.to_str().unwrap(),
        "--p",
        "1",
        "--ref-channel",
        "2",
        "--ref-lag",
        "2",
        "--bandwidth",
        "0.45",
        "--boot-reps",
        "20",
        "--seed",
        "3",
        "--output-dir",
        tst.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "test failed: {err}");
    assert!(stdout.contains("L = ") && stdout.contains("p_value = "));
    assert!(tst.join("lboot.csv").exists());

    let fp = dir.join("fp");
    let (code, _, err) = run(&[
        "fpdc",
        "--input",
        panel.to_str().unwrap(),
        "--p",
        "1",
        "--ref-channel",
        "2",
        "--ref-lag",
        "2",
        "--bandwidth",
        "0.45",
        "--boot-reps",
        "12",
        "--omega-points",
        "8",
        "--seed",
        "3",
        "--output-dir",
        fp.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "fpdc failed: {err}");
    let fpdc = std::fs::read_to_string(fp.join("fpdc.csv")).unwrap();
    assert!(
        fpdc.starts_with("group,target,source,omega,u0,modulus,ci_lo,ci_hi,threshold,significant")
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tmp_dir("determinism");
    let sim = dir.join("sim");
    run(&[
        "simulate",
        "--kind",
        "expar",
        "--seed",
        "11",
        "--output-dir",
        sim.to_str().unwrap(),
    ]);
    let panel = sim.join("panel.csv");

    let args_for = |out: &Path, threads: &str| -> Vec<String> {
        [
            "bands",
            "--input",
            panel.to_str().unwrap(),
            "--p",
            "1",
            "--ref-channel",
            "2",
            "--ref-lag",
            "2",
            "--bandwidth",
            "0.5",
            "--boot-reps",
            "16",
            "--seed",
            "5",
            "--threads",
            threads,
            "--output-dir",
            out.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let (b1, b2, b4) = (dir.join("b1"), dir.join("b2"), dir.join("b4"));
    for (out, threads) in [(&b1, "1"), (&b2, "1"), (&b4, "4")] {
        let args: Vec<String> = args_for(out, threads);
        let strs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, _, err) = run(&strs);
        assert_eq!(code, 0, "{err}");
    }
    assert_eq!(read(&b1.join("bands.csv")), read(&b2.join("bands.csv")));
    assert_eq!(read(&b1.join("bands.csv")), read(&b4.join("bands.csv")));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn malformed_panel_reports_every_violation() {
    let dir = tmp_dir("validation");
    let bad = dir.join("bad.csv");
    std::fs::write(
        &bad,
        "subject_id,group_id,time_index,ch_1\n\
         a,0,1,1.0\n\
         a,0,3,2.0\n\
         b,0,1,NaN\n",
    )
    .unwrap();
    let out = dir.join("out");
    let (code, _, err) = run(&[
        "fit",
        "--input",
        bad.to_str().unwrap(),
        "--p",
        "1",
        "--ref-channel",
        "1",
        "--ref-lag",
        "1",
        "--bandwidth",
        "0.5",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("error[panel]"), "stderr: {err}");
    assert!(
        err.contains("line 3") && err.contains("not contiguous"),
        "stderr: {err}"
    );
    assert!(err.contains("ch_1"), "stderr: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn select_writes_report_and_best_line() {
    let dir = tmp_dir("select");
    let sim = dir.join("sim");
    run(&[
        "simulate",
        "--kind",
        "expar",
        "--n-subjects",
        "5",
        "--t",
        "300",
        "--seed",
        "2",
        "--output-dir",
        sim.to_str().unwrap(),
    ]);
    let out = dir.join("sel");
    let (code, stdout, err) = run(&[
        "select",
        "--input",
        sim.join("panel.csv").to_str().unwrap(),
        "--bandwidth",
        "0.5,0.8",
        "--p",
        "1",
        "--ref-channel",
        "2",
        "--ref-lag",
        "2",
        "--grid-size",
        "12",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.starts_with("best:"), "stdout: {stdout}");
    let csv = std::fs::read_to_string(out.join("ape.csv")).unwrap();
    assert!(csv.starts_with("h,p,ref_channel,ref_lag,ape_q1,ape_q2,ape_q3,ape_q4,ape,best_flag"));
    assert_eq!(csv.lines().count(), 3);
    // Exactly one best flag.
    assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 1);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_flags_exit_with_usage_error() {
    let (code, _, err) = run(&["fit", "--nonsense"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
}

#[test]
fn manifest_digests_verify_inputs() {
    let dir = tmp_dir("manifest");
    let sim = dir.join("sim");
    run(&[
        "simulate",
        "--kind",
        "var",
        "--t",
        "200",
        "--seed",
        "4",
        "--output-dir",
        sim.to_str().unwrap(),
    ]);
    let panel = sim.join("panel.csv");
    let fit = dir.join("fit");
    run(&[
        "fit",
        "--input",
        panel.to_str().unwrap(),
        "--p",
        "1",
        "--ref-channel",
        "1",
        "--ref-lag",
        "1",
        "--bandwidth",
        "1.0",
        "--grid-size",
        "10",
        "--output-dir",
        fit.to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&fit.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "fit");
    let digest = manifest["inputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    // Recompute the digest independently.
    use sha2::Digest;
    let mut hasher = sha2::Sha256::new();
    hasher.update(read(&panel));
    let expect: Vec<String> = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(digest, expect.concat());
    assert!(manifest["outputs"].as_array().unwrap().len() >= 3);
    let _ = std::fs::remove_dir_all(&dir);
}
