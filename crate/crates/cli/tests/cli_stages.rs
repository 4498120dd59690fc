//! End-to-end checks of the stage verbs through the real binary: artifacts,
//! resume paths and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spinefuse_core::mesh::{icosphere, save_obj};
use spinefuse_core::synth::GroundTruth;

fn spinefuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spinefuse"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Generates a synthetic case into `dir` and returns its ground truth.
fn synth_case(dir: &Path, extra: &[&str]) -> GroundTruth {
    let mut cmd = spinefuse();
    cmd.arg("synth").arg("--out").arg(dir).args(extra);
    run_ok(&mut cmd);
    GroundTruth::load(&dir.join("truth.json")).expect("truth parses")
}

#[test]
fn synth_writes_a_complete_case() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("case");
    let truth = synth_case(&dir, &["--theta", "25.6", "--seed", "9"]);

    for name in [
        "model/manifest.json",
        "scan/manifest.json",
        "landmarks.json",
        "model_landmarks.json",
        "handles.json",
        "truth.json",
    ] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    // no perturbation flags: the scanned posture is the generated one
    assert!((truth.theta_gt_deg - 25.6).abs() < 1e-9);
    assert_eq!(truth.seed, 9);
}

#[test]
fn stagewise_chain_reproduces_the_pipeline_verb() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    synth_case(
        &case,
        &[
            "--pitch", "2.4", "--offset", "10,0,0", "--noise", "0.5", "--rot", "40",
            "--scale", "1.05", "--translate", "30,20,10", "--seed", "7",
        ],
    );

    // one-shot arm
    let ours = tmp.path().join("ours");
    run_ok(
        spinefuse()
            .arg("pipeline")
            .args(["--method", "ours", "--subset", "full"])
            .arg("--model")
            .arg(case.join("model"))
            .arg("--landmarks")
            .arg(case.join("landmarks.json"))
            .arg("--handles")
            .arg(case.join("handles.json"))
            .arg("--truth")
            .arg(case.join("truth.json"))
            .arg("--out")
            .arg(&ours),
    );

    // the same arm as separate stages, resumed from files alone
    let coarse = tmp.path().join("coarse");
    run_ok(
        spinefuse()
            .arg("coarse")
            .arg("--source")
            .arg(case.join("model_landmarks.json"))
            .arg("--target")
            .arg(case.join("landmarks.json"))
            .arg("--out")
            .arg(&coarse),
    );
    let fine = tmp.path().join("fine");
    run_ok(
        spinefuse()
            .arg("arap")
            .arg("--model")
            .arg(case.join("model"))
            .arg("--transform")
            .arg(coarse.join("transform.json"))
            .arg("--handles")
            .arg(case.join("handles.json"))
            .args(["--iters", "10"])
            .arg("--out")
            .arg(&fine),
    );
    let cobb = tmp.path().join("cobb");
    run_ok(
        spinefuse()
            .arg("cobb")
            .arg("--model")
            .arg(fine.join("fused"))
            .arg("--out")
            .arg(&cobb),
    );

    let a = fs::read(ours.join("cobb.json")).unwrap();
    let b = fs::read(cobb.join("cobb.json")).unwrap();
    assert_eq!(a, b, "stage-wise measurement drifted from the one-shot run");

    // the pipeline artifacts are all present
    for name in [
        "transform.json",
        "registration_report.json",
        "aligned/manifest.json",
        "fused/manifest.json",
        "energy_trace.csv",
        "cobb.json",
        "pipeline_report.json",
    ] {
        assert!(ours.join(name).exists(), "{name} missing");
    }
    let trace = fs::read_to_string(ours.join("energy_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,energy_mm2\n"));
    assert_eq!(trace.lines().count(), 1 + 10 + 1, "header + initial + sweeps");
}

#[test]
fn noiseless_ours_lands_within_half_a_degree() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    synth_case(
        &case,
        &[
            "--pitch", "2.4", "--offset", "10,0,0", "--rot", "30", "--scale", "0.95",
            "--translate", "-20,10,40", "--seed", "21",
        ],
    );
    let out = tmp.path().join("run");
    let stdout = run_ok(
        spinefuse()
            .arg("pipeline")
            .args(["--method", "ours"])
            .arg("--model")
            .arg(case.join("model"))
            .arg("--landmarks")
            .arg(case.join("landmarks.json"))
            .arg("--handles")
            .arg(case.join("handles.json"))
            .arg("--truth")
            .arg(case.join("truth.json"))
            .arg("--out")
            .arg(&out),
    )
    .stdout;
    let text = String::from_utf8(stdout).unwrap();
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("abs_error_deg = "))
        .expect("error line printed")
        .parse()
        .unwrap();
    assert!(err < 0.5, "noiseless end-to-end error {err}");
}

#[test]
fn pelvis_offset_hurts_feature_only_more_than_ours() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    synth_case(
        &case,
        &[
            "--pitch", "2.4", "--offset", "10,0,0", "--rot", "25", "--scale", "1.02",
            "--translate", "15,-10,5", "--seed", "4",
        ],
    );

    let mut errors = Vec::new();
    for method in ["ours", "feature-only"] {
        let out = tmp.path().join(method);
        run_ok(
            spinefuse()
                .arg("pipeline")
                .args(["--method", method])
                .arg("--model")
                .arg(case.join("model"))
                .arg("--landmarks")
                .arg(case.join("landmarks.json"))
                .arg("--handles")
                .arg(case.join("handles.json"))
                .arg("--truth")
                .arg(case.join("truth.json"))
                .arg("--out")
                .arg(&out),
        );
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("pipeline_report.json")).unwrap())
                .unwrap();
        errors.push(report["abs_error_deg"].as_f64().unwrap());
    }
    assert!(
        errors[0] < errors[1],
        "ours {} should beat feature-only {}",
        errors[0],
        errors[1]
    );
}

#[test]
fn feature_only_is_exact_on_an_unposed_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    synth_case(
        &case,
        &["--rot", "35", "--scale", "1.1", "--translate", "12,34,-8", "--seed", "2"],
    );
    let out = tmp.path().join("run");
    run_ok(
        spinefuse()
            .arg("pipeline")
            .args(["--method", "feature-only"])
            .arg("--model")
            .arg(case.join("model"))
            .arg("--landmarks")
            .arg(case.join("landmarks.json"))
            .arg("--truth")
            .arg(case.join("truth.json"))
            .arg("--out")
            .arg(&out),
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("pipeline_report.json")).unwrap())
            .unwrap();
    // a similarity map carries the measurement frame with it, so a pure
    // registration arm reproduces the model's own angle to fp accuracy
    assert!(report["abs_error_deg"].as_f64().unwrap() < 1e-9);
}

#[test]
fn skinfit_verb_writes_mesh_trace_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let template = tmp.path().join("template.obj");
    let wrap = tmp.path().join("wrap.obj");
    save_obj(&icosphere(25.0, 2).unwrap(), &template).unwrap();
    save_obj(&icosphere(20.0, 3).unwrap(), &wrap).unwrap();

    let out = tmp.path().join("fit");
    run_ok(
        spinefuse()
            .arg("skinfit")
            .arg("--template")
            .arg(&template)
            .arg("--wrap")
            .arg(&wrap)
            .args(["--w-fit", "100", "--w-reg", "0.1", "--iters", "15"])
            .arg("--out")
            .arg(&out),
    );
    assert!(out.join("fitted.obj").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("skinfit_report.json")).unwrap())
            .unwrap();
    assert!(report["iterations"].as_u64().unwrap() >= 1);
    let trace = fs::read_to_string(out.join("energy_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,energy_mm2\n"));
}

#[test]
fn missing_input_file_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    synth_case(&case, &[]);
    let (code, stderr) = exit_code(
        spinefuse()
            .arg("pipeline")
            .args(["--method", "feature-only"])
            .arg("--model")
            .arg(case.join("model"))
            .arg("--landmarks")
            .arg(tmp.path().join("no_such_landmarks.json"))
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("no_such_landmarks.json"), "{stderr}");
}

#[test]
fn missing_required_arm_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("case");
    synth_case(&case, &[]);
    let (code, stderr) = exit_code(
        spinefuse()
            .arg("pipeline")
            .args(["--method", "ours"])
            .arg("--model")
            .arg(case.join("model"))
            .arg("--landmarks")
            .arg(case.join("landmarks.json"))
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("--handles"), "{stderr}");
}

#[test]
fn degenerate_landmarks_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    let collinear = |frame: &str, x: f64| {
        format!(
            r#"{{"frame": "{frame}", "landmarks": [
  {{"name": "A", "position": [{x}, 0, 0], "sigma_mm": 1.0}},
  {{"name": "B", "position": [{x}, 0, 10], "sigma_mm": 1.0}},
  {{"name": "C", "position": [{x}, 0, 20], "sigma_mm": 1.0}}]}}"#
        )
    };
    fs::write(&a, collinear("model", 0.0)).unwrap();
    fs::write(&b, collinear("scan", 5.0)).unwrap();
    let (code, stderr) = exit_code(
        spinefuse()
            .arg("coarse")
            .arg("--source")
            .arg(&a)
            .arg("--target")
            .arg(&b)
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("collinear"), "{stderr}");
}

#[test]
fn malformed_json_exits_2_with_byte_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"frame\": \"scan\", \"landmarks\": [}]}").unwrap();
    let (code, stderr) = exit_code(
        spinefuse()
            .arg("coarse")
            .arg("--source")
            .arg(&bad)
            .arg("--target")
            .arg(&bad)
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 2);
    assert!(stderr.contains("byte"), "{stderr}");
    assert!(stderr.contains("bad.json"), "{stderr}");
}

#[test]
fn unknown_flags_exit_2() {
    let (code, _) = exit_code(spinefuse().arg("cobb").arg("--definitely-not-a-flag"));
    assert_eq!(code, 2);
}
