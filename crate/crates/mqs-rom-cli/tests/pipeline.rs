//! End-to-end tests of the pipeline binary: artifact layout, manifest
//! accounting, determinism, the documented error classes, and the two
//! config-level edge cases (full interpolation order, tampered artifacts).

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mqs-rom")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary spawns")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{} failed\nstdout: {}\nstderr: {}",
        what,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small 2D configuration that exercises saturation: the drive pushes the
/// conducting flux to roughly 0.9 of the curve's certified range.
fn base_config(deim: &str) -> String {
    format!(
        r#"
[problem]
kind = "transformer2d"
nx = 8
ny = 8

[grid]
dt = 1.25e-3
t_end = 0.05
order = 1

[training_input]
amps = [[1.5e4], [9.0e3]]
omegas = [[40.0], [70.0]]

[test_input]
amps = [[1.55e4], [9.4e3]]
omegas = [[44.0], [76.0]]

[pod]
tol = 1e-7

[deim]
{}

[output]
dir = "out"
"#,
        deim
    )
}

fn write_config(dir: &Path, contents: &str) {
    std::fs::write(dir.join("pipeline.toml"), contents).unwrap();
}

fn manifest(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("out/manifest")).unwrap()
}

fn run_full_pipeline(dir: &Path) {
    assert_ok(&run(dir, &["generate", "--config", "pipeline.toml"]), "generate");
    for which in ["full", "regularized", "ode"] {
        assert_ok(
            &run(dir, &["simulate", "--which", which, "--config", "pipeline.toml"]),
            which,
        );
    }
    assert_ok(&run(dir, &["reduce", "--config", "pipeline.toml"]), "reduce");
    assert_ok(&run(dir, &["verify", "--config", "pipeline.toml"]), "verify");
    assert_ok(&run(dir, &["report", "--config", "pipeline.toml"]), "report");
}

#[test]
fn end_to_end_pipeline_is_green_and_fully_manifested() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &base_config("ell = 4"));
    run_full_pipeline(tmp.path());

    let text = manifest(tmp.path());
    let files = text.lines().filter(|l| l.starts_with("file ")).count();
    assert!(files >= 12, "manifest lists {} files:\n{}", files, text);
    let checks: Vec<&str> = text.lines().filter(|l| l.starts_with("check ")).collect();
    assert!(checks.len() >= 10, "expected a full check set, got {:?}", checks);
    assert!(
        checks.iter().all(|l| l.ends_with("= pass")),
        "manifest has failing checks:\n{}",
        text
    );
    // Every listed artifact exists and matches its recorded digest size-wise.
    for line in text.lines().filter(|l| l.starts_with("file ")) {
        let rel = line.strip_prefix("file ").unwrap().split(" = ").next().unwrap();
        assert!(tmp.path().join("out").join(rel).exists(), "{} missing", rel);
    }
    for fig in [
        "fig_state_error.csv",
        "fig_output_error.csv",
        "fig_perturbation.csv",
        "fig_outputs.csv",
        "fig_relative_error.csv",
    ] {
        let body = std::fs::read_to_string(tmp.path().join("out").join(fig)).unwrap();
        assert_eq!(body.lines().count(), 42, "{} should carry 41 nodes + header", fig);
    }
    // The truncated interpolation makes a nonzero, bounded state error.
    let summary = std::fs::read_to_string(tmp.path().join("out/summary")).unwrap();
    let value = |key: &str| -> f64 {
        summary
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{}=", key)))
            .unwrap_or_else(|| panic!("summary lacks {}", key))
            .parse()
            .unwrap()
    };
    assert!(value("delta_deim") > 0.0);
    assert!(value("max_state_error") > 0.0);
    assert!(value("mu1") < 0.0 && value("mu2") < 0.0);
}

#[test]
fn reruns_reproduce_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &base_config("ell = 4"));
    assert_ok(&run(tmp.path(), &["generate", "--config", "pipeline.toml"]), "generate");
    assert_ok(
        &run(tmp.path(), &["simulate", "--which", "ode", "--config", "pipeline.toml"]),
        "simulate",
    );
    assert_ok(&run(tmp.path(), &["reduce", "--config", "pipeline.toml"]), "reduce");

    let read = |rel: &str| std::fs::read(tmp.path().join("out").join(rel)).unwrap();
    let before = [read("traj_ode.csv"), read("rom/u_a1.mtx"), read("rom/E.mtx")];
    assert_ok(
        &run(tmp.path(), &["simulate", "--which", "ode", "--config", "pipeline.toml"]),
        "simulate again",
    );
    assert_ok(&run(tmp.path(), &["reduce", "--config", "pipeline.toml"]), "reduce again");
    let after = [read("traj_ode.csv"), read("rom/u_a1.mtx"), read("rom/E.mtx")];
    assert_eq!(before, after, "stage reruns must reproduce artifacts byte for byte");
}

#[test]
fn full_interpolation_order_zeroes_the_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    // A cutoff below machine precision keeps every nonzero force direction.
    write_config(tmp.path(), &base_config("tol = 1e-15"));
    run_full_pipeline(tmp.path());

    let report = std::fs::read_to_string(tmp.path().join("out/report.csv")).unwrap();
    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let t1 = header.iter().position(|h| *h == "theta1").unwrap();
    let t2 = header.iter().position(|h| *h == "theta2").unwrap();
    for line in lines {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[t1], 0.0);
        assert_eq!(fields[t2], 0.0);
    }

    // With theta identically zero the perturbed output IS the reduced output.
    let outputs = std::fs::read_to_string(tmp.path().join("out/fig_outputs.csv")).unwrap();
    let mut lines = outputs.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let m = header.iter().filter(|h| h.starts_with("y_delta_")).count();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let (y, y_delta) = (&fields[1..1 + m], &fields[1 + m..1 + 2 * m]);
        assert_eq!(y, y_delta, "y and y_delta must match textually when theta = 0");
    }
}

#[test]
fn missing_artifacts_surface_as_stage_dependency_errors() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &base_config("ell = 4"));

    let out = run(tmp.path(), &["verify", "--config", "pipeline.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mqs-rom generate"), "got: {}", stderr(&out));

    let out = run(tmp.path(), &["report", "--config", "pipeline.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("verify"), "got: {}", stderr(&out));

    assert_ok(&run(tmp.path(), &["generate", "--config", "pipeline.toml"]), "generate");
    let out = run(tmp.path(), &["reduce", "--config", "pipeline.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("simulate --which ode"), "got: {}", stderr(&out));
}

#[test]
fn config_mistakes_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<(String, &str)> = vec![
        ("not toml [".to_string(), "unparsable file"),
        (base_config("ell = 4").replace("[pod]", "[pod]\nbogus = 1"), "unknown key"),
        (base_config("ell = 4\ntol = 1e-7"), "conflicting deim keys"),
        (base_config("ell = 4").replace("order = 1", "order = 3"), "bad BDF order"),
        (
            base_config("ell = 4").replace(
                "[test_input]\namps = [[1.55e4], [9.4e3]]",
                "[test_input]\namps = [[1.55e4]]",
            ),
            "mismatched channel shapes",
        ),
        (
            base_config("ell = 4").replace("kind = \"transformer2d\"", "kind = \"hexahedral\""),
            "unknown problem kind",
        ),
    ];
    for (contents, what) in cases {
        write_config(tmp.path(), &contents);
        let out = run(tmp.path(), &["generate", "--config", "pipeline.toml"]);
        assert_eq!(code(&out), 2, "{} should exit 2, stderr: {}", what, stderr(&out));
    }

    write_config(tmp.path(), &base_config("ell = 4"));
    let out = run(
        tmp.path(),
        &["generate", "--config", "pipeline.toml", "--set", "grid.dt"],
    );
    assert_eq!(code(&out), 2, "malformed --set should exit 2");
    let out = run(tmp.path(), &["generate"]);
    assert_eq!(code(&out), 2, "missing --config should exit 2");
}

#[test]
fn set_overrides_reach_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &base_config("ell = 4"));
    assert_ok(
        &run(
            tmp.path(),
            &["generate", "--config", "pipeline.toml", "--set", "problem.nx=7", "--set", "problem.ny=7"],
        ),
        "generate with overrides",
    );
    let meta = std::fs::read_to_string(tmp.path().join("out/bundle/meta")).unwrap();
    let n_total: usize = meta
        .lines()
        .filter_map(|l| l.strip_prefix("n1 = ").or_else(|| l.strip_prefix("n2 = ")))
        .map(|v| v.parse::<usize>().unwrap())
        .sum();
    assert_eq!(n_total, 36, "a 7x7 grid keeps 6x6 interior nodes");
}

#[test]
fn dump_transforms_writes_the_projection_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &base_config("ell = 4"));
    assert_ok(
        &run(tmp.path(), &["generate", "--config", "pipeline.toml", "--dump-transforms"]),
        "generate --dump-transforms",
    );
    for name in ["W.mtx", "Yhat.mtx", "Cr.mtx"] {
        let path = tmp.path().join("out/transforms").join(name);
        assert!(path.exists(), "{} missing", name);
    }
    let text = manifest(tmp.path());
    assert!(text.contains("file transforms/W.mtx"), "manifest lists the dump:\n{}", text);
}

#[test]
fn tampered_artifacts_fail_verification_with_exit_four() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &base_config("ell = 4"));
    assert_ok(&run(tmp.path(), &["generate", "--config", "pipeline.toml"]), "generate");
    for which in ["full", "regularized", "ode"] {
        assert_ok(
            &run(tmp.path(), &["simulate", "--which", which, "--config", "pipeline.toml"]),
            which,
        );
    }
    assert_ok(&run(tmp.path(), &["reduce", "--config", "pipeline.toml"]), "reduce");

    // Double every output sample of the regularized trajectory: the model
    // equivalence and derivative-output checks must notice.
    let path = tmp.path().join("out/traj_regularized.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let m = header.split(',').filter(|h| h.starts_with("y_")).count();
    let mut tampered = header;
    tampered.push('\n');
    for line in lines {
        let mut fields: Vec<String> = line.split(',').map(str::to_string).collect();
        let n = fields.len();
        for f in &mut fields[n - m..] {
            let v: f64 = f.parse().unwrap();
            *f = format!("{:.16e}", 2.0 * v);
        }
        tampered.push_str(&fields.join(","));
        tampered.push('\n');
    }
    std::fs::write(&path, tampered).unwrap();

    let out = run(tmp.path(), &["verify", "--config", "pipeline.toml"]);
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("equivalence"), "got: {}", stderr(&out));

    // The red run still persists its evidence.
    let summary = std::fs::read_to_string(tmp.path().join("out/summary")).unwrap();
    assert!(summary.contains("=fail"));
    assert!(manifest(tmp.path()).lines().any(|l| l.starts_with("check ") && l.ends_with("= fail")));
}
