use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CHAIN: &str = r#"
seed = 3

[model]
kind = "chain"
masses = [1.0, 2.0, 1.5]
stiffnesses = [100.0, 80.0, 60.0]

[partition]
measured = ["2:x"]

[reduction]
damping_a = 0.1
damping_b = 1e-4

[integrator]
dt = 0.01
input = "acceleration"

[regularization]
alpha = 0.0

[excitation]
samples = 512

[[excitation.forces]]
label = "2:x"
profile = "random"
band = [0.1, 5.0]
rms = 1.0
"#;

const BEAM: &str = r#"
[model]
kind = "beam"
n_elements = 10

[partition]
masters = ["5:z", "10:z"]
measured = ["10:z"]

[reduction]
n_modes = 4
damping_a = 10.0
damping_b = 1e-6

[integrator]
dt = 1e-4

[regularization]
calibration_samples = 200
grid_points = 12

[excitation]
samples = 400

[[excitation.forces]]
label = "10:z"
profile = "f1x"
scale = 1e-3

[noise]
fraction = 0.01

[akf]
max_force = 10.0
noise_std = 1.0
"#;

fn vsense(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsense"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = vsense(config, args);
    assert!(
        out.status.success(),
        "vsense {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn case(text: &str) -> (TempDir, std::path::PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("case.toml");
    fs::write(&path, text).unwrap();
    (dir, path)
}

/// `(channel, metric, value)` rows of a metrics table.
fn metric_rows(path: &Path) -> Vec<(String, String, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].to_string(), f[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn noiseless_chain_pipeline_recovers_the_force() {
    let (dir, cfg) = case(CHAIN);
    ok(&cfg, &["build"]);
    ok(&cfg, &["simulate"]);
    ok(&cfg, &["identify"]);
    ok(&cfg, &["metrics"]);
    let rows = metric_rows(&dir.path().join("out/identify/metrics.csv"));
    let force: Vec<f64> = rows
        .iter()
        .filter(|(c, m, _)| c == "2:x" && m == "force_fde")
        .map(|r| r.2)
        .collect();
    assert_eq!(force.len(), 1);
    assert!(force[0] < 1e-6, "force FDE {}", force[0]);
    let responses = rows.iter().filter(|r| r.1 == "response_fde").count();
    assert_eq!(responses, 3);
}

#[test]
fn mismatched_sample_interval_fails() {
    let (_dir, cfg) = case(CHAIN);
    ok(&cfg, &["build"]);
    ok(&cfg, &["simulate"]);
    let out = vsense(&cfg, &["identify", "--set", "integrator.dt=0.02"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does not match integrator step"), "{err}");
}

#[test]
fn simulate_is_deterministic_for_a_fixed_seed() {
    let (dir, cfg) = case(CHAIN);
    ok(&cfg, &["build"]);
    let noisy = ["--set", "noise.fraction=0.05"];
    let run = |out: &str, seed: &str| {
        let out_dir = dir.path().join(out);
        let out_arg = out_dir.to_str().unwrap().to_string();
        copy_dir(
            &dir.path().join("out/full_model"),
            &out_dir.join("full_model"),
        );
        ok(
            &cfg,
            &[
                "simulate", "--out", &out_arg, "--seed", seed, noisy[0], noisy[1],
            ],
        );
        fs::read(out_dir.join("measurements.csv")).unwrap()
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

#[test]
fn rerunning_a_stage_reproduces_its_outputs() {
    let (dir, cfg) = case(CHAIN);
    ok(&cfg, &["build"]);
    ok(&cfg, &["simulate", "--set", "noise.fraction=0.02"]);
    ok(&cfg, &["identify", "--set", "regularization.alpha=1e-4"]);
    let first = fs::read(dir.path().join("out/identify/forces.csv")).unwrap();
    ok(&cfg, &["identify", "--set", "regularization.alpha=1e-4"]);
    let second = fs::read(dir.path().join("out/identify/forces.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn config_errors_name_the_key_and_exit_nonzero() {
    let (_dir, cfg) = case(CHAIN);
    for (flag, key) in [
        ("integrator.dt=\"fast\"", "integrator.dt"),
        ("noise.fraction=-1.0", "noise.fraction"),
        ("partition.masters=[\"0:x\"]", "partition.measured"),
    ] {
        let out = vsense(&cfg, &["build", "--set", flag]);
        assert_eq!(out.status.code(), Some(2), "{flag}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(&format!("`{key}`")), "{flag}: {err}");
    }
}

#[test]
fn missing_alpha_without_calibration_is_a_config_error() {
    let (_dir, cfg) = case(&CHAIN.replace("alpha = 0.0", ""));
    ok(&cfg, &["build"]);
    ok(&cfg, &["simulate"]);
    let out = vsense(&cfg, &["identify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("regularization.alpha"));
}

#[test]
fn reduced_beam_runs_every_stage() {
    let (dir, cfg) = case(BEAM);
    let out = dir.path().join("out");
    ok(&cfg, &["build"]);
    ok(&cfg, &["reduce"]);
    ok(&cfg, &["simulate"]);
    let calibrated = ok(&cfg, &["calibrate"]);
    assert!(calibrated.contains("alpha = "), "{calibrated}");
    ok(&cfg, &["identify"]);
    ok(&cfg, &["akf"]);
    ok(&cfg, &["metrics"]);
    ok(
        &cfg,
        &["metrics", "--estimate", out.join("akf").to_str().unwrap()],
    );
    ok(&cfg, &["bench", "--set", "bench.repeats=2"]);

    for f in [
        "eigenvalue_error.csv",
        "lcurve.csv",
        "alpha.toml",
        "bench.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let lcurve = fs::read_to_string(out.join("lcurve.csv")).unwrap();
    assert_eq!(lcurve.lines().count(), 13);
    let bench = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 1 + 2 * 400);

    // both runs share one schema
    for f in ["forces.csv", "responses.csv", "expanded.csv", "timing.csv"] {
        let a = fs::read_to_string(out.join("identify").join(f)).unwrap();
        let b = fs::read_to_string(out.join("akf").join(f)).unwrap();
        assert_eq!(a.lines().next(), b.lines().next(), "{f}");
        assert_eq!(a.lines().count(), 401, "{f}");
    }
    let expanded = fs::read_to_string(out.join("identify/expanded.csv")).unwrap();
    assert_eq!(expanded.lines().next().unwrap().split(',').count(), 1 + 20);

    let ident = metric_rows(&out.join("identify/metrics.csv"));
    let akf = metric_rows(&out.join("akf/metrics.csv"));
    let kinds = |rows: &[(String, String, f64)]| {
        let mut k: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
        k.dedup();
        k
    };
    assert_eq!(kinds(&ident), kinds(&akf));
    let snr = ident.iter().find(|r| r.1 == "snr_db").unwrap().2;
    assert!((snr - 40.0).abs() < 2.0, "SNR {snr}");
    let eig = ident
        .iter()
        .filter(|r| r.1 == "eigenvalue_error_pct")
        .count();
    assert_eq!(eig, 6);
}

#[test]
fn akf_requires_acceleration_input() {
    let (_dir, cfg) = case(BEAM);
    let out = vsense(&cfg, &["akf", "--set", "integrator.input=displacement"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrator.input"));
}
