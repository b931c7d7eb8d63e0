//! End-to-end tests of the `hydroloop` binary: exit codes, determinism, file
//! outputs, and the two-process socket loop.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_hydroloop");

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A fully tuned report, built once and shared by the read-only tests.
fn tuned_report() -> &'static Path {
    static FIXTURE: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = FIXTURE.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let report = dir.path().join("report.json");
        let cal = repo_root().join("default_calibration.json");
        let out = run(
            &["linearize", "--config", cal.to_str().unwrap(), "--report", report.to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let out = run(&["tune", "--report", report.to_str().unwrap()], dir.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (dir, report)
    });
    path
}

fn scenario(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(name)
}

#[test]
fn linearize_is_deterministic_and_matches_known_model() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.json");
    let cal = repo_root().join("default_calibration.json");
    let args =
        ["linearize", "--config", cal.to_str().unwrap(), "--report", report.to_str().unwrap()];
    let out = run(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = std::fs::read(&report).unwrap();
    let out = run(&args, dir.path());
    assert_eq!(code(&out), 0);
    let second = std::fs::read(&report).unwrap();
    assert_eq!(first, second, "re-run must be byte-identical");

    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let num = json["linearization"]["p_nom_num"][0].as_f64().unwrap();
    let wn2 = json["linearization"]["p_nom_den"][1].as_f64().unwrap();
    let damping = json["linearization"]["p_nom_den"][2].as_f64().unwrap();
    assert!((num / 8.255e5 - 1.0).abs() < 5e-3);
    assert!((wn2 / 2.219e6 - 1.0).abs() < 5e-3);
    assert!((damping / 948.0 - 1.0).abs() < 5e-3);
}

#[test]
fn missing_calibration_key_names_the_key() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(repo_root().join("default_calibration.json")).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["plant"].as_object_mut().unwrap().remove("m");
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    let report = dir.path().join("report.json");
    let out = run(
        &["linearize", "--config", broken.to_str().unwrap(), "--report", report.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("`m`"), "error must name the key: {}", stderr(&out));
}

#[test]
fn tune_produces_certified_design() {
    let report = tuned_report();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(json["tuning"]["gains"]["k_i"].as_f64().unwrap() >= 29.0);
    assert!(json["tuning"]["margin"].as_f64().unwrap() < 1.0);
    assert!(json["tuning"]["tangencies"].as_array().unwrap().len() >= 2);
    assert!(json["runtime"]["sp"]["tau_sp"].as_f64().unwrap() > 0.5);
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let report = tuned_report();
    let dir = TempDir::new().unwrap();
    let sc = scenario("wifi.json");
    let base = [
        "simulate",
        "--report",
        report.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
    ];
    for (out_name, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let mut args = base.to_vec();
        args.extend_from_slice(&["--seed", seed, "--out", out_name]);
        let out = run(&args, dir.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    let c = std::fs::read(dir.path().join("c.csv")).unwrap();
    assert_eq!(a, b, "same seed must be byte-identical");
    assert_ne!(a, c, "different seed must differ");
    for suffix in ["_position.svg", "_control.svg", "_pressure.svg"] {
        assert!(dir.path().join(format!("a{suffix}")).exists());
    }
    assert_eq!(a.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count(), 1102);
}

#[test]
fn simulate_unstable_run_exits_3_with_partial_trace() {
    let report = tuned_report();
    let dir = TempDir::new().unwrap();
    // a plant step equal to the controller period is far beyond the stiff
    // pressure dynamics' stability limit: the integration blows up
    let sc = dir.path().join("coarse.json");
    std::fs::write(
        &sc,
        r#"{
  "reference": [[0.0, 0.0], [0.1, 0.1]],
  "duration": 5.0,
  "plant_dt": 0.01,
  "channel": { "mode": "constant", "rtt": 0.01, "split": 0.5 },
  "seed": 1,
  "sp_filter": false
}"#,
    )
    .unwrap();
    let out = run(
        &[
            "simulate",
            "--report",
            report.to_str().unwrap(),
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            "boom",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("boom.csv")).unwrap();
    assert!(csv.starts_with("t,x_ref,x,v,p_load,u,rtt\n"));
    assert!(csv.contains("# fault,"), "partial trace must carry the fault marker");
}

#[test]
fn netloop_loopback_completes_with_trace() {
    let report = tuned_report();
    let dir = TempDir::new().unwrap();
    let sc = dir.path().join("short.json");
    std::fs::write(
        &sc,
        r#"{
  "reference": [[0.0, 0.0], [0.3, 0.05]],
  "duration": 2.0,
  "channel": { "mode": "constant", "rtt": 0.0, "split": 0.5 },
  "seed": 0,
  "sp_filter": false
}"#,
    )
    .unwrap();
    let addr = format!("127.0.0.1:{}", 20000 + std::process::id() % 20000);
    let mut plant = Command::new(BIN)
        .args([
            "netloop",
            "plant",
            &addr,
            "--report",
            report.to_str().unwrap(),
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            "sock",
        ])
        .current_dir(dir.path())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));
    let ctl = run(
        &[
            "netloop",
            "controller",
            &addr,
            "--report",
            report.to_str().unwrap(),
            "--scenario",
            sc.to_str().unwrap(),
        ],
        dir.path(),
    );
    let plant_status = plant.wait().unwrap();
    assert_eq!(code(&ctl), 0, "{}", stderr(&ctl));
    assert_eq!(plant_status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("sock.csv")).unwrap();
    assert_eq!(csv.lines().count(), 202); // header + duration/Ts + 1 rows
}

#[test]
fn netloop_controller_without_server_exits_4() {
    let report = tuned_report();
    let out = run(
        &[
            "netloop",
            "controller",
            "127.0.0.1:9", // discard port: nothing listens there
            "--report",
            report.to_str().unwrap(),
            "--scenario",
            scenario("ethernet.json").to_str().unwrap(),
        ],
        report.parent().unwrap(),
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn rttfit_recovers_synthetic_law_and_rejects_short_files() {
    let report_src = tuned_report();
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.json");
    std::fs::copy(report_src, &report).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gamma = Gamma::new(4.0, 0.01).unwrap();
    let mut csv = String::from("rtt\n");
    for _ in 0..5000 {
        csv.push_str(&format!("{:.9}\n", 0.01 + gamma.sample(&mut rng)));
    }
    let samples = dir.path().join("rtt.csv");
    std::fs::write(&samples, &csv).unwrap();
    let out = run(
        &[
            "rttfit",
            samples.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
            "--out",
            "fit",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let shape = json["delay_model"]["shape"].as_f64().unwrap();
    let scale = json["delay_model"]["scale"].as_f64().unwrap();
    assert!((shape / 4.0 - 1.0).abs() < 0.10, "shape {shape}");
    assert!((scale / 0.01 - 1.0).abs() < 0.10, "scale {scale}");
    assert!(dir.path().join("fit_rtt.svg").exists());
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("tau_nom"), "{stdout}");

    let short = dir.path().join("short.csv");
    std::fs::write(&short, "rtt\n0.02\n0.03\n0.04\n0.05\n0.02\n0.03\n0.04\n0.05\n0.02\n0.03\n")
        .unwrap();
    let out = run(
        &["rttfit", short.to_str().unwrap(), "--report", report.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn unknown_flag_exits_5() {
    let out = run(&["simulate", "--bogus"], &repo_root());
    assert_eq!(code(&out), 5);
}
