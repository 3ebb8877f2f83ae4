//! End-to-end checks of the flexstage binary: exit codes, error lines,
//! artifact layout, idempotent reruns, determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_flexstage")
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> TempDir {
        let path = std::env::temp_dir().join(format!(
            "flexstage_cli_{tag}_{}",
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&path);
        fs::create_dir_all(&path).unwrap();
        TempDir(path)
    }

    fn join(&self, rel: &str) -> PathBuf {
        self.0.join(rel)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> (Output, String, String) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    (out, stdout, stderr)
}

const PLACEMENT_BLOCK: &str = r#"
[placement]
resolution = 4
symmetric = true
actuator_z_offset_m = -0.004
sensor_z_offset_m = -0.004

[[placement.actuator_domain]]
x_min_m = 0.0
y_min_m = 0.0
x_max_m = 0.12
y_max_m = 0.12

[[placement.actuator_domain]]
x_min_m = 0.18
y_min_m = 0.0
x_max_m = 0.3
y_max_m = 0.12

[[placement.actuator_domain]]
x_min_m = 0.0
y_min_m = 0.18
x_max_m = 0.12
y_max_m = 0.3

[[placement.actuator_domain]]
x_min_m = 0.18
y_min_m = 0.18
x_max_m = 0.3
y_max_m = 0.3

[[placement.sensor_domain]]
x_min_m = 0.0
y_min_m = 0.0
x_max_m = 0.12
y_max_m = 0.12

[[placement.sensor_domain]]
x_min_m = 0.18
y_min_m = 0.0
x_max_m = 0.3
y_max_m = 0.12

[[placement.sensor_domain]]
x_min_m = 0.0
y_min_m = 0.18
x_max_m = 0.12
y_max_m = 0.3

[[placement.sensor_domain]]
x_min_m = 0.18
y_min_m = 0.18
x_max_m = 0.3
y_max_m = 0.3

[[placement.fixed_actuator]]
x_m = 0.075
y_m = 0.075
z_offset_m = -0.004
axis = "x"

[[placement.fixed_actuator]]
x_m = 0.225
y_m = 0.225
z_offset_m = -0.004
axis = "x"

[[placement.fixed_actuator]]
x_m = 0.075
y_m = 0.225
z_offset_m = -0.004
axis = "y"

[[placement.fixed_actuator]]
x_m = 0.225
y_m = 0.075
z_offset_m = -0.004
axis = "y"

[[placement.fixed_sensor]]
x_m = 0.075
y_m = 0.075
z_offset_m = -0.004
axis = "x"

[[placement.fixed_sensor]]
x_m = 0.225
y_m = 0.225
z_offset_m = -0.004
axis = "x"

[[placement.fixed_sensor]]
x_m = 0.075
y_m = 0.225
z_offset_m = -0.004
axis = "y"

[[placement.fixed_sensor]]
x_m = 0.225
y_m = 0.075
z_offset_m = -0.004
axis = "y"
"#;

const MASSES_BLOCK: &str = r#"
[[geometry.point_mass]]
x_m = 0.035
y_m = 0.035
kg = 0.2334

[[geometry.point_mass]]
x_m = 0.265
y_m = 0.035
kg = 0.2334

[[geometry.point_mass]]
x_m = 0.035
y_m = 0.265
kg = 0.2334

[[geometry.point_mass]]
x_m = 0.265
y_m = 0.265
kg = 0.2334
"#;

const TAIL_BLOCK: &str = r#"
[control]
rigid_bandwidth_hz = [0.5, 40.0]
flex_bandwidth_hz = [50.0, 300.0]

[analysis]
frf_lo_hz = 10.0
frf_hi_hz = 1000.0
frf_points_per_decade = 50
sim_duration_s = 0.25

[analysis.scan]
channel = "y"
distance_m = 0.02
v_max_m_s = 0.25
a_max_m_s2 = 5.0
j_max_m_s3 = 400.0
"#;

fn stiff_config(name: &str, floor_hz: f64) -> String {
    format!(
        r#"name = "{name}"
seed = 3

[geometry]
length_x_m = 0.3
length_y_m = 0.3
nx = 6
ny = 6
thickness_min_m = 0.002
thickness_max_m = 0.02
{MASSES_BLOCK}
[modal]
n_flexible = 6
damping_ratio = 0.005

[structure]
goal = "stiff"
min_first_resonance_hz = {floor_hz}
n_controlled = 0
max_evaluations = 120
random_starts = 1
coarse_sweep = 6
{PLACEMENT_BLOCK}{TAIL_BLOCK}"#
    )
}

fn band_config(name: &str, lo_hz: f64, hi_hz: f64, evals: usize) -> String {
    format!(
        r#"name = "{name}"
seed = 3

[geometry]
length_x_m = 0.3
length_y_m = 0.3
nx = 6
ny = 6
thickness_min_m = 0.002
thickness_max_m = 0.01

[[geometry.band]]
rows = 1

[[geometry.band]]
rows = 2
{MASSES_BLOCK}
[modal]
n_flexible = 6
damping_ratio = 0.005

[structure]
goal = "band"
omega_low_hz = {lo_hz}
omega_high_hz = {hi_hz}
n_controlled = 1
n_constrained = 3
max_evaluations = {evals}
random_starts = 1
coarse_sweep = 4
{PLACEMENT_BLOCK}{TAIL_BLOCK}"#
    )
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Every file under `dir` as (relative path, bytes), run.log excluded.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_str().unwrap().to_string();
                if rel != "run.log" {
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn run_produces_layout_then_skips_and_is_deterministic() {
    let tmp = TempDir::new("run");
    let cfg = write_config(&tmp, "stage.toml", &stiff_config("clitest", 250.0));
    let out_a = tmp.join("a");

    let (out, stdout, stderr) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {stderr}");
    for stage in ["modes", "structure", "placement", "assembly", "tune", "analysis", "report"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(stage) && l.contains("ran")),
            "missing status for {stage} in:\n{stdout}"
        );
        assert!(out_a.join(stage).is_dir(), "no {stage}/ directory");
    }
    assert!(stdout.contains("design clitest"), "{stdout}");

    let manifest = fs::read_to_string(out_a.join("manifest.json")).unwrap();
    assert!(manifest.contains("config_sha256"));
    for stage in ["modes", "structure", "placement", "assembly", "tune", "analysis", "report"] {
        assert!(manifest.contains(&format!("\"{stage}\"")), "{stage} not in manifest");
    }
    assert!(out_a.join("run.log").is_file());

    // unchanged inputs: every stage skips
    let (out, stdout, _) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for stage in ["modes", "structure", "placement", "assembly", "tune", "analysis", "report"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(stage) && l.contains("skipped")),
            "{stage} did not skip:\n{stdout}"
        );
    }

    // a fresh run elsewhere produces byte-identical artifacts
    let out_b = tmp.join("b");
    let (out, _, _) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let snap_a = snapshot(&out_a);
    let snap_b = snapshot(&out_b);
    assert_eq!(
        snap_a.iter().map(|(r, _)| r).collect::<Vec<_>>(),
        snap_b.iter().map(|(r, _)| r).collect::<Vec<_>>()
    );
    for ((rel, bytes_a), (_, bytes_b)) in snap_a.iter().zip(&snap_b) {
        assert!(bytes_a == bytes_b, "{rel} differs between runs");
    }
}

#[test]
fn through_gates_stages_and_resumes() {
    let tmp = TempDir::new("through");
    let cfg = write_config(&tmp, "stage.toml", &stiff_config("clitest", 250.0));
    let out_dir = tmp.join("out");

    let (out, stdout, stderr) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--through",
        "placement",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {stderr}");
    assert!(out_dir.join("placement/placement.json").is_file());
    assert!(!out_dir.join("assembly").exists(), "assembly ran past --through");
    assert!(!stdout.contains("tune"), "{stdout}");

    let (out, stdout, _) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for stage in ["modes", "structure", "placement"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(stage) && l.contains("skipped")),
            "{stage} should resume from cache:\n{stdout}"
        );
    }
    assert!(
        stdout.lines().any(|l| l.starts_with("report") && l.contains("ran")),
        "{stdout}"
    );
    assert!(out_dir.join("report/trade.json").is_file());
}

#[test]
fn bad_stage_name_is_rejected() {
    let tmp = TempDir::new("stagename");
    let cfg = write_config(&tmp, "stage.toml", &stiff_config("clitest", 250.0));
    let (out, _, stderr) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--through",
        "polish",
        "--out",
        tmp.join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr.contains("polish"), "{stderr}");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = TempDir::new("cfgerr");

    let bogus = stiff_config("clitest", 250.0).replace("n_flexible = 6", "n_flexible = 6\nbogus = 1");
    let cfg = write_config(&tmp, "bogus.toml", &bogus);
    let (out, _, stderr) = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.join("o1").to_str().unwrap()]);
    assert!(!out.status.success());
    let line = stderr.lines().next().unwrap_or("");
    assert!(line.starts_with("error: config: "), "{stderr}");
    assert!(line.contains("bogus"), "{stderr}");

    let missing = band_config("clitest", 60.0, 120.0, 40).replace("omega_high_hz = 120", "# omega_high_hz = 120");
    let cfg = write_config(&tmp, "missing.toml", &missing);
    let (out, _, stderr) = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.join("o2").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(
        stderr.contains("structure.omega_high_hz"),
        "missing key not named: {stderr}"
    );
}

#[test]
fn infeasible_structure_exits_nonzero_with_report() {
    let tmp = TempDir::new("infeasible");
    let cfg = write_config(&tmp, "imp.toml", &band_config("clitest", 50.0, 560.0, 40));
    let (out, _, stderr) = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let line = stderr.lines().next().unwrap_or("");
    assert!(line.starts_with("error: infeasible: structure"), "{stderr}");
    assert!(line.contains("best attempt"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1, "multi-line error: {stderr}");
}

#[test]
fn missing_config_file_is_an_io_error_naming_the_path() {
    let tmp = TempDir::new("iofile");
    let (out, _, stderr) = run(&[
        "run",
        "--config",
        "/nonexistent/flexstage.toml",
        "--out",
        tmp.join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr.starts_with("error: io: "), "{stderr}");
    assert!(stderr.contains("/nonexistent/flexstage.toml"), "{stderr}");
}

#[test]
fn sweep_writes_curve_and_tolerates_infeasible_corners() {
    let tmp = TempDir::new("sweep");
    let cfg = write_config(&tmp, "band.toml", &band_config("clitest", 50.0, 560.0, 40));
    let out_dir = tmp.join("out");
    let (out, stdout, stderr) = run(&[
        "sweep-omega-high",
        "--config",
        cfg.to_str().unwrap(),
        "--from",
        "400",
        "--to",
        "600",
        "--steps",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {stderr}");
    assert!(stdout.contains("false"), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("sweep/omega_high_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("omega_high_hz,mass_kg,feasible,evaluations"));
    assert_eq!(lines.count(), 2);
    assert!(out_dir.join("sweep/sweep.json").is_file());

    // sweeping a stiff-goal config is a config error
    let cfg = write_config(&tmp, "stiff.toml", &stiff_config("clitest", 250.0));
    let (out, _, stderr) = run(&[
        "sweep-omega-high",
        "--config",
        cfg.to_str().unwrap(),
        "--from",
        "400",
        "--to",
        "600",
        "--steps",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr.starts_with("error: config: "), "{stderr}");
}

#[test]
fn compare_builds_trade_table() {
    let tmp = TempDir::new("compare");
    let a = write_config(&tmp, "a.toml", &stiff_config("heavy", 250.0));
    let b = write_config(&tmp, "b.toml", &stiff_config("light", 150.0));
    let out_dir = tmp.join("out");
    let (out, stdout, stderr) = run(&[
        "compare",
        "--designs",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {stderr}");
    for name in ["heavy", "light"] {
        assert!(stdout.contains(name), "{stdout}");
        assert!(out_dir.join(name).join("report/trade.json").is_file());
    }
    assert!(out_dir.join("compare/trade.json").is_file());
    let table = fs::read_to_string(out_dir.join("compare/trade_table.txt")).unwrap();
    assert!(table.contains("heavy") && table.contains("light"), "{table}");

    // duplicate names are rejected before any work
    let (out, _, stderr) = run(&[
        "compare",
        "--designs",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "--out",
        tmp.join("dup").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr.starts_with("error: config: "), "{stderr}");
}
