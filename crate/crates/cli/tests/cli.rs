use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn deconv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deconv"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("DECONV_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn read_values(path: &Path) -> Vec<(f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let mut it = line.split(',').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn fig31_estimate_writes_512_points_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = deconv(dir.path(), &["--preset", "fig31", "estimate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let curve = read_values(&dir.path().join("curve.csv"));
    assert_eq!(curve.len(), 512);
    assert!(curve.iter().all(|(x, v)| x.is_finite() && v.is_finite()));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["seed"], 31);
    assert!(manifest["summary"]["oracle"]["h"].as_f64().unwrap() > 0.0);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_data_file_is_a_config_error_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[data]\npath = \"/definitely/not/here.csv\"\nerror = \"laplace:b=1\"\n",
    );
    let out = deconv(dir.path(), &["--config", &cfg, "estimate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data.path"), "{}", stderr(&out));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn no_input_at_all_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = deconv(dir.path(), &["estimate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[estimate]\nbandwith = 0.3\n");
    let out = deconv(dir.path(), &["--config", &cfg, "estimate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bandwith"));
}

#[test]
fn degenerate_error_makes_deconv_kde_match_kde() {
    let base = "[grid]\nlo = -4.0\nhi = 4.0\npoints = 161\n";
    let mut curves = Vec::new();
    for est in ["kde", "deconv-kde"] {
        let dir = TempDir::new().unwrap();
        let body = format!("{base}[estimate]\nestimator = \"{est}\"\nh = 0.4\n");
        let cfg = write_config(dir.path(), &body);
        let out = deconv(dir.path(), &["--config", &cfg, "--preset", "degenerate", "estimate"]);
        assert!(out.status.success(), "{}", stderr(&out));
        curves.push(read_values(&dir.path().join("curve.csv")));
    }
    let worst = curves[0]
        .iter()
        .zip(&curves[1])
        .map(|(a, b)| {
            assert_eq!(a.0, b.0);
            (a.1 - b.1).abs()
        })
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-6, "max difference {worst}");
}

#[test]
fn compare_pce_passes_and_writes_report() {
    let dir = TempDir::new().unwrap();
    let out = deconv(dir.path(), &["--preset", "fig31", "compare-pce"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("theorem.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["inside_max_diff"].as_f64().unwrap() <= 1e-8);
    for name in ["pce_curve.csv", "decon_curve.csv", "coefficients.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let coefs = fs::read_to_string(dir.path().join("coefficients.csv")).unwrap();
    assert_eq!(coefs.lines().count(), 1 + 2 * 255 + 1);
}

#[test]
fn compare_pce_small_k0_is_zero_outside_its_range() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[pce]\nk0 = 15\nell = 2.0\nextra_probes = 30\n");
    let out = deconv(dir.path(), &["--config", &cfg, "--preset", "fig31", "compare-pce"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("theorem.json")).unwrap())
            .unwrap();
    assert_eq!(report["outside_probes"], 60);
    assert!(report["outside_max_abs"].as_f64().unwrap() <= 1e-8);
    let pce = read_values(&dir.path().join("pce_curve.csv"));
    for (x, v) in pce {
        if (x * 2.0).abs() > 15.5 {
            assert!(v.abs() <= 1e-8, "f({x}) = {v}");
        }
    }
}

#[test]
fn rates_rejects_too_few_sizes_and_zero_replicates() {
    for body in [
        "[rates]\nsizes = [500]\n",
        "[rates]\nsizes = [250, 500, 1000]\nreplicates = 0\n",
    ] {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), body);
        let out = deconv(dir.path(), &["--config", &cfg, "--preset", "rates", "rates"]);
        assert_eq!(out.status.code(), Some(2), "{body}: {}", stderr(&out));
    }
}

#[test]
fn rates_small_run_writes_table_and_slope() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[rates]\nsizes = [100, 200, 400]\nreplicates = 3\n[oracle]\nh_points = 20\n",
    );
    let out = deconv(dir.path(), &["--config", &cfg, "--preset", "rates", "rates"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let slope: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("slope.json")).unwrap())
            .unwrap();
    let (s, lo, hi) = (
        slope["slope"].as_f64().unwrap(),
        slope["ci_low"].as_f64().unwrap(),
        slope["ci_high"].as_f64().unwrap(),
    );
    assert!(s < 0.0 && lo <= hi, "{slope}");
}

#[test]
fn phiu_needs_two_replicates_and_starts_at_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[phiu]\nm = 1\n");
    let out = deconv(dir.path(), &["--config", &cfg, "--preset", "fig31", "phiu"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let out = deconv(dir.path(), &["--preset", "fig31", "phiu"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_values(&dir.path().join("phiu.csv"));
    assert_eq!(rows[0], (0.0, 1.0));
    assert!(rows.iter().all(|(_, v)| (0.0..=1.0).contains(v)));
}

#[test]
fn simulate_then_estimate_from_file() {
    let dir = TempDir::new().unwrap();
    let out = deconv(dir.path(), &["--preset", "regression", "simulate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sample = dir.path().join("sample.csv");
    let fit_dir = TempDir::new().unwrap();
    let body = format!(
        "[data]\npath = \"{}\"\nerror = \"laplace:b=0.2\"\n[estimate]\nestimator = \"deconv-local-linear\"\nh = 0.3\n[grid]\nlo = -1.5\nhi = 1.5\npoints = 31\n",
        sample.display()
    );
    let cfg = write_config(fit_dir.path(), &body);
    let out = deconv(fit_dir.path(), &["--config", &cfg, "estimate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_values(&fit_dir.path().join("curve.csv")).len(), 31);
}

#[test]
fn oracle_bandwidth_needs_a_known_truth() {
    let dir = TempDir::new().unwrap();
    let sim = deconv(dir.path(), &["--preset", "fig31", "simulate"]);
    assert!(sim.status.success());
    let fit_dir = TempDir::new().unwrap();
    let body = format!(
        "[data]\npath = \"{}\"\nerror = \"laplace:b=0.2\"\n",
        dir.path().join("sample.csv").display()
    );
    let cfg = write_config(fit_dir.path(), &body);
    let out = deconv(fit_dir.path(), &["--config", &cfg, "estimate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("oracle"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = deconv(dir.path(), &["--preset", "fig31", "--seed", "99", "estimate"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["curve.csv", "curve.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}
