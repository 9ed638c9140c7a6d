use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_frac-heat-lab"))
}

fn run_config(dir: &Path, name: &str, cfg: &Value, extra: &[&str]) -> (Output, std::path::PathBuf) {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    let out = dir.join(format!("{name}-out"));
    let o = bin()
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .env_remove("FRACHEAT_CACHE")
        .output()
        .unwrap();
    (o, out)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn classify_quartic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"mode": "classify", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 2});
    let (o, out) = run_config(dir.path(), "classify", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("result.json"));
    let c = &r["result"]["classification"];
    assert!((c["p_f"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!((c["p_theta"].as_f64().unwrap() - 3.0).abs() < 1e-15);
    assert_eq!(c["class"], "Supercritical");
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["config"]["sha256"], r["config_sha256"]);
    assert_eq!(m["outputs"][0]["file"], "result.json");
}

#[test]
fn kernel_check_records_mass_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"mode": "kernel-check", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 1});
    let (o, out) = run_config(dir.path(), "kernel", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("result.json"));
    assert!(r["result"]["mass_error"].as_f64().unwrap() <= 1e-6);
    assert!(r["result"]["chapman_kolmogorov"]["max_deviation"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn mode_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"mode": "kernel-check", "nonlinearity": {"family": "power", "p": 2}, "N": 1, "theta": 2});
    let (o, out) = run_config(dir.path(), "override", &cfg, &["--mode", "classify"]);
    assert!(o.status.success());
    let r = read_json(&out.join("result.json"));
    assert_eq!(r["mode"], "classify");
    assert_eq!(r["result"]["classification"]["class"], "Subcritical");
}

#[test]
fn sweep_brackets_power_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "sweep",
        "nonlinearity": {"family": "power", "p": 4},
        "N": 1, "theta": 2,
        "grid": {"L": 2, "M": 1024},
        "time": {"T": 4e-5, "dt": 1e-7},
        "profile": {"kind": "power", "p": 4, "cutoff": 1},
        "sweep": {"lambda_min": 1e-3, "lambda_max": 10, "points": 5, "bisections": 2}
    });
    let (o, out) = run_config(dir.path(), "sweep", &cfg, &["--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("result.json"));
    let lo = r["result"]["lambda_lo"].as_f64().unwrap();
    let hi = r["result"]["lambda_hi"].as_f64().unwrap();
    assert!(lo < hi);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 + 2);
    let svg = std::fs::read_to_string(out.join("sweep.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 7);
    let m = read_json(&out.join("manifest.json"));
    let files: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|e| e["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["sweep.csv", "result.json", "sweep.svg"]);
}

#[test]
fn evolve_is_deterministic_and_plotted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "evolve",
        "nonlinearity": {"family": "power", "p": 2},
        "N": 1, "theta": 1.5,
        "grid": {"L": 8, "M": 256},
        "time": {"T": 0.1, "dt": 0.01},
        "data": {"type": "ball", "radius": 1, "value": 1}
    });
    let (a, out_a) = run_config(dir.path(), "a", &cfg, &[]);
    let (b, out_b) = run_config(dir.path(), "b", &cfg, &[]);
    assert!(a.status.success() && b.status.success());
    for f in ["result.json", "field.csv", "evolve.svg"] {
        assert_eq!(std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap(), "{f}");
    }
    let r = read_json(&out_a.join("result.json"));
    assert_eq!(r["result"]["verdict"], "Converged");
    let svg = std::fs::read_to_string(out_a.join("evolve.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.contains(r["config_sha256"].as_str().unwrap()));
}

#[test]
fn necessary_constant_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "necessary",
        "nonlinearity": {"family": "power", "p": 2},
        "N": 1, "theta": 2,
        "grid": {"L": 4, "M": 64},
        "data": {"type": "constant", "value": 2},
        "necessary": {"T_star": 10, "t_min": 0.01, "t_max": 5}
    });
    let (o, out) = run_config(dir.path(), "nec", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("result.json"));
    assert_eq!(r["result"]["verdict"]["kind"], "NecessaryViolated");
    assert!((r["result"]["constant_violation_time"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"mode": "classify", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 2, "grid": {"L": 2, "M": "many"}});
    let (o, _) = run_config(dir.path(), "bad", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid.M"), "{err}");
}

#[test]
fn invariant_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, cfg) in [
        ("theta", json!({"mode": "classify", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 2.5})),
        (
            "m",
            json!({"mode": "kernel-check", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 2, "grid": {"L": 2, "M": 1000}}),
        ),
        (
            "sweep",
            json!({"mode": "classify", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 2,
                   "sweep": {"lambda_min": 2, "lambda_max": 1, "points": 4}}),
        ),
    ] {
        let (o, _) = run_config(dir.path(), name, &cfg, &[]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_failure_exits_3_with_result() {
    // heavy tails leave the window long before T
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "evolve",
        "nonlinearity": {"family": "power", "p": 2},
        "N": 1, "theta": 1,
        "grid": {"L": 1, "M": 64},
        "time": {"T": 1, "dt": 0.1},
        "data": {"type": "ball", "radius": 0.5, "value": 1}
    });
    let (o, out) = run_config(dir.path(), "leak", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    let r = read_json(&out.join("result.json"));
    assert!(r["error"].as_str().unwrap().contains("window"), "{r}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn kernel_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = json!({"mode": "kernel-check", "nonlinearity": {"family": "power", "p": 4}, "N": 1, "theta": 1.5});
    let path = dir.path().join("k.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let mut results = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("out{i}"));
        let o = bin().arg(&path).arg("--out").arg(&out).env("FRACHEAT_CACHE", &cache).output().unwrap();
        assert!(o.status.success());
        results.push(std::fs::read(out.join("result.json")).unwrap());
        let m = read_json(&out.join("manifest.json"));
        assert_eq!(m["kernel_cache"].as_array().unwrap().len(), 1);
    }
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(results[0], results[1]);
}

#[test]
fn missing_config_exits_2() {
    let o = bin().arg("/nonexistent/config.json").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sufficient_small_power_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json!({
        "mode": "sufficient",
        "nonlinearity": {"family": "power", "p": 4},
        "N": 1, "theta": 2,
        "grid": {"L": 2, "M": 256},
        "time": {"T": 0.01, "dt": 0.001},
        "data": {"type": "radial_power", "coef": 0.1, "exponent": 0.6666666666666666, "radius": 1},
        "sufficient": {"beta": 0.45, "delta": 0.1, "eps": 10}
    });
    let (o, out) = run_config(dir.path(), "suff", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("result.json"))["result"]["verdict"]["kind"], "SufficientHolds");
    cfg["sufficient"]["eps"] = json!(1e-3);
    let (o, out) = run_config(dir.path(), "suff2", &cfg, &[]);
    assert!(o.status.success());
    assert_eq!(read_json(&out.join("result.json"))["result"]["verdict"]["kind"], "SufficientFails");
}
