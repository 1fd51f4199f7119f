use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const GOLDEN: &str = "
[flow]
kind = symbolic-suspension
transitions = 11,11
lambda_transitions = golden-mean
roof = 1.0
theta = 0.01

[potential]
kind = zero

[neighborhoods]
u1.radius = 1
u.radius = 0

[run]
seed = 5
delta = 0.05
tmin = 4
tmax = 12
tsteps = 5
";

const SMALL_LORENZ: &str = "
[flow]
kind = lorenz
burn_in = 20
cloud_points = 3000
cloud_dt = 0.01

[potential]
kind = zero

[neighborhoods]
lambda.radius = 0.5
u1.radius = 1.0
u.radius = 2.0

[run]
seed = 1
delta = 0.5
tmin = 0.5
tmax = 1.5
tsteps = 4
max_candidates = 300
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_thermoflow"));
    c.env_remove("THERMOFLOW_THREADS");
    c
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("backend.ini");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}, stderr {}",
        o.status,
        String::from_utf8_lossy(&o.stderr)
    );
}

fn failure(o: &Output) -> (i32, Value) {
    let code = o.status.code().unwrap();
    let stderr = String::from_utf8_lossy(&o.stderr);
    let last = stderr.lines().last().unwrap_or_default();
    (code, serde_json::from_str(last).unwrap())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["pressure"], &tmp.path().join("nope.ini"), tmp.path());
    let (code, err) = failure(&o);
    assert_eq!(code, 1);
    assert_eq!(err["code"], "E_CONFIG");
    assert!(err["message"].as_str().unwrap().contains("nope.ini"));
}

#[test]
fn unknown_flags_are_config_errors() {
    let o = bin().args(["pressure", "--bogus"]).output().unwrap();
    let (code, err) = failure(&o);
    assert_eq!((code, err["code"].as_str()), (1, Some("E_CONFIG")));
}

#[test]
fn invalid_backends_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &GOLDEN.replace("roof = 1.0", "roof = -1.0"));
    let (code, err) = failure(&run(&["pressure"], &cfg, tmp.path()));
    assert_eq!((code, err["code"].as_str()), (2, Some("E_BACKEND")));
}

#[test]
fn infeasible_gluing_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    let o = run(
        &["spec", "--tau-max", "0.01", "--count", "6"],
        &cfg,
        tmp.path(),
    );
    let (code, err) = failure(&o);
    assert_eq!((code, err["code"].as_str()), (3, Some("E_COMPUTE")));
}

#[test]
fn bad_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    let o = bin()
        .env("THERMOFLOW_THREADS", "0")
        .args(["pressure", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(failure(&o).0, 1);
}

#[test]
fn pressure_writes_one_record_per_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    let out = tmp.path().join("res.jsonl");
    let o = run(
        &[
            "pressure",
            "--tmin",
            "4",
            "--tmax",
            "16",
            "--out",
            out.to_str().unwrap(),
        ],
        &cfg,
        tmp.path(),
    );
    ok(&o);
    let text = fs::read_to_string(&out).unwrap();
    let recs: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 5);
    assert_eq!(recs[0]["t"], 4.0);
    assert_eq!(recs[4]["t"], 16.0);
    for r in &recs {
        for key in ["t", "log_lambda", "n_points", "delta", "eps"] {
            assert!(r.get(key).is_some(), "{key} missing in {r}");
        }
    }
}

#[test]
fn guardrails_warn_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    let o = run(&["pressure", "--gamma", "0.01"], &cfg, tmp.path());
    ok(&o);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("1000·delta"));
    assert!(stderr.contains("[8·delta, 200·delta]"));
}

#[test]
fn report_of_empty_dir_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&bin().arg("report").arg(tmp.path()).output().unwrap());
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let summary = json(&tmp.path().join("summary.json"));
    assert!(summary["pressure"].is_null());
    for h in ["I0", "I1", "II", "III"] {
        assert_eq!(summary["checklist"][h], "unchecked");
    }
}

#[test]
fn report_of_pressure_only_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    ok(&run(&["pressure"], &cfg, tmp.path()));
    ok(&bin().arg("report").arg(tmp.path()).output().unwrap());
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    for col in ["t", "log_lambda", "delta", "eps"] {
        assert!(header.contains(&col), "{col} missing from {header:?}");
    }
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("pressure,")));
}

#[test]
fn report_rejects_malformed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("results.jsonl"), "{\"t\": 1.0}\n").unwrap();
    let o = bin().arg("report").arg(tmp.path()).output().unwrap();
    assert_eq!(failure(&o).0, 1);
    let o = bin()
        .arg("report")
        .arg(tmp.path().join("absent"))
        .output()
        .unwrap();
    assert_eq!(failure(&o).0, 1);
}

#[test]
fn golden_mean_full_run_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    let out = tmp.path().join("out");
    for args in [
        vec!["pressure"],
        vec!["spec"],
        vec!["spec", "--collection", "u1"],
        vec!["expansivity", "--eps", "0.005", "--points", "16"],
        vec!["decompose", "--eps", "0.5", "--per-t", "4"],
        vec![
            "construct",
            "--delta",
            "0.002",
            "--tmax",
            "8",
            "--tsteps",
            "3",
        ],
        vec![
            "gibbs", "--delta", "0.002", "--tmax", "8", "--tsteps", "3", "--count", "6",
        ],
    ] {
        ok(&run(&args, &cfg, &out));
    }
    ok(&bin().arg("report").arg(&out).output().unwrap());
    let s = json(&out.join("summary.json"));
    let golden = ((1.0 + 5f64.sqrt()) / 2.0).ln();
    let p = s["pressure"].as_f64().unwrap();
    assert!((p - golden).abs() < 0.02, "{p}");
    for h in ["I0", "I1", "II", "III"] {
        assert_eq!(s["checklist"][h], "certified", "{h}");
    }
    assert_eq!(s["expansivity"]["p_perp"], "-inf");
    assert_eq!(s["expansivity"]["ne_fraction"], 0.0);

    let spec = json(&out.join("spec-lambda.json"));
    for m in spec["margins"].as_array().unwrap() {
        let m = m.as_str().unwrap();
        let mantissa = m.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 12, "{m}");
        assert!(m.parse::<f64>().unwrap() > 0.0);
    }
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("gibbs,")));
}

#[test]
fn measures_reload_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), GOLDEN);
    let args = [
        "construct",
        "--delta",
        "0.002",
        "--tmax",
        "8",
        "--tsteps",
        "3",
    ];
    ok(&run(&args, &cfg, tmp.path()));
    let text = fs::read_to_string(tmp.path().join("measure.jsonl")).unwrap();
    let mut total = 0.0;
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let w = v["weight"].as_f64().unwrap();
        assert_eq!(
            serde_json::to_string(&v["weight"]).unwrap(),
            serde_json::to_string(&w).unwrap()
        );
        total += w;
    }
    assert!((total - 1.0).abs() < 1e-9);
    ok(&run(
        &[
            "gibbs", "--delta", "0.002", "--count", "4", "--tmax", "8", "--tsteps", "3",
        ],
        &cfg,
        tmp.path(),
    ));
}

#[test]
fn cached_and_cold_orbits_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL_LORENZ);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&run(&["pressure"], &cfg, &a));
    let cache: Vec<_> = fs::read_dir(a.join("cache")).unwrap().collect();
    assert_eq!(cache.len(), 1);
    let cold = fs::read(a.join("results.jsonl")).unwrap();
    ok(&run(&["pressure"], &cfg, &a));
    assert_eq!(fs::read(a.join("results.jsonl")).unwrap(), cold);
    ok(&run(&["pressure"], &cfg, &b));
    let name = cache[0].as_ref().unwrap().file_name();
    assert_eq!(
        fs::read(a.join("cache").join(&name)).unwrap(),
        fs::read(b.join("cache").join(&name)).unwrap()
    );
}

#[test]
fn corrupt_cache_is_recomputed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL_LORENZ);
    let out = tmp.path().join("o");
    ok(&run(&["pressure"], &cfg, &out));
    let reference = fs::read(out.join("results.jsonl")).unwrap();
    for entry in fs::read_dir(out.join("cache")).unwrap() {
        fs::write(entry.unwrap().path(), b"TFPC garbage").unwrap();
    }
    ok(&run(&["pressure"], &cfg, &out));
    assert_eq!(fs::read(out.join("results.jsonl")).unwrap(), reference);
}
