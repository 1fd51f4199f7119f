//! Aggregation of a results directory into `report.csv` and `summary.json`.

use std::path::Path;

use serde_json::{json, Value};
use thermoflow::partition::linear_fit;

use crate::failure::{Failure, Outcome};
use crate::output::{from_num, num, write_bytes, write_json};

pub const CSV_HEADER: &str = "table,t,log_lambda,delta,eps,n_points,kind,scale,mass,ratio";

const STATUSES: [&str; 3] = ["certified", "proxy", "unchecked"];

fn malformed(path: &Path, what: &str) -> Failure {
    Failure::Config(format!("{}: {what}", path.display()))
}

fn load(path: &Path) -> Result<Option<Value>, Failure> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| malformed(path, &e.to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(malformed(path, &e.to_string())),
    }
}

fn field(v: &Value, key: &str, path: &Path) -> Result<f64, Failure> {
    v.get(key)
        .and_then(from_num)
        .ok_or_else(|| malformed(path, &format!("missing numeric field {key:?}")))
}

fn cell(x: f64) -> String {
    match num(x) {
        Value::String(s) => s,
        v => v.to_string(),
    }
}

struct PressureRow {
    t: f64,
    log_lambda: f64,
    delta: f64,
    eps: f64,
    n_points: Option<u64>,
}

fn pressure_rows(path: &Path) -> Result<Vec<PressureRow>, Failure> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(malformed(path, &e.to_string())),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: Value =
                serde_json::from_str(line).map_err(|e| malformed(path, &e.to_string()))?;
            Ok(PressureRow {
                t: field(&v, "t", path)?,
                log_lambda: field(&v, "log_lambda", path)?,
                delta: field(&v, "delta", path)?,
                eps: field(&v, "eps", path)?,
                n_points: v.get("n_points").and_then(Value::as_u64),
            })
        })
        .collect()
}

fn status(doc: Option<&Value>, pointer: &str, path: &Path) -> Result<String, Failure> {
    let Some(doc) = doc else {
        return Ok("unchecked".into());
    };
    match doc.pointer(pointer).and_then(Value::as_str) {
        Some(s) if STATUSES.contains(&s) => Ok(s.to_string()),
        _ => Err(malformed(path, &format!("bad status at {pointer}"))),
    }
}

pub fn run(dir: &Path) -> Outcome {
    if !dir.is_dir() {
        return Err(Failure::Config(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let results = dir.join("results.jsonl");
    let rows = pressure_rows(&results)?;
    let gibbs_path = dir.join("gibbs.json");
    let gibbs = load(&gibbs_path)?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "pressure,{},{},{},{},{},,,,\n",
            cell(r.t),
            cell(r.log_lambda),
            cell(r.delta),
            cell(r.eps),
            r.n_points.map(|n| n.to_string()).unwrap_or_default(),
        ));
    }
    let mut gibbs_summary = Value::Null;
    if let Some(g) = &gibbs {
        let mut q = serde_json::Map::new();
        for kind in ["lower", "upper"] {
            let report = g
                .get(kind)
                .ok_or_else(|| malformed(&gibbs_path, &format!("missing {kind} report")))?;
            let scale = field(report, "scale", &gibbs_path)?;
            let records = report
                .get("records")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(&gibbs_path, "missing records"))?;
            for rec in records {
                csv.push_str(&format!(
                    "gibbs,{},,,,,{kind},{},{},{}\n",
                    cell(field(rec, "t", &gibbs_path)?),
                    cell(scale),
                    cell(field(rec, "mass", &gibbs_path)?),
                    cell(field(rec, "ratio", &gibbs_path)?),
                ));
            }
            q.insert(
                format!("{kind}_q"),
                report.get("q_hat").cloned().unwrap_or(Value::Null),
            );
        }
        q.insert(
            "p_hat".into(),
            g.get("p_hat").cloned().unwrap_or(Value::Null),
        );
        q.insert(
            "p_source".into(),
            g.get("p_source").cloned().unwrap_or(Value::Null),
        );
        gibbs_summary = Value::Object(q);
    }

    let (ts, ls): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.log_lambda.is_finite())
        .map(|r| (r.t, r.log_lambda))
        .unzip();
    let fit = linear_fit(&ts, &ls).ok();

    let spec0_path = dir.join("spec-lambda.json");
    let spec1_path = dir.join("spec-u1.json");
    let decompose_path = dir.join("decompose.json");
    let spec0 = load(&spec0_path)?;
    let spec1 = load(&spec1_path)?;
    let decompose = load(&decompose_path)?;
    let checklist = json!({
        "I0": status(spec0.as_ref(), "/status", &spec0_path)?,
        "I1": status(spec1.as_ref(), "/status", &spec1_path)?,
        "II": status(decompose.as_ref(), "/checklist/II", &decompose_path)?,
        "III": status(decompose.as_ref(), "/checklist/III", &decompose_path)?,
    });

    let pick = |doc: &Option<Value>, keys: &[&str]| -> Value {
        match doc {
            Some(d) => Value::Object(
                keys.iter()
                    .map(|k| (k.to_string(), d.get(*k).cloned().unwrap_or(Value::Null)))
                    .collect(),
            ),
            None => Value::Null,
        }
    };
    let expansivity = load(&dir.join("expansivity.json"))?;
    let construct = load(&dir.join("construct.json"))?;
    let pressure_doc = load(&dir.join("pressure.json"))?;
    let summary = json!({
        "pressure": fit.map(|f| f.0),
        "pressure_fit": fit.map(|(slope, intercept, residual)| json!({
            "slope": slope,
            "intercept": intercept,
            "residual": residual,
            "points": ts.len(),
        })),
        "oracle": pressure_doc.as_ref().and_then(|d| d.get("oracle").cloned()).unwrap_or(Value::Null),
        "checklist": checklist,
        "expansivity": pick(&expansivity, &["ne_fraction", "p_perp", "label", "gap_status"]),
        "construct": pick(&construct, &["t", "atoms", "invariance_defect", "fraction_lambda", "fraction_u1"]),
        "gibbs": gibbs_summary,
    });
    write_bytes(&dir.join("report.csv"), csv.as_bytes())?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(())
}
