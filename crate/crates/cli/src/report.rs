//! `report`: a Markdown digest of the run reports in the output directory.

use std::fmt::Write as _;

use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{RunReport, Workspace};

const STAGES: [&str; 7] = [
    "synth",
    "dataset",
    "train",
    "gradcheck",
    "evaluate",
    "register",
    "baseline",
];

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("undefined".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match n.as_f64() {
            Some(x) if !n.is_i64() && !n.is_u64() => format!("{x:.6}"),
            _ => n.to_string(),
        }),
        Value::String(s) => Some(s.clone()),
        Value::Object(m) => {
            let parts: Option<Vec<String>> = m
                .iter()
                .map(|(k, v)| scalar(v).map(|s| format!("{k} {s}")))
                .collect();
            parts.map(|p| p.join(", "))
        }
        Value::Array(a) if a.len() <= 12 && !a.iter().any(|v| v.is_object() || v.is_array()) => {
            let parts: Option<Vec<String>> = a.iter().map(scalar).collect();
            parts.map(|p| format!("[{}]", p.join(", ")))
        }
        Value::Array(_) => None,
    }
}

pub fn cmd_report(cfg: &RunConfig, ws: &Workspace) -> CliResult<()> {
    ws.claim(&["report.md", "report.json"])?;
    let mut report = RunReport::new("report", cfg);
    let mut md = String::from("# Run report\n");
    let mut found = 0;
    for stage in STAGES {
        let path = ws.path(&format!("{stage}.json"));
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: not a run report: {e}", path.display())))?;
        report.input(stage, &path);
        found += 1;
        let _ = writeln!(md, "\n## {stage}\n\nseed {}\n", json["seed"]);
        md.push_str("| metric | value |\n|---|---|\n");
        if let Some(metrics) = json["metrics"].as_object() {
            for (k, v) in metrics {
                match scalar(v) {
                    Some(s) => {
                        let _ = writeln!(md, "| {k} | {s} |");
                    }
                    None => {
                        let n = v.as_array().map_or(0, Vec::len);
                        let _ = writeln!(md, "| {k} | {n} entries (see {stage}.json) |");
                    }
                }
            }
        }
    }
    if found == 0 {
        return Err(CliError::Invalid(format!(
            "no run reports in {}",
            ws.out.display()
        )));
    }
    report.output(ws, &ws.write("report.md", md.as_bytes())?);
    report.metric("stages", found);
    report.finish(ws)?;
    println!(
        "report: {found} stages summarized in {}",
        ws.path("report.md").display()
    );
    Ok(())
}
