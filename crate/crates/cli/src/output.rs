//! Output directory handling, run reports and small file writers.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bathy_core::io::write_atomic;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// The output directory of one invocation.
pub struct Workspace {
    pub out: PathBuf,
    overwrite: bool,
}

impl Workspace {
    pub fn new(out: PathBuf, overwrite: bool) -> Self {
        Workspace { out, overwrite }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Reserves `names` (files or directories below the output directory).
    /// Existing entries are refused unless overwriting, in which case they
    /// are removed so no stale files survive.
    pub fn claim(&self, names: &[&str]) -> CliResult<()> {
        let taken: Vec<PathBuf> = names
            .iter()
            .map(|n| self.path(n))
            .filter(|p| p.exists())
            .collect();
        if taken.is_empty() {
            return Ok(());
        }
        if !self.overwrite {
            let list: Vec<String> = taken.iter().map(|p| p.display().to_string()).collect();
            return Err(CliError::Invalid(format!(
                "refusing to overwrite {} (pass --overwrite)",
                list.join(", ")
            )));
        }
        for p in taken {
            let res = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else {
                fs::remove_file(&p)
            };
            res.map_err(|e| CliError::Runtime(format!("cannot remove {}: {e}", p.display())))?;
        }
        Ok(())
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(rel);
        write_atomic(&path, bytes)?;
        Ok(path)
    }
}

/// Machine-readable summary of one invocation, written atomically to
/// `<out>/<command>.json`.
pub struct RunReport {
    command: &'static str,
    config: RunConfig,
    started: Instant,
    inputs: Map<String, Value>,
    outputs: Vec<String>,
    metrics: Map<String, Value>,
}

impl RunReport {
    pub fn new(command: &'static str, config: &RunConfig) -> Self {
        RunReport {
            command,
            config: config.clone(),
            started: Instant::now(),
            inputs: Map::new(),
            outputs: Vec::new(),
            metrics: Map::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs
            .insert(name.into(), Value::String(path.display().to_string()));
    }

    pub fn output(&mut self, ws: &Workspace, path: &Path) {
        let rel = path.strip_prefix(&ws.out).unwrap_or(path);
        self.outputs.push(rel.display().to_string());
    }

    pub fn metric(&mut self, name: &str, value: impl Into<Value>) {
        self.metrics.insert(name.into(), value.into());
    }

    pub fn finish(self, ws: &Workspace) -> CliResult<PathBuf> {
        let config = serde_json::to_value(&self.config).expect("configuration serializes");
        let report = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.config.seed,
            "config": config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "metrics": self.metrics,
            "wall_seconds": self.started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        ws.write(&format!("{}.json", self.command), text.as_bytes())
    }
}

/// Maps `f` over `items` on up to `workers` threads. Results come back in
/// input order, so the output never depends on the worker count.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// 16-bit binary PGM with a comment line describing the value scale.
pub fn pgm16(width: usize, height: usize, comment: &str, values: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n# {comment}\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Formats a float for CSV output with a fixed number of decimals.
pub fn f(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}
