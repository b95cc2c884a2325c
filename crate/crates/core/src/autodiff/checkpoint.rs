//! Text checkpoint container.
//!
//! ```text
//! bathy-ckpt v1
//! section network
//! meta epoch 3
//! param sa0.w0 7 16
//! 1.0000000000000000e0 -2.5000000000000000e-1 ...
//! end
//! ```
//!
//! Values are written with 17 significant digits so a save/load round trip
//! is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

pub const CHECKPOINT_HEADER: &str = "bathy-ckpt v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn with_section(name: &str, meta: Vec<(String, String)>, params: ParamStore) -> Self {
        Checkpoint {
            sections: vec![Section {
                name: name.to_string(),
                meta,
                params,
            }],
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for s in &self.sections {
            let _ = writeln!(out, "section {}", s.name);
            for (k, v) in &s.meta {
                let _ = writeln!(out, "meta {k} {v}");
            }
            for (name, t) in s.params.iter() {
                let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
                let _ = writeln!(out, "param {name} {}", dims.join(" "));
                let vals: Vec<String> = t.values().iter().map(|v| format!("{v:.16e}")).collect();
                out.push_str(&vals.join(" "));
                out.push('\n');
            }
            out.push_str("end\n");
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
            _ => return Err(perr(1, format!("missing header '{CHECKPOINT_HEADER}'"))),
        }
        let mut ckpt = Checkpoint::default();
        let mut current: Option<Section> = None;
        while let Some((ln, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("section") => {
                    if current.is_some() {
                        return Err(perr(ln, "nested section".into()));
                    }
                    let name = words
                        .next()
                        .ok_or_else(|| perr(ln, "section without name".into()))?;
                    current = Some(Section {
                        name: name.to_string(),
                        ..Section::default()
                    });
                }
                Some("meta") => {
                    let s = current
                        .as_mut()
                        .ok_or_else(|| perr(ln, "meta outside section".into()))?;
                    let key = words
                        .next()
                        .ok_or_else(|| perr(ln, "meta without key".into()))?;
                    let value: Vec<&str> = words.collect();
                    s.meta.push((key.to_string(), value.join(" ")));
                }
                Some("param") => {
                    let s = current
                        .as_mut()
                        .ok_or_else(|| perr(ln, "param outside section".into()))?;
                    let name = words
                        .next()
                        .ok_or_else(|| perr(ln, "param without name".into()))?;
                    let shape = words
                        .map(|w| {
                            w.parse::<usize>()
                                .map_err(|e| perr(ln, format!("bad dimension '{w}': {e}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let (vln, vline) = lines
                        .next()
                        .ok_or_else(|| perr(ln, "missing values line".into()))?;
                    let values = vline
                        .split_whitespace()
                        .map(|w| {
                            w.parse::<f64>()
                                .map_err(|e| perr(vln, format!("bad value '{w}': {e}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let t = Tensor::new(shape, values).map_err(|e| perr(vln, e.to_string()))?;
                    s.params
                        .insert(name, t)
                        .map_err(|e| perr(ln, e.to_string()))?;
                }
                Some("end") => {
                    let s = current
                        .take()
                        .ok_or_else(|| perr(ln, "end without section".into()))?;
                    ckpt.sections.push(s);
                }
                Some(other) => return Err(perr(ln, format!("unknown record '{other}'"))),
                None => {}
            }
        }
        if current.is_some() {
            return Err(perr(0, "unterminated section".into()));
        }
        Ok(ckpt)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    crate::io::write_atomic(path, ckpt.to_text().as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::parse(&text, &path.display().to_string())
}
