//! Point-cloud text files and atomic writes.
//!
//! Cloud files hold one point per line as `x y z` in meters. Lines starting
//! with `#` are comments; fields may be separated by any whitespace.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn format_cloud(points: &[Point3], comments: &[String]) -> String {
    let mut out = String::with_capacity(points.len() * 40);
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for p in points {
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
    }
    out
}

pub fn parse_cloud(text: &str, origin: &str) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        if fields.len() != 3 {
            return Err(perr(format!("expected 3 fields, found {}", fields.len())));
        }
        let mut xyz = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            xyz[k] = f
                .parse()
                .map_err(|e| perr(format!("bad number '{f}': {e}")))?;
            if !xyz[k].is_finite() {
                return Err(perr(format!("non-finite coordinate '{f}'")));
            }
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(points)
}

pub fn write_cloud(path: &Path, points: &[Point3], comments: &[String]) -> Result<()> {
    write_atomic(path, format_cloud(points, comments).as_bytes())
}

pub fn read_cloud(path: &Path, id: &str) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(PointCloud::new(
        id,
        parse_cloud(&text, &path.display().to_string())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_whitespace_and_comments() {
        let text = "# header\n1 2 3\n\t4.5\t  -6   7e1 \n\n# tail\n";
        let pts = parse_cloud(text, "mem").unwrap();
        assert_eq!(
            pts,
            vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.5, -6.0, 70.0)]
        );
    }

    #[test]
    fn writer_uses_six_decimals() {
        let s = format_cloud(&[Point3::new(1.0, -0.5, 1.0 / 3.0)], &["id a".into()]);
        assert_eq!(s, "# id a\n1.000000 -0.500000 0.333333\n");
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_cloud("1 2\n", "mem").is_err());
        assert!(parse_cloud("1 2 x\n", "mem").is_err());
        assert!(parse_cloud("1 2 nan\n", "mem").is_err());
    }
}
