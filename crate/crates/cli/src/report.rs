//! Summary of finished runs without recomputation.

use crate::output::{content_hash, Meta, CURVE_FILE, META_FILE};
use anyhow::{bail, Context, Result};
use chrono::DateTime;
use std::path::{Path, PathBuf};

pub struct RunSummary {
    pub dir: PathBuf,
    pub meta: Meta,
    pub rows: usize,
    pub status: &'static str,
}

/// Every field must parse as a number except the oracle's pass column.
fn check_curve(path: &Path) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let header = reader.headers().with_context(|| format!("{}: bad header", path.display()))?.clone();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow::anyhow!("{}: parse error at line {line}: {e}", path.display())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (name, field) in header.iter().zip(record.iter()) {
            let ok = if name == "pass" { field == "pass" || field == "fail" } else { field.parse::<f64>().is_ok() };
            if !ok {
                bail!("{}: parse error at line {line}: column {name} has {field:?}", path.display());
            }
        }
        rows += 1;
    }
    Ok(rows)
}

fn summarize(dir: &Path) -> Result<RunSummary> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).with_context(|| format!("missing {}", meta_path.display()))?;
    let meta: Meta =
        serde_json::from_str(&text).with_context(|| format!("{}: invalid metadata", meta_path.display()))?;
    if meta.error.is_some() {
        return Ok(RunSummary { dir: dir.to_path_buf(), meta, rows: 0, status: "ERROR" });
    }
    let curve = dir.join(CURVE_FILE);
    if !curve.exists() {
        bail!("missing {}", curve.display());
    }
    let rows = check_curve(&curve)?;
    let bytes = std::fs::read(&curve)?;
    let status = if meta.curve_sha256.as_deref() != Some(content_hash(&bytes).as_str()) {
        "MODIFIED"
    } else if meta.pass {
        "PASS"
    } else {
        "FAIL"
    };
    Ok(RunSummary { dir: dir.to_path_buf(), meta, rows, status })
}

/// Runs in `dir` itself or in its immediate subdirectories, sorted by start time.
pub fn collect(dir: &Path) -> Result<Vec<RunSummary>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut runs = Vec::new();
    if dir.join(META_FILE).exists() {
        runs.push(summarize(dir)?);
    } else {
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(META_FILE).exists())
            .collect();
        subdirs.sort();
        for d in subdirs {
            runs.push(summarize(&d)?);
        }
    }
    if runs.is_empty() {
        bail!("no {META_FILE} found in {} or its subdirectories", dir.display());
    }
    let key = |r: &RunSummary| {
        DateTime::parse_from_rfc3339(&r.meta.started_at).map(|t| t.timestamp_micros()).unwrap_or(i64::MAX)
    };
    runs.sort_by_key(key);
    Ok(runs)
}

pub fn render(runs: &[RunSummary]) -> String {
    let mut out =
        format!("{:<28} {:<8} {:<8} {:>6} {:>9}  {}\n", "started_at", "kind", "status", "rows", "wall_s", "run");
    for r in runs {
        out += &format!(
            "{:<28} {:<8} {:<8} {:>6} {:>9.2}  {}",
            r.meta.started_at,
            r.meta.experiment,
            r.status,
            r.rows,
            r.meta.wall_seconds,
            r.dir.display()
        );
        if let Some(e) = &r.meta.error {
            out += &format!("  ({}: {})", e.kind, e.message);
        }
        out.push('\n');
    }
    let passed = runs.iter().filter(|r| r.status == "PASS").count();
    out += &format!("{passed}/{} runs passed\n", runs.len());
    out
}
