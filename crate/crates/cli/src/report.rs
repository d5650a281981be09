//! Consolidated pass/fail report over every run under an output directory.

use std::fmt::Write as _;
use std::path::Path;

use shrinker_core::flows::Verdict;

use crate::artifacts::{sha256_hex, Check, Manifest, CHECKS_FILE, MANIFEST_FILE};
use crate::LabError;

pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Clone)]
pub struct RunChecks {
    pub name: String,
    pub kind: String,
    pub content_hash: String,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub runs: Vec<RunChecks>,
    pub text: String,
}

impl Report {
    pub fn failures(&self) -> usize {
        self.runs.iter().flat_map(|r| &r.checks).filter(|c| c.failed()).count()
    }

    pub fn total(&self) -> usize {
        self.runs.iter().map(|r| r.checks.len()).sum()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, LabError> {
    std::fs::read(path).map_err(|e| LabError::Missing(format!("{}: {e}", path.display())))
}

/// Re-hash the files a manifest lists; any mismatch becomes a failing check.
fn integrity(dir: &Path, m: &Manifest) -> Check {
    let mut bad = Vec::new();
    for f in &m.files {
        match std::fs::read(dir.join(&f.path)) {
            Ok(data) if sha256_hex(&data) == f.sha256 => {}
            Ok(_) => bad.push(format!("{} changed", f.path)),
            Err(_) => bad.push(format!("{} missing", f.path)),
        }
    }
    let detail = if bad.is_empty() { format!("{} files match their hashes", m.files.len()) } else { bad.join(", ") };
    Check::new("manifest_integrity", bad.is_empty(), bad.len() as f64, 0.0, detail)
}

/// Read every `<run>/checks.json` with its manifest, write `report.txt` to
/// `out_root` and return the table.
pub fn emit_report(out_root: &Path) -> Result<Report, LabError> {
    let entries = std::fs::read_dir(out_root).map_err(|e| LabError::Missing(format!("{}: {e}", out_root.display())))?;
    let mut dirs: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(CHECKS_FILE).is_file()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(LabError::Missing(format!("no run artifacts under {}", out_root.display())));
    }
    let mut runs = Vec::new();
    for d in &dirs {
        let mut checks: Vec<Check> =
            serde_json::from_slice(&read(&d.join(CHECKS_FILE))?).map_err(|e| LabError::Missing(format!("{}: {e}", d.display())))?;
        let manifest: Manifest = serde_json::from_slice(&read(&d.join(MANIFEST_FILE))?)
            .map_err(|e| LabError::Missing(format!("{}/{MANIFEST_FILE}: {e}", d.display())))?;
        checks.push(integrity(d, &manifest));
        runs.push(RunChecks { name: manifest.name, kind: manifest.kind, content_hash: manifest.content_hash, checks });
    }

    let mut t = String::new();
    let width = runs.iter().flat_map(|r| r.checks.iter().map(|c| c.name.len())).max().unwrap_or(10).max(10);
    for r in &runs {
        let _ = writeln!(t, "== {} ({}) content {}", r.name, r.kind, &r.content_hash[..16.min(r.content_hash.len())]);
        for c in &r.checks {
            let v = match c.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::HypothesisUnmet => "N/A ",
                Verdict::Skipped => "SKIP",
            };
            let _ = writeln!(t, "  {v}  {:<width$}  measured {:<12.4e} tolerance {:<12.4e} {}", c.name, c.measured, c.tolerance, c.detail);
        }
    }
    let report = Report { runs, text: String::new() };
    let _ = writeln!(t, "\n{} runs, {} checks, {} failures", report.runs.len(), report.total(), report.failures());
    std::fs::write(out_root.join(REPORT_FILE), &t).map_err(|e| LabError::Io(e.to_string()))?;
    Ok(Report { text: t, ..report })
}
