//! Files a run leaves on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shrinker_core::flows::{DynamicsCheck, Verdict};

use crate::LabError;

pub const CHECKS_FILE: &str = "checks.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    #[serde(with = "extended_f64")]
    pub measured: f64,
    #[serde(with = "extended_f64")]
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check::new(name, measured <= tolerance, measured, tolerance, detail)
    }

    pub fn new(name: &str, passed: bool, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
        Check {
            name: name.to_string(),
            verdict: if passed { Verdict::Pass } else { Verdict::Fail },
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail
    }
}

impl From<&DynamicsCheck> for Check {
    fn from(c: &DynamicsCheck) -> Check {
        Check { name: c.name.clone(), verdict: c.verdict, measured: c.measured, tolerance: c.tolerance, detail: c.detail.clone() }
    }
}

/// JSON has no infinities; they travel as the strings `inf`, `-inf`, `nan`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::num(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: `{other}`"))),
            },
        }
    }
}

/// Collects the files of one run and hashes them as they are written.
pub struct RunDir {
    pub path: PathBuf,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

pub fn sha256_hex(data: &[u8]) -> String {
    let d = Sha256::digest(data);
    let mut s = String::with_capacity(64);
    for b in d {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn io(path: &Path, e: std::io::Error) -> LabError {
    LabError::Io(format!("{}: {e}", path.display()))
}

impl RunDir {
    pub fn create(path: PathBuf) -> Result<Self, LabError> {
        std::fs::create_dir_all(&path).map_err(|e| io(&path, e))?;
        // Stale outputs from an earlier run would be misattributed.
        for name in [CHECKS_FILE, MANIFEST_FILE, DIAGNOSTIC_FILE] {
            let p = path.join(name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| io(&p, e))?;
            }
        }
        Ok(RunDir { path, files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<(), LabError> {
        let p = self.path.join(name);
        std::fs::write(&p, data).map_err(|e| io(&p, e))?;
        self.files.push(FileEntry { path: name.to_string(), bytes: data.len(), sha256: sha256_hex(data) });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), LabError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| LabError::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        let data = w.into_inner().map_err(|e| LabError::Io(format!("{name}: {e}")))?;
        self.write(name, &data)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), LabError> {
        let mut data = serde_json::to_vec_pretty(value).map_err(|e| LabError::Io(format!("{name}: {e}")))?;
        data.push(b'\n');
        self.write(name, &data)
    }

    /// Hash over the names and hashes of every file written so far.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.files {
            h.update(f.path.as_bytes());
            h.update([0]);
            h.update(f.sha256.as_bytes());
            h.update([b'\n']);
        }
        let mut s = String::new();
        for b in h.finalize() {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: String,
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
    /// Hash of the file list; identifies the run's outputs.
    pub content_hash: String,
}

/// Plain number formatting shared by every CSV: shortest round-trip form.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Standalone SVG with one polyline (or dot row) per series. Non-positive
/// values are dropped on a log axis.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool, dots: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 20.0, 40.0, 50.0);
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().filter(|p| p.0.is_finite() && (!log_y || p.1 > 0.0)).map(|&(x, y)| (x, tf(y))).filter(|p| p.1.is_finite()).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="gray"/>"#, w - ml - mr, h - mt - mb);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let ylab = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.3}</text>"#, sx(xv), h - mb + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{ylab}</text>"#, ml - 6.0, sy(yv) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 10.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (mt + h - mb) / 2.0,
        escape(&if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() })
    );
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if dots {
            for &(x, y) in p {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
            }
        } else if !p.is_empty() {
            let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, ml + 8.0, mt + 16.0 + 14.0 * i as f64, escape(ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
