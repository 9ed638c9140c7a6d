//! Deterministic SVG plots from the files of an output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("missing result file {0}")]
    Missing(PathBuf),
    #[error("{path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;

/// One marker or polyline vertex.
#[derive(Debug, Clone, Copy)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub color: &'static str,
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub log_y: bool,
    /// markers if false
    pub line: bool,
    pub points: Vec<Point>,
    pub comment: &'a str,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot<'_> {
    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        if !self.comment.is_empty() {
            let _ = writeln!(s, "<!-- {} -->", self.comment.replace("--", "- -"));
        }
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            W / 2.0,
            esc(self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 15.0,
            esc(self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(self.y_label)
        );
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let pts: Vec<(f64, f64, &str)> = self
            .points
            .iter()
            .map(|p| (tx(p.x), ty(p.y), p.color))
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        if pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle" fill="gray">no data</text>"#,
                W / 2.0,
                H / 2.0
            );
            s.push_str("</svg>\n");
            return s;
        }
        let range = |v: Vec<f64>| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x0, x1) = range(pts.iter().map(|p| p.0).collect());
        let (y0, y1) = range(pts.iter().map(|p| p.1).collect());
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };
        for (v, anchor, x, y) in [
            (x0, "start", px(x0), H - PAD + 16.0),
            (x1, "end", px(x1), H - PAD + 16.0),
        ] {
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{}</text>"#,
                tick(v, self.log_x)
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
                PAD - 4.0,
                py(v) + 3.0,
                tick(v, self.log_y)
            );
        }
        if self.line {
            let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                pts[0].2,
                path.join(" ")
            );
        } else {
            for p in &pts {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                    px(p.0),
                    py(p.1),
                    p.2
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

pub fn verdict_color(v: &str) -> &'static str {
    match v {
        "Converged" => "#1b7837",
        "BlowUpEvidence" => "#b2182b",
        _ => "#808080",
    }
}

fn read_json(path: &Path) -> Result<Value, ReportError> {
    let s = std::fs::read_to_string(path).map_err(|_| ReportError::Missing(path.to_owned()))?;
    serde_json::from_str(&s).map_err(|e| ReportError::Malformed {
        path: path.to_owned(),
        msg: e.to_string(),
    })
}

/// Rows of a sweep table: `(λ, verdict, sup_final)`.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(f64, String, f64)>, ReportError> {
    let s = std::fs::read_to_string(path).map_err(|_| ReportError::Missing(path.to_owned()))?;
    let bad = |msg: String| ReportError::Malformed {
        path: path.to_owned(),
        msg,
    };
    let mut rows = Vec::new();
    for (i, line) in s.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 4 {
            return Err(bad(format!("line {}: expected 6 columns", i + 1)));
        }
        let num = |c: &str| c.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
        rows.push((num(cols[0])?, cols[1].to_owned(), num(cols[3])?));
    }
    Ok(rows)
}

pub fn sweep_plot(rows: &[(f64, String, f64)], comment: &str) -> String {
    Plot {
        title: "λ sweep",
        x_label: "λ",
        y_label: "sup u at the end",
        log_x: true,
        log_y: true,
        line: false,
        points: rows
            .iter()
            .map(|(l, v, s)| Point {
                x: *l,
                y: *s,
                color: verdict_color(v),
            })
            .collect(),
        comment,
    }
    .to_svg()
}

pub fn evolve_plot(times: &[f64], sups: &[f64], comment: &str) -> String {
    Plot {
        title: "sup norm",
        x_label: "t",
        y_label: "sup u(t)",
        log_x: false,
        log_y: true,
        line: true,
        points: times
            .iter()
            .zip(sups)
            .map(|(&x, &y)| Point { x, y, color: "#2166ac" })
            .collect(),
        comment,
    }
    .to_svg()
}

/// Renders the plots for the result in `dir`; returns `(file name, svg)` pairs.
///
/// Sweeps need `result.json` and `sweep.csv`; evolve runs need `result.json`.
/// Other modes produce no plot.
pub fn render_report(dir: &Path) -> Result<Vec<(String, String)>, ReportError> {
    let result_path = dir.join("result.json");
    let result = read_json(&result_path)?;
    let comment = match result.get("config_sha256").and_then(Value::as_str) {
        Some(h) => format!("config sha256 {h}"),
        None => String::new(),
    };
    let mode = result.get("mode").and_then(Value::as_str).unwrap_or("");
    let body = result.get("result");
    match mode {
        "sweep" => {
            let rows = read_sweep_csv(&dir.join("sweep.csv"))?;
            Ok(vec![("sweep.svg".into(), sweep_plot(&rows, &comment))])
        }
        "evolve" => {
            let nums = |key: &str| -> Result<Vec<f64>, ReportError> {
                body.and_then(|b| b.get(key))
                    .and_then(Value::as_array)
                    .ok_or_else(|| ReportError::Malformed {
                        path: result_path.clone(),
                        msg: format!("no `result.{key}` array"),
                    })
                    .map(|a| a.iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect())
            };
            let times = nums("times")?;
            let sups = nums("sup_history")?;
            Ok(vec![("evolve.svg".into(), evolve_plot(&times, &sups, &comment))])
        }
        _ => Ok(Vec::new()),
    }
}
