//! CSV, JSON and SVG writers. All numeric output uses Rust's
//! locale-independent formatting, so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ksc_core::MixtureSample;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes one CSV row per record, header from the field names.
pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{other:?}")),
    })?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Writes a sample as CSV with columns `label, x_0..x_{d-1}` and, when
/// `with_mu` is set, `mu_0..mu_{d-1}`.
pub fn write_sample_csv(path: &Path, sample: &MixtureSample, with_mu: bool) -> CliResult<()> {
    let d = sample.x.dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{other:?}")),
    })?;
    let mut header = vec!["label".to_string()];
    header.extend((0..d).map(|j| format!("x_{j}")));
    if with_mu {
        header.extend((0..d).map(|j| format!("mu_{j}")));
    }
    w.write_record(&header)?;
    for (i, label) in sample.labels.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(sample.x.column(i).iter().map(|v| v.to_string()));
        if with_mu {
            row.extend(sample.mu.column(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One plotted line: `(x, mean, min, max)` per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Self-contained SVG line plot with min-max whiskers. The y range is fixed
/// to `[y_lo, y_hi]`; the x range spans the data.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], y_lo: f64, y_hi: f64) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = if !x_lo.is_finite() {
        (0.0, 1.0)
    } else if x_hi > x_lo {
        (x_lo, x_hi)
    } else {
        (x_lo - 0.5, x_hi + 0.5)
    };
    let px = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| top + (1.0 - (y.clamp(y_lo, y_hi) - y_lo) / (y_hi - y_lo)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=5 {
        let y = y_lo + (y_hi - y_lo) * k as f64 / 5.0;
        let yy = py(y);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{y:.1}</text>"#, left - 6.0, yy + 4.0);
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let xx = px(x);
        let _ = writeln!(s, r#"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, trim_num(x));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#, top + ph / 2.0, top + ph / 2.0, escape(y_label));
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &ser.points {
            let xx = px(p.0);
            let _ = writeln!(s, r#"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="{color}"/>"#, py(p.2), py(p.3));
            let _ = writeln!(s, r#"<circle cx="{xx:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, py(p.1));
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn trim_num(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
