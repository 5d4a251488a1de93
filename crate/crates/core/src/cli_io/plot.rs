//! Static SVG line plots rendered from CSV tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::output::read_csv;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Plots every column against the first one. A log axis is used when all
/// values are positive and span more than three decades.
pub fn svg_from_csv(csv_path: &Path) -> Result<PathBuf> {
    let table = read_csv(csv_path)?;
    if table.columns.len() < 2 || table.rows.is_empty() {
        return Err(Error::InvalidInput(format!("{} has nothing to plot", csv_path.display())));
    }
    let xs: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let ys: Vec<f64> = table.rows.iter().flat_map(|r| r[1..].iter().copied()).filter(|v| v.is_finite()).collect();
    let (ymin, ymax) = bounds(&ys);
    let log = ymin > 0.0 && ymax / ymin > 1e3;
    let ty = |v: f64| if log { v.log10() } else { v };
    let (y0, y1) = pad_range(ty(ymin), ty(ymax));
    let (x0, x1) = pad_range(bounds(&xs).0, bounds(&xs).1);
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * PAD);
    let sy = |v: f64| HEIGHT - PAD - (ty(v) - y0) / (y1 - y0) * (HEIGHT - 2.0 * PAD);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    )
    .unwrap();
    let ylabel = if log { "log10 " } else { "" };
    writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, PAD, PAD - 8.0, escape(&table.name)).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(&format!("{} [{}]", table.columns[0].name, table.columns[0].unit))
    )
    .unwrap();
    writeln!(s, r#"<text x="4" y="{}">{ylabel}{y0:.3e}</text>"#, HEIGHT - PAD).unwrap();
    writeln!(s, r#"<text x="4" y="{PAD}">{ylabel}{y1:.3e}</text>"#).unwrap();
    writeln!(s, r#"<text x="{PAD}" y="{}">{x0:.3e}</text>"#, HEIGHT - PAD + 14.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.3e}</text>"#, WIDTH - PAD, HEIGHT - PAD + 14.0).unwrap();

    for (c, col) in table.columns.iter().enumerate().skip(1) {
        let color = COLORS[(c - 1) % COLORS.len()];
        let pts: Vec<String> = table
            .rows
            .iter()
            .filter(|r| r[c].is_finite() && (!log || r[c] > 0.0))
            .map(|r| format!("{:.2},{:.2}", sx(r[0]), sy(r[c])))
            .collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            WIDTH - PAD + 4.0,
            PAD + 14.0 * c as f64,
            escape(&col.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");

    let out = csv_path.with_extension("svg");
    std::fs::write(&out, s).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn bounds(v: &[f64]) -> (f64, f64) {
    v.iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
