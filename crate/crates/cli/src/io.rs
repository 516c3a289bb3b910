//! CSV tables, JSON summaries and SVG plots.
//!
//! Floats are written as `{:.16e}`, which round-trips every finite double.

use crate::error::CliError;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// A table column: floats, or integers such as row indices.
pub enum Column<'a> {
    F(&'a [f64]),
    I(&'a [usize]),
}

impl Column<'_> {
    fn len(&self) -> usize {
        match self {
            Column::F(v) => v.len(),
            Column::I(v) => v.len(),
        }
    }
    fn cell(&self, i: usize) -> String {
        match self {
            Column::F(v) => format!("{:.16e}", v[i]),
            Column::I(v) => v[i].to_string(),
        }
    }
}

pub fn write_csv(path: &Path, header: &[&str], cols: &[Column]) -> Result<(), CliError> {
    let n = cols.first().map_or(0, |c| c.len());
    if cols.len() != header.len() || cols.iter().any(|c| c.len() != n) {
        return Err(CliError::Numerical(format!("ragged table for {}", path.display())));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..n {
        w.write_record(cols.iter().map(|c| c.cell(i)))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and columns of a numeric CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec?;
        for (k, cell) in rec.iter().enumerate() {
            let v = cell
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("{}: bad number `{cell}`: {e}", path.display())))?;
            cols[k].push(v);
        }
    }
    Ok((header, cols))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// One polyline of a plot.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Plain SVG in a fixed 800x600 view box. With `log_x`, x is plotted as log10(x).
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| 70.0 + 690.0 * (x - x0) / (x1 - x0);
    let py = |y: f64| 540.0 - 490.0 * (y - y0) / (y1 - y0);
    let mut s = String::new();
    s.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\" width=\"800\" height=\"600\">\n");
    s.push_str("<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n");
    let _ = writeln!(s, "<text x=\"400\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{}</text>", esc(title));
    s.push_str("<polyline points=\"70,50 70,540 760,540\" fill=\"none\" stroke=\"black\"/>\n");
    let xl = if log_x { format!("log10 {x_label}") } else { x_label.to_string() };
    let _ = writeln!(s, "<text x=\"415\" y=\"585\" text-anchor=\"middle\" font-size=\"13\">{}</text>", esc(&xl));
    let _ = writeln!(s, "<text x=\"18\" y=\"295\" font-size=\"13\" transform=\"rotate(-90 18 295)\">{}</text>", esc(y_label));
    let _ = writeln!(s, "<text x=\"70\" y=\"558\" font-size=\"11\">{x0:.4e}</text>");
    let _ = writeln!(s, "<text x=\"760\" y=\"558\" text-anchor=\"end\" font-size=\"11\">{x1:.4e}</text>");
    let _ = writeln!(s, "<text x=\"66\" y=\"540\" text-anchor=\"end\" font-size=\"11\">{y0:.4e}</text>");
    let _ = writeln!(s, "<text x=\"66\" y=\"54\" text-anchor=\"end\" font-size=\"11\">{y1:.4e}</text>");
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut p = String::new();
        for &(x, y) in &ser.points {
            let x = tx(x);
            if x.is_finite() && y.is_finite() {
                let _ = write!(p, "{:.2},{:.2} ", px(x), py(y));
            }
        }
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", p.trim_end());
        let _ = writeln!(
            s,
            "<text x=\"740\" y=\"{}\" text-anchor=\"end\" font-size=\"12\" fill=\"{color}\">{}</text>",
            70 + 16 * k,
            esc(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
