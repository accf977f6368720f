use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Flag(bool),
}

impl Cell {
    /// 17 significant digits, so rows round-trip exactly.
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) if x.is_nan() => "nan".into(),
            Cell::Num(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => json!(x),
            Cell::Text(s) => json!(s),
            Cell::Flag(b) => json!(b),
        }
    }

    pub fn num(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Flag(b)
    }
}

/// `results.csv`, written row by row. Every row starts with the config
/// hash; each completed row is flushed so an interrupted run leaves a
/// readable prefix.
pub struct CsvSink {
    columns: &'static [&'static str],
    hash: String,
    out: BufWriter<File>,
    rows: Vec<Vec<Cell>>,
}

impl CsvSink {
    pub fn create(path: &Path, hash: &str, columns: &'static [&'static str]) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "config_hash,{}", columns.join(","))?;
        out.flush()?;
        Ok(CsvSink {
            columns,
            hash: hash.to_string(),
            out,
            rows: Vec::new(),
        })
    }

    pub fn push(&mut self, row: Vec<Cell>) -> io::Result<()> {
        assert_eq!(row.len(), self.columns.len(), "row width");
        let line: Vec<String> = row.iter().map(Cell::csv).collect();
        writeln!(self.out, "{},{}", self.hash, line.join(","))?;
        self.out.flush()?;
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Rows as JSON objects keyed by column name.
    pub fn json_rows(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let m: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(r)
                        .map(|(c, v)| (c.to_string(), v.json()))
                        .collect();
                    Value::Object(m)
                })
                .collect(),
        )
    }
}

pub struct Curve<'a> {
    pub label: &'a str,
    pub colour: &'a str,
    pub ys: Vec<f64>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A self-contained line chart. Both axes are logarithmic when every
/// plotted value is positive, linear otherwise.
pub fn line_chart(xs: &[f64], curves: &[Curve], x_label: &str, y_label: &str) -> String {
    let finite = |v: &f64| v.is_finite();
    let ys: Vec<f64> = curves.iter().flat_map(|c| c.ys.iter().copied()).filter(finite).collect();
    let xs_f: Vec<f64> = xs.iter().copied().filter(finite).collect();
    let log_x = !xs_f.is_empty() && xs_f.iter().all(|&x| x > 0.0);
    let log_y = !ys.is_empty() && ys.iter().all(|&y| y > 0.0);
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let (x0, x1) = span(xs_f.iter().map(|&x| tx(x)).collect());
    let (y0, y1) = span(ys.iter().map(|&y| ty(y)).collect());
    let pad = (y1 - y0) * 0.05;
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (ty(y) - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    // Ticks at the extremes of each axis, labelled in data units.
    let inv = |v: f64, log: bool| if log { 10f64.powf(v) } else { v };
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let x = LEFT + (v - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="{anchor}">{:.4}</text>"#,
            H - BOTTOM + 16.0,
            inv(v, log_x)
        );
    }
    for v in [y0, y1] {
        let y = H - BOTTOM - (v - y0) / (y1 - y0) * (H - TOP - BOTTOM);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{:.4}</text>"#,
            LEFT - 6.0,
            inv(v, log_y)
        );
    }
    let scale = |log: bool| if log { " (log scale)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 16.0,
        escape(x_label),
        scale(log_x)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label),
        scale(log_y)
    );
    for c in curves {
        let pts: Vec<String> = xs
            .iter()
            .zip(&c.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-label="{}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            escape(c.label),
            pts.join(" "),
            c.colour
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let y = TOP + 12.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/>"#,
            LEFT + 12.0,
            LEFT + 36.0,
            c.colour
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, LEFT + 42.0, y + 4.0, escape(c.label));
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_report(path: &Path, report: &Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text)
}

pub fn out_files(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join("results.csv"), dir.join("comparison.svg"), dir.join("report.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let x = 0.1f64 + 0.2;
        let s = Cell::Num(x).csv();
        assert_eq!(s, "3.0000000000000004e-1");
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn chart_is_self_contained() {
        let svg = line_chart(
            &[2.0, 4.0, 8.0],
            &[
                Curve { label: "a", colour: "black", ys: vec![0.3, 0.2, 0.1] },
                Curve { label: "b <c>", colour: "red", ys: vec![0.4, 0.3, 0.2] },
            ],
            "n",
            "gen",
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b &lt;c&gt;"));
        assert!(svg.contains("(log scale)"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn zero_values_fall_back_to_linear() {
        let svg = line_chart(
            &[1.0, 2.0],
            &[Curve { label: "z", colour: "black", ys: vec![0.0, 0.0] }],
            "sigma",
            "gen",
        );
        assert!(svg.contains(">gen</text>"));
        assert!(svg.contains(">sigma (log scale)</text>"));
    }
}
