//! Result files: CSV with a `#` metadata header, JSON, and plain SVG line
//! plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{Column, SweepResult};
use crate::comms::BerPoint;
use crate::error::{Error, Result};
use crate::ode::TimeSeries;
use crate::params::Bundle;

/// A table ready to be written: metadata lines, unit-labelled columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Self {
        Table {
            meta: Vec::new(),
            columns,
        }
    }

    pub fn with_bundle(mut self, b: &Bundle) -> Self {
        self.meta
            .extend(b.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        self
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let labels: Vec<String> = self.columns.iter().map(Column::label).collect();
        let _ = writeln!(s, "{}", labels.join(","));
        for r in 0..self.rows() {
            let row: Vec<String> = self.columns.iter().map(|c| fmt_f64(c.values[r])).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Scientific notation, exact round trip; `inf`/`-inf`/`nan` spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:e}")
    }
}

pub fn sweep_table(r: &SweepResult) -> Table {
    let mut cols = vec![r.axis.clone()];
    cols.extend(r.columns.iter().cloned());
    let mut t = Table::new(cols);
    for (k, v) in &r.summary {
        t = t.meta(&format!("result.{k}"), fmt_f64(*v));
    }
    t
}

pub fn timeseries_table(ts: &TimeSeries) -> Table {
    Table::new(vec![
        Column::new("t", "s", ts.t.clone()),
        Column::new("v1", "per_m3", ts.v1.clone()),
        Column::new("v2", "per_m3", ts.v2.clone()),
        Column::new("p_out", "w", ts.p_out.clone()),
        Column::new("drive", "w", ts.drive.clone()),
    ])
    .meta("result.error_estimate_v1", fmt_f64(ts.error_estimate[0]))
    .meta("result.error_estimate_v2", fmt_f64(ts.error_estimate[1]))
    .meta("result.steps_accepted", ts.stats.accepted)
    .meta("result.steps_rejected", ts.stats.rejected)
}

/// BER table with the fixed column names `snr_db,rate,n_bits,errors,ber,ci95`.
pub fn ber_csv(points: &[BerPoint], meta: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in meta {
        let _ = writeln!(s, "# {k} = {v}");
    }
    let _ = writeln!(
        s,
        "# units: snr_db dB, rate bit/s, n_bits count, errors count, ber ratio, ci95 ratio (95% half-width)"
    );
    let _ = writeln!(s, "snr_db,rate,n_bits,errors,ber,ci95");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(p.snr_db),
            fmt_f64(p.rate),
            p.n_bits,
            p.errors,
            fmt_f64(p.ber),
            fmt_f64(p.ci95)
        );
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize {}: {e}", path.display())))?;
    write_text(path, &(text + "\n"))
}

pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Self-contained SVG line plot. Non-finite points are skipped; `log_x`
/// and `log_y` use base-10 axes.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[PlotSeries], log_x: bool, log_y: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 20.0, 30.0, 50.0);
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    // At most ~2000 vertices per polyline.
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            let stride = s.x.len().div_ceil(2000).max(1);
            s.x.iter()
                .zip(s.y)
                .step_by(stride)
                .map(|(x, y)| (tx(*x), ty(*y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ml + w - mr) / 2.0,
        h - 10.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        esc(y_label)
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(fx),
            h - mb + 15.0,
            tick(fx, log_x)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 4.0,
            py(fy) + 4.0,
            tick(fy, log_y)
        );
    }
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            ml + 8.0,
            mt + 14.0 + 14.0 * i as f64,
            esc(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
