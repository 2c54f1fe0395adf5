//! Two-panel SVG of emotion accuracy and loss per epoch, train and
//! validation series in each panel.

use std::fmt::Write;

use crate::{CliError, CliResult};

pub const REQUIRED_COLUMNS: [&str; 5] = [
    "epoch",
    "train_acc_emotion",
    "val_acc_emotion",
    "train_loss_emotion",
    "val_loss_emotion",
];

/// Emotion curves read from a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub epochs: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl Curves {
    /// Requires the header to name every column in [`REQUIRED_COLUMNS`] and
    /// at least one data row.
    pub fn parse(text: &str) -> CliResult<Curves> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| CliError::usage(format!("unreadable metrics header: {e}")))?
            .clone();
        if headers.is_empty() {
            return Err(CliError::usage("metrics file is empty"));
        }
        let mut index = [0; 5];
        for (slot, name) in index.iter_mut().zip(REQUIRED_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CliError::usage(format!("metrics file has no '{name}' column")))?;
        }
        let mut columns: [Vec<f64>; 5] = Default::default();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| CliError::usage(format!("metrics row {row}: {e}")))?;
            for ((col, &at), name) in columns.iter_mut().zip(&index).zip(REQUIRED_COLUMNS) {
                let v = record
                    .get(at)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::usage(format!("metrics row {row}: '{name}' is not a number")))?;
                col.push(v);
            }
        }
        if columns[0].is_empty() {
            return Err(CliError::usage("metrics file has no epoch rows"));
        }
        let [epochs, train_acc, val_acc, train_loss, val_loss] = columns;
        Ok(Curves {
            epochs,
            train_acc,
            val_acc,
            train_loss,
            val_loss,
        })
    }
}

const WIDTH: f64 = 920.0;
const HEIGHT: f64 = 380.0;
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const TOP: f64 = 60.0;
const LEFTS: [f64; 2] = [80.0, 540.0];
const TICKS: usize = 5;
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#ff7f0e";

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    /// Widens a degenerate range so a single value sits mid-axis.
    fn new(lo: f64, hi: f64) -> Axis {
        if hi > lo {
            Axis { lo, hi }
        } else {
            Axis { lo: lo - 0.5, hi: hi + 0.5 }
        }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

struct Panel<'a> {
    left: f64,
    title: &'a str,
    y_label: &'a str,
    y: Axis,
    train: &'a [f64],
    val: &'a [f64],
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn draw_panel(svg: &mut String, p: &Panel, epochs: &[f64], x: &Axis) {
    let bottom = TOP + PANEL_H;
    let px = |v: f64| p.left + x.frac(v) * PANEL_W;
    let py = |v: f64| bottom - p.y.frac(v) * PANEL_H;
    let _ = writeln!(svg, r#"<g class="panel">"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="15" font-weight="bold">{}</text>"#,
        p.left + PANEL_W / 2.0,
        TOP - 24.0,
        p.title
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{:.2}" y="{TOP:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#cccccc"/>"##,
        p.left
    );
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let yv = p.y.lo + t * (p.y.hi - p.y.lo);
        let yy = py(yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#eeeeee"/>"##,
            p.left,
            p.left + PANEL_W
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
            p.left - 6.0,
            yy + 4.0,
            fmt_tick(yv)
        );
        let xv = x.lo + t * (x.hi - x.lo);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            px(xv),
            bottom + 16.0,
            fmt_tick(xv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">epoch</text>"#,
        p.left + PANEL_W / 2.0,
        bottom + 36.0
    );
    let (lx, ly) = (p.left - 48.0, TOP + PANEL_H / 2.0);
    let _ = writeln!(
        svg,
        r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
        p.y_label
    );
    for (series, color, name) in [(p.train, TRAIN_COLOR, "train"), (p.val, VAL_COLOR, "validation")] {
        let points: Vec<String> = epochs
            .iter()
            .zip(series)
            .map(|(&e, &v)| format!("{:.2},{:.2}", px(e), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for (&e, &v) in epochs.iter().zip(series) {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(e), py(v));
        }
    }
    let legend_y = TOP + 14.0;
    for (i, (color, name)) in [(TRAIN_COLOR, "train"), (VAL_COLOR, "validation")].into_iter().enumerate() {
        let x0 = p.left + PANEL_W - 110.0;
        let yy = legend_y + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{x0:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="{color}" stroke-width="2"/>"#,
            x0 + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{name}</text>"#,
            x0 + 26.0,
            yy + 4.0
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// Renders both panels. Accuracy is drawn on [0, 1]; loss from 0 to the
/// largest observed value.
pub fn render(c: &Curves) -> String {
    let lo = c.epochs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.epochs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x = Axis::new(lo, hi);
    let max_loss = c.train_loss.iter().chain(&c.val_loss).copied().fold(0.0, f64::max);
    let loss_hi = if max_loss > 0.0 { max_loss * 1.05 } else { 1.0 };
    let panels = [
        Panel {
            left: LEFTS[0],
            title: "Emotion accuracy",
            y_label: "accuracy",
            y: Axis::new(0.0, 1.0),
            train: &c.train_acc,
            val: &c.val_acc,
        },
        Panel {
            left: LEFTS[1],
            title: "Emotion loss",
            y_label: "loss",
            y: Axis::new(0.0, loss_hi),
            train: &c.train_loss,
            val: &c.val_loss,
        },
    ];
    let mut svg = format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">
<rect width="100%" height="100%" fill="white"/>
"#
    );
    for p in &panels {
        draw_panel(&mut svg, p, &c.epochs, &x);
    }
    svg.push_str("</svg>\n");
    svg
}
