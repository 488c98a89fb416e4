//! Dependency-free SVG scatter plots.
//!
//! Every data point is emitted as exactly one `<circle>`; no other element
//! uses `<circle>`, so point counts can be checked by parsing the output.
//! The plot area is a nested `<svg>` whose `viewBox` is the padded data
//! range `xmin ymin width height`.

use std::fmt::Write;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PAD_FRACTION: f64 = 0.05;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Optional per-point text labels, one per point.
    pub labels: Option<Vec<String>>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ScatterPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Axis range: data min/max widened by 5% of the span on each side.
pub fn padded_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    let span = hi - lo;
    if span == 0.0 {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * PAD_FRACTION };
        return Some((lo - pad, hi + pad));
    }
    Some((lo - span * PAD_FRACTION, hi + span * PAD_FRACTION))
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

impl ScatterPlot {
    pub fn point_count(&self) -> usize {
        self.series.iter().map(|s| s.points.len()).sum()
    }

    pub fn render(&self) -> Result<String> {
        for s in &self.series {
            if let Some(labels) = &s.labels {
                if labels.len() != s.points.len() {
                    return Err(Error::InvalidArgument(format!(
                        "series {:?}: {} labels for {} points",
                        s.name,
                        labels.len(),
                        s.points.len()
                    )));
                }
            }
            if s.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::InvalidArgument(format!("series {:?} has non-finite points", s.name)));
            }
        }
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = padded_range(all().map(|p| p.0))
            .ok_or_else(|| Error::InvalidArgument("nothing to plot".into()))?;
        let (y0, y1) = padded_range(all().map(|p| p.1)).unwrap();

        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            w,
            r#"<svg class="plot-area" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" viewBox="{x0} {y0} {} {}" preserveAspectRatio="none">"#,
            x1 - x0,
            y1 - y0
        );
        let _ = writeln!(
            w,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="#fafafa"/>"##,
            x1 - x0,
            y1 - y0
        );
        let _ = writeln!(w, "</svg>");
        let _ = writeln!(
            w,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (tx, ty) = (px(xv), py(yv));
            let _ = writeln!(
                w,
                r#"<line x1="{tx:.2}" y1="{:.2}" x2="{tx:.2}" y2="{:.2}" stroke="black"/><text x="{tx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0,
                tick(xv)
            );
            let _ = writeln!(
                w,
                r#"<line x1="{:.2}" y1="{ty:.2}" x2="{LEFT}" y2="{ty:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
                LEFT - 5.0,
                LEFT - 8.0,
                ty + 4.0,
                tick(yv)
            );
        }

        for (si, series) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let r = series.radius.unwrap_or(3.0);
            let _ = writeln!(w, r#"<g class="series" data-name="{}" fill="{color}" fill-opacity="0.7">"#, escape(&series.name));
            for (pi, &(x, y)) in series.points.iter().enumerate() {
                let _ = writeln!(w, r#"<circle cx="{:.3}" cy="{:.3}" r="{r}"/>"#, px(x), py(y));
                if let Some(labels) = &series.labels {
                    let _ = writeln!(
                        w,
                        r#"<text x="{:.3}" y="{:.3}" font-size="10" fill="black">{}</text>"#,
                        px(x) + r + 2.0,
                        py(y) - r,
                        escape(&labels[pi])
                    );
                }
            }
            let _ = writeln!(w, "</g>");
            let ly = TOP + 4.0 + 14.0 * si as f64;
            let _ = writeln!(
                w,
                r#"<rect x="{:.2}" y="{ly:.2}" width="8" height="8" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                WIDTH - RIGHT - 120.0,
                WIDTH - RIGHT - 108.0,
                ly + 8.0,
                escape(&series.name)
            );
        }

        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            w,
            r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(w, "</svg>");
        Ok(s)
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
