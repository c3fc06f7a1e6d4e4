//! Minimal line-plot SVG writer.
//!
//! Every plotted element carries `data-source`/`data-column` (or `data-value`)
//! attributes naming the CSV it came from, so a plot can be checked against
//! its sibling data file.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 52.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// CSV column holding the y values.
    pub column: String,
    /// Value of the CSV key column selecting this series' rows in long-format data.
    pub key: Option<String>,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VLine {
    pub label: String,
    pub x: f64,
    /// The value exactly as written in the CSV.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
    pub source: String,
    pub series: Vec<Series>,
    pub vline_source: String,
    pub vlines: Vec<VLine>,
    pub y_range: Option<(f64, f64)>,
    /// Draw the diagonal `y = x` (ROC chance line).
    pub diagonal: bool,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str, source: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            width: 760.0,
            height: 440.0,
            source: source.into(),
            series: Vec::new(),
            vline_source: String::new(),
            vlines: Vec::new(),
            y_range: None,
            diagonal: false,
        }
    }

    fn x_range(&self) -> (f64, f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.vlines.iter().map(|v| v.x));
        span(xs)
    }

    fn y_span(&self) -> (f64, f64) {
        self.y_range
            .unwrap_or_else(|| span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1))))
    }

    pub fn to_svg(&self) -> String {
        let (w, h) = (self.width, self.height);
        let (pw, ph) = (w - MARGIN_LEFT - MARGIN_RIGHT, h - MARGIN_TOP - MARGIN_BOTTOM);
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_span();
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            esc(&self.title)
        );

        // axes and ticks
        let _ = writeln!(
            s,
            r#"<path d="M{l:.1},{t:.1} V{b:.1} H{r:.1}" fill="none" stroke="black"/>"#,
            l = MARGIN_LEFT,
            t = MARGIN_TOP,
            b = MARGIN_TOP + ph,
            r = MARGIN_LEFT + pw
        );
        for v in ticks(x0, x1) {
            let x = sx(v);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                MARGIN_TOP + ph,
                MARGIN_TOP + ph + 5.0,
                MARGIN_TOP + ph + 18.0,
                tick_label(v)
            );
        }
        for v in ticks(y0, y1) {
            let y = sy(v);
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                MARGIN_LEFT,
                MARGIN_LEFT + pw,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                tick_label(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            h - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            esc(&self.y_label)
        );

        if self.diagonal {
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999999" stroke-dasharray="4 4"/>"##,
                sx(x0.max(y0)),
                sy(x0.max(y0)),
                sx(x1.min(y1)),
                sy(x1.min(y1))
            );
        }

        for (i, v) in self.vlines.iter().enumerate() {
            let x = sx(v.x);
            let _ = writeln!(
                s,
                r##"<line class="threshold" data-source="{}" data-value="{}" x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#555555" stroke-dasharray="6 3"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"##,
                esc(&self.vline_source),
                esc(&v.raw),
                MARGIN_TOP,
                MARGIN_TOP + ph,
                x + 3.0,
                MARGIN_TOP + 12.0 + 12.0 * (i % 2) as f64,
                esc(&v.label)
            );
        }

        for (i, ser) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let key = ser.key.as_ref().map(|k| format!(r#" data-key="{}""#, esc(k))).unwrap_or_default();
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-source="{}" data-column="{}"{key} fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
                esc(&self.source),
                esc(&ser.column),
                pts.join(" ")
            );
            let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
            let lx = MARGIN_LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 18.0,
                lx + 24.0,
                ly + 4.0,
                esc(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Roughly five ticks at 1/2/5 multiples of a power of ten.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + 1e-9 * step {
        out.push(if v.abs() < 1e-12 * step { 0.0 } else { v });
        v += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        let labels: Vec<String> = ticks(0.0, 1.0).into_iter().map(tick_label).collect();
        assert_eq!(labels, ["0", "0.2", "0.4", "0.6", "0.8", "1"]);
        assert_eq!(ticks(0.0, 16.0), vec![0.0, 5.0, 10.0, 15.0]);
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(10.0), "10");
    }

    #[test]
    fn emits_one_polyline_per_series() {
        let mut p = LinePlot::new("a < b", "t", "share", "x.csv");
        p.series.push(Series {
            label: "c0".into(),
            column: "cluster_0".into(),
            key: None,
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        });
        p.vlines.push(VLine {
            label: "t1".into(),
            x: 0.5,
            raw: "5.0e-1".into(),
        });
        let svg = p.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains(r#"data-value="5.0e-1""#));
    }
}
