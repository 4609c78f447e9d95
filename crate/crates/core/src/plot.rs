//! Self-contained SVG line plots with a logarithmic y axis, standard-error
//! bands and a legend.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::traces::AggregatePoint;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, mean, standard error)`, sorted by `x`.
    pub points: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn from_aggregate(label: impl Into<String>, points: &[AggregatePoint], dashed: bool) -> Self {
        Series { label: label.into(), points: points.iter().map(|p| (p.x, p.y.mean, p.y.se)).collect(), dashed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Scale {
    x0: f64,
    x1: f64,
    ly0: f64,
    ly1: f64,
}

impl Scale {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let ly = y.max(10f64.powf(self.ly0)).log10();
        HEIGHT - BOTTOM - (ly - self.ly0) / (self.ly1 - self.ly0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn fit(fig: &Figure) -> Result<Scale> {
    let pts = || fig.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !x0.is_finite() {
        return Err(Error::config("nothing to plot"));
    }
    if x1 <= x0 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    let positive = pts().flat_map(|p| [p.1 - p.2, p.1, p.1 + p.2]).filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut ly0, mut ly1) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil()) } else { (-1.0, 1.0) };
    if ly1 <= ly0 {
        (ly0, ly1) = (ly0 - 1.0, ly1 + 1.0);
    }
    Ok(Scale { x0, x1, ly0, ly1 })
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

/// Renders the figure. Non-positive values are drawn on the bottom edge.
pub fn render_svg(fig: &Figure) -> Result<String> {
    let sc = fit(fig)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(&fig.title));
    let (bx0, bx1, by0, by1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(s, r#"<line x1="{bx0}" y1="{by1}" x2="{bx1}" y2="{by1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{bx0}" y1="{by0}" x2="{bx0}" y2="{by1}" stroke="black"/>"#);
    for k in 0..=4 {
        let x = sc.x0 + (sc.x1 - sc.x0) * k as f64 / 4.0;
        let px = sc.px(x);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{by1}" x2="{px:.2}" y2="{}" stroke="black"/>"#, by1 + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, by1 + 20.0, tick_label(x));
    }
    let decades = (sc.ly1 - sc.ly0).round() as i64;
    let stride = (decades / 8 + 1).max(1);
    for d in (0..=decades).step_by(stride as usize) {
        let e = sc.ly0 as i64 + d;
        let py = sc.py(10f64.powi(e as i32));
        let _ = writeln!(s, r##"<line x1="{bx0}" y1="{py:.2}" x2="{bx1}" y2="{py:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, bx0 - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (bx0 + bx1) / 2.0, HEIGHT - 15.0, escape(&fig.x_label));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (by0 + by1) / 2.0,
        escape(&fig.y_label)
    );
    for (i, series) in fig.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if series.points.iter().any(|p| p.2 > 0.0) {
            let upper = series.points.iter().map(|p| (sc.px(p.0), sc.py(p.1 + p.2)));
            let lower = series.points.iter().rev().map(|p| (sc.px(p.0), sc.py(p.1 - p.2)));
            let mut d = String::new();
            for (k, (x, y)) in upper.chain(lower).enumerate() {
                let _ = write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
            }
            let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
        }
        let pts: Vec<String> = series.points.iter().map(|p| format!("{:.2},{:.2}", sc.px(p.0), sc.py(p.1))).collect();
        let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#, pts.join(" "));
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 25.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 32.0, ly + 4.0, escape(&series.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
