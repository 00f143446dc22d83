//! Plain SVG emission for line and scatter charts.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

struct Frame {
    x: Range,
    y: Range,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str, comment: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<!-- {} -->", comment.replace("--", "- -"));
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[(f64, String)], x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(out, "</g>");
    for (v, label) in x_ticks {
        let x = f.px(*v);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, escape(label));
    }
    for v in f.y.ticks(5) {
        let y = f.py(v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, tick_label(v));
    }
    let _ = writeln!(out, r#"<text class="x-label" x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text class="y-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Legend entry: label, colour and marker (`true` for a line swatch).
pub struct LegendItem {
    pub label: String,
    pub color: String,
    pub line: bool,
    pub radius: f64,
    pub outline: bool,
}

fn legend(out: &mut String, items: &[LegendItem]) {
    let x = WIDTH - RIGHT + 15.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (i, it) in items.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        if it.line {
            let _ = writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/>"#, x + 20.0, it.color);
        } else {
            let stroke = if it.outline { r#" stroke="black" stroke-width="0.8""# } else { "" };
            let _ = writeln!(out, r#"<circle cx="{}" cy="{y}" r="{}" fill="{}"{stroke}/>"#, x + 10.0, it.radius, it.color);
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 28.0, y + 4.0, escape(&it.label));
    }
    let _ = writeln!(out, "</g>");
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional symmetric error bar per point.
    pub errors: Vec<f64>,
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Tick positions and their labels.
    pub x_ticks: Vec<(f64, String)>,
    pub series: Vec<Series>,
    pub comment: String,
}

impl LineChart {
    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.x_ticks.iter().map(|t| t.0));
        let ys = self.series.iter().flat_map(|s| {
            s.points.iter().enumerate().flat_map(move |(i, p)| {
                let e = s.errors.get(i).copied().unwrap_or(0.0);
                [p.1 - e, p.1 + e]
            })
        });
        let f = Frame { x: Range::of(xs), y: Range::of(ys) };
        let mut out = String::new();
        open(&mut out, &self.title, &self.comment);
        axes(&mut out, &f, &self.x_ticks, &self.x_label, &self.y_label);
        for (k, s) in self.series.iter().enumerate() {
            let c = color(k);
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
            let _ = writeln!(out, r#"<g class="series" data-label="{}">"#, escape(&s.label));
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, pts.join(" "));
            for (i, &(x, y)) in s.points.iter().enumerate() {
                if let Some(&e) = s.errors.get(i).filter(|e| **e > 0.0) {
                    let _ = writeln!(
                        out,
                        r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/>"#,
                        f.py(y - e),
                        f.py(y + e),
                        x = f.px(x)
                    );
                }
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, f.px(x), f.py(y));
            }
            let _ = writeln!(out, "</g>");
        }
        let items: Vec<LegendItem> = self
            .series
            .iter()
            .enumerate()
            .map(|(k, s)| LegendItem { label: s.label.clone(), color: color(k).into(), line: true, radius: 0.0, outline: false })
            .collect();
        legend(&mut out, &items);
        out.push_str("</svg>\n");
        out
    }
}

pub struct PointGroup {
    pub label: String,
    pub color: String,
    pub radius: f64,
    pub opacity: f64,
    pub outline: bool,
    pub points: Vec<(f64, f64)>,
}

pub struct ScatterChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub groups: Vec<PointGroup>,
    /// Extra legend rows, e.g. marker meanings.
    pub notes: Vec<LegendItem>,
    pub comment: String,
}

impl ScatterChart {
    pub fn render(&self) -> String {
        let pts = || self.groups.iter().flat_map(|g| g.points.iter());
        let f = Frame { x: Range::of(pts().map(|p| p.0)), y: Range::of(pts().map(|p| p.1)) };
        let x_ticks: Vec<(f64, String)> = f.x.ticks(5).into_iter().map(|v| (v, tick_label(v))).collect();
        let mut out = String::new();
        open(&mut out, &self.title, &self.comment);
        axes(&mut out, &f, &x_ticks, &self.x_label, &self.y_label);
        for g in &self.groups {
            let stroke = if g.outline { r#" stroke="black" stroke-width="0.8""# } else { "" };
            let _ = writeln!(out, r#"<g class="points" data-label="{}" fill="{}" fill-opacity="{}"{stroke}>"#, escape(&g.label), g.color, g.opacity);
            for &(x, y) in &g.points {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{}"/>"#, f.px(x), f.py(y), g.radius);
            }
            let _ = writeln!(out, "</g>");
        }
        legend(&mut out, &self.notes);
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_maps_extremes_inside_frame() {
        let chart = LineChart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_ticks: vec![(0.0, "0".into()), (1.0, "1".into())],
            series: vec![Series { label: "s".into(), points: vec![(0.0, 0.0), (1.0, 1.0)], errors: vec![] }],
            comment: "c".into(),
        };
        let svg = chart.render();
        assert!(svg.contains("a &lt; b"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn constant_data_gets_a_nonempty_range() {
        let r = Range::of([2.0, 2.0].into_iter());
        assert!(r.hi > r.lo);
        let r = Range::of(std::iter::empty());
        assert_eq!((r.lo, r.hi), (0.0, 1.0));
    }
}
