//! Static SVG figures: line charts and bar charts with linear or log axes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional `(lower, upper)` per point, drawn as vertical bars.
    pub intervals: Option<Vec<(f64, f64)>>,
    pub dashed: bool,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, intervals: None, dashed: false }
    }

    pub fn with_intervals(mut self, iv: Vec<(f64, f64)>) -> Self {
        self.intervals = Some(iv);
        self
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { 0.1 * lo.abs() } else { 0.5 };
            (lo, hi) = (lo - pad, hi + pad);
        }
        Self { lo, hi, log }
    }

    fn include_zero(mut self) -> Self {
        if !self.log {
            self.lo = self.lo.min(0.0);
            self.hi = self.hi.max(0.0);
        }
        self
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.max(f64::MIN_POSITIVE).log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0)
            .map(|v| if self.log { 10f64.powf(v) } else { v })
            .collect()
    }
}

fn px(ax: &Axis, v: f64) -> f64 {
    LEFT + ax.frac(v) * (W - LEFT - RIGHT)
}

fn py(ay: &Axis, v: f64) -> f64 {
    H - BOTTOM - ay.frac(v) * (H - TOP - BOTTOM)
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, chart: &Chart, ax: &Axis, ay: &Axis) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(&chart.title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for t in ax.ticks() {
        let x = px(ax, t);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 18.0, label(t));
    }
    for t in ay.ticks() {
        let y = py(ay, t);
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, label(t));
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&chart.y_label)
    );
}

fn legend(out: &mut String, labels: &[(String, &str, bool)]) {
    for (i, (name, color, dashed)) in labels.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let x = W - RIGHT - 190.0;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x + 20.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(name));
    }
}

/// A line chart; points with non-finite or (on a log axis) non-positive
/// coordinates are skipped.
pub fn line_chart(chart: &Chart, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1).chain(s.intervals.iter().flatten().flat_map(|iv| [iv.0, iv.1])));
    let ax = Axis::fit(xs, chart.log_x);
    let ay = Axis::fit(ys, false).include_zero();
    let mut out = String::new();
    frame(&mut out, chart, &ax, &ay);
    let mut labels = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!chart.log_x || p.0 > 0.0))
            .collect();
        let path: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, p)| format!("{}{:.2} {:.2}", if j == 0 { "M" } else { "L" }, px(&ax, p.0), py(&ay, p.1)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#, path.join(" "));
        for p in &pts {
            let _ =
                writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(&ax, p.0), py(&ay, p.1));
        }
        if let Some(iv) = &s.intervals {
            for (p, (lo, hi)) in s.points.iter().zip(iv) {
                if p.0.is_finite() && lo.is_finite() && hi.is_finite() && (!chart.log_x || p.0 > 0.0) {
                    let x = px(&ax, p.0);
                    let _ = writeln!(
                        out,
                        r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                        py(&ay, *lo),
                        py(&ay, *hi)
                    );
                }
            }
        }
        labels.push((s.label.clone(), color, s.dashed));
    }
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// One bar per category, with an optional horizontal reference line.
pub fn bar_chart(chart: &Chart, bars: &[(String, f64)], reference: Option<(&str, f64)>) -> String {
    let ys = bars.iter().map(|b| b.1).chain(reference.map(|r| r.1));
    let ay = Axis::fit(ys, false).include_zero();
    let ax = Axis { lo: 0.0, hi: bars.len().max(1) as f64, log: false };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(&chart.title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for t in ay.ticks() {
        let y = py(&ay, t);
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, label(t));
    }
    let slot = (W - LEFT - RIGHT) / ax.hi;
    for (i, (name, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { *v } else { 0.0 };
        let x = LEFT + slot * (i as f64 + 0.2);
        let (top, base) = (py(&ay, v.max(0.0)), py(&ay, v.min(0.0)));
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            slot * 0.6,
            (base - top).max(0.5),
            COLORS[0]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.3,
            y0 + 18.0,
            escape(name)
        );
    }
    if let Some((name, v)) = reference {
        let y = py(&ay, v);
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="{}" stroke-dasharray="5,3"/>"#,
            COLORS[1]
        );
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x1, y - 4.0, escape(name));
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&chart.y_label)
    );
    out.push_str("</svg>\n");
    out
}
