//! Minimal static SVG figures: axes, lines, shaded bands, histograms.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One curve with a pointwise band.
#[derive(Debug, Clone)]
pub struct BandSeries {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(comment: &str, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, "<!-- {} -->", comment.replace("--", "- -"));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    s
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let (xv, yv) = (f.x0 + u * (f.x1 - f.x0), f.y0 + u * (f.y1 - f.y0));
        let (xp, yp) = (f.px(xv), f.py(yv));
        let _ = writeln!(s, r#"<line x1="{xp:.2}" y1="{b}" x2="{xp:.2}" y2="{:.2}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(s, r#"<text x="{xp:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:.3}</text>"#, b + 18.0);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{yp:.2}" x2="{l}" y2="{yp:.2}" stroke="black"/>"#, l - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.3}</text>"#, l - 8.0, yp + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

/// Curves with shaded bands sharing one pair of axes.
pub fn band_plot(comment: &str, title: &str, x_label: &str, y_label: &str, series: &[BandSeries]) -> String {
    let xs = series.iter().flat_map(|s| s.x.iter().copied());
    let ys = series.iter().flat_map(|s| s.lower.iter().chain(&s.upper).chain(&s.mean).copied());
    let f = Frame::new(xs, ys);
    let mut s = open(comment, title);
    axes(&mut s, &f, x_label, y_label);
    for (k, ser) in series.iter().enumerate() {
        if ser.x.is_empty() {
            continue;
        }
        let color = COLORS[k % COLORS.len()];
        let mut band = String::new();
        for (x, u) in ser.x.iter().zip(&ser.upper) {
            let _ = write!(band, "{}{:.2},{:.2} ", if band.is_empty() { "M" } else { "L" }, f.px(*x), f.py(*u));
        }
        for (x, l) in ser.x.iter().zip(&ser.lower).rev() {
            let _ = write!(band, "L{:.2},{:.2} ", f.px(*x), f.py(*l));
        }
        let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band);
        let line: Vec<String> = ser.x.iter().zip(&ser.mean).map(|(x, m)| format!("{:.2},{:.2}", f.px(*x), f.py(*m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            MARGIN + 16.0 * (k as f64 + 1.0),
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Histogram of `values` with `bins` equal-width bins.
pub fn histogram(comment: &str, title: &str, x_label: &str, values: &[f64], bins: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = bounds(finite.iter().copied());
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame { x0: lo, x1: hi, y0: 0.0, y1: top };
    let mut s = open(comment, title);
    axes(&mut s, &f, x_label, "count");
    let w = (hi - lo) / bins as f64;
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (xa, xb) = (f.px(lo + b as f64 * w), f.px(lo + (b + 1) as f64 * w));
        let (ya, yb) = (f.py(c as f64), f.py(0.0));
        let _ = writeln!(
            s,
            r##"<rect x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" fill-opacity="0.7" stroke="white"/>"##,
            xb - xa,
            yb - ya
        );
    }
    s.push_str("</svg>\n");
    s
}
