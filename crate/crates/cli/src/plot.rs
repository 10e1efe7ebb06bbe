//! Minimal SVG emission: time-space diagrams and speed envelopes. Every
//! figure's data also exists as CSV; these are quick-look renderings.

use std::fmt::Write;

const W: f64 = 960.0;
const H: f64 = 540.0;
const MARGIN: f64 = 50.0;

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min).max(1e-12) * (W - 2.0 * MARGIN)
    }
    fn sy(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min).max(1e-12) * (H - 2.0 * MARGIN)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str, axes: &Axes) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="20" font-size="15" text-anchor="middle" font-family="sans-serif">{title}</text>"#,
        W / 2.0
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">{xlabel}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = write!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = write!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black" stroke-width="1"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    // corner tick labels
    let _ = write!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-size="10" font-family="sans-serif">{:.1}</text>"#,
        H - MARGIN + 14.0,
        axes.x_min
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{:.1}</text>"#,
        W - MARGIN,
        H - MARGIN + 14.0,
        axes.x_max
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{:.1}</text>"#,
        MARGIN - 4.0,
        H - MARGIN,
        axes.y_min
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{:.1}</text>"#,
        MARGIN - 4.0,
        MARGIN + 10.0,
        axes.y_max
    );
    s
}

/// Speed-colored scatter: blue (slow) through red (fast).
fn speed_color(v: f64, v_min: f64, v_max: f64) -> String {
    let f = ((v - v_min) / (v_max - v_min).max(1e-9)).clamp(0.0, 1.0);
    let r = (255.0 * f) as u8;
    let b = (255.0 * (1.0 - f)) as u8;
    let g = (96.0 * (1.0 - (2.0 * f - 1.0).abs())) as u8;
    format!("rgb({r},{g},{b})")
}

/// Time-space diagram of many vehicles, colored by speed. Points are
/// subsampled toward a budget so files stay reasonable.
pub fn time_space_svg(dt: f64, xs: &[Vec<f64>], vs: &[Vec<f64>], wrap: Option<f64>, title: &str) -> String {
    let steps = xs.first().map_or(0, |x| x.len());
    let total = xs.len() * steps;
    let stride = (total / 60_000).max(1);
    let t_max = steps as f64 * dt;
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut v_min, mut v_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x_series, v_series) in xs.iter().zip(vs) {
        for (x, v) in x_series.iter().zip(v_series) {
            let pos = wrap.map_or(*x, |c| x.rem_euclid(c));
            y_min = y_min.min(pos);
            y_max = y_max.max(pos);
            v_min = v_min.min(*v);
            v_max = v_max.max(*v);
        }
    }
    let axes = Axes { x_min: 0.0, x_max: t_max, y_min, y_max };
    let mut s = header(title, "time [s]", "position [m]", &axes);
    for (x_series, v_series) in xs.iter().zip(vs) {
        for t in (0..steps).step_by(stride) {
            let pos = wrap.map_or(x_series[t], |c| x_series[t].rem_euclid(c));
            let _ = write!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="1" fill="{}"/>"#,
                axes.sx(t as f64 * dt),
                axes.sy(pos),
                speed_color(v_series[t], v_min, v_max)
            );
        }
    }
    s.push_str("</svg>");
    s
}

/// Envelope plot: shaded quantile band, median, mean, and optionally truth.
pub fn envelope_svg(
    dt: f64,
    mean: &[f64],
    lo: &[f64],
    hi: &[f64],
    median: &[f64],
    truth: Option<&[f64]>,
    title: &str,
    ylabel: &str,
) -> String {
    let steps = mean.len();
    let t_max = steps as f64 * dt;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for series in [Some(lo), Some(hi), truth].into_iter().flatten() {
        for v in series {
            y_min = y_min.min(*v);
            y_max = y_max.max(*v);
        }
    }
    let pad = 0.05 * (y_max - y_min).max(1e-9);
    let axes = Axes { x_min: 0.0, x_max: t_max, y_min: y_min - pad, y_max: y_max + pad };
    let mut s = header(title, "time [s]", ylabel, &axes);

    let mut band = String::from("M");
    for (t, v) in lo.iter().enumerate() {
        let _ = write!(band, "{:.1},{:.1} ", axes.sx(t as f64 * dt), axes.sy(*v));
    }
    for (t, v) in hi.iter().enumerate().rev() {
        let _ = write!(band, "{:.1},{:.1} ", axes.sx(t as f64 * dt), axes.sy(*v));
    }
    let _ = write!(s, r#"<path d="{band}Z" fill="rgb(120,160,255)" fill-opacity="0.35" stroke="none"/>"#);

    let polyline = |series: &[f64], color: &str, dash: &str| -> String {
        let mut pts = String::new();
        for (t, v) in series.iter().enumerate() {
            let _ = write!(pts, "{:.1},{:.1} ", axes.sx(t as f64 * dt), axes.sy(*v));
        }
        format!(
            r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.4"{dash}/>"#
        )
    };
    s.push_str(&polyline(median, "rgb(30,60,200)", ""));
    s.push_str(&polyline(mean, "rgb(200,60,30)", r#" stroke-dasharray="6 3""#));
    if let Some(tr) = truth {
        s.push_str(&polyline(tr, "black", ""));
    }
    s.push_str("</svg>");
    s
}
