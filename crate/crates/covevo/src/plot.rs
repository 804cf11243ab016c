//! Minimal static SVG line charts for the result plots.
//!
//! Output is a self-contained vector file with axes, ticks, point markers,
//! and a legend. Rendering is pure string assembly with no timestamps or
//! randomness, so identical inputs produce identical bytes.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f6f8b", "#d1495b", "#66a182", "#edae49", "#8d5a97", "#3d5a80", "#c97c5d", "#2f4b26",
];

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

/// Data range padded so flat or single-point series still get a visible
/// span.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Renders the series as one SVG document string.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let (x_lo, x_hi) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"##
    );
    let _ = write!(svg, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##);
    let _ = write!(
        svg,
        r##"<text x="{}" y="24" font-size="15" text-anchor="middle" fill="#222">{}</text>"##,
        WIDTH / 2.0,
        escape(title)
    );

    // Axes with five linear ticks each.
    let axis_y = MARGIN_TOP + plot_h;
    let _ = write!(
        svg,
        r##"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{axis_y}" stroke="#444"/>"##
    );
    let _ = write!(
        svg,
        r##"<line x1="{MARGIN_LEFT}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="#444"/>"##,
        MARGIN_LEFT + plot_w
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let xp = px(xv);
        let yp = py(yv);
        let _ = write!(
            svg,
            r##"<line x1="{xp}" y1="{axis_y}" x2="{xp}" y2="{}" stroke="#444"/>"##,
            axis_y + 4.0
        );
        let _ = write!(
            svg,
            r##"<text x="{xp}" y="{}" font-size="11" text-anchor="middle" fill="#333">{}</text>"##,
            axis_y + 18.0,
            fmt_num(xv)
        );
        let _ = write!(
            svg,
            r##"<line x1="{}" y1="{yp}" x2="{MARGIN_LEFT}" y2="{yp}" stroke="#444"/>"##,
            MARGIN_LEFT - 4.0
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-size="11" text-anchor="end" fill="#333">{}</text>"##,
            MARGIN_LEFT - 8.0,
            yp + 4.0,
            fmt_num(yv)
        );
    }
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" font-size="12" text-anchor="middle" fill="#222">{}</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = write!(
        svg,
        r##"<text x="16" y="{}" font-size="12" text-anchor="middle" fill="#222" transform="rotate(-90 16 {})">{}</text>"##,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if s.points.len() > 1 {
            let mut path = String::new();
            for (i, &(x, y)) in s.points.iter().enumerate() {
                let _ = write!(path, "{}{:.2},{:.2}", if i == 0 { "" } else { " " }, px(x), py(y));
            }
            let _ = write!(
                svg,
                r##"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>"##
            );
        }
        for &(x, y) in &s.points {
            let _ = write!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"##,
                px(x),
                py(y)
            );
        }
        // Legend rows in the top-right corner.
        let ly = MARGIN_TOP + 8.0 + si as f64 * 16.0;
        let lx = WIDTH - MARGIN_RIGHT - 130.0;
        let _ = write!(
            svg,
            r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"##,
            lx + 18.0
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-size="11" fill="#222">{}</text>"##,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>");
    svg
}
