//! Minimal SVG line plots built from polylines.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
    /// Keep one unit of x equal to one unit of y.
    pub equal_aspect: bool,
}

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Renders panels stacked vertically.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, i as f64 * PANEL_HEIGHT);
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(panel: &Panel) -> Option<(f64, f64, f64, f64)> {
    let mut it = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let &(x0, y0) = it.next()?;
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (x0, x0, y0, y0);
    for &(x, y) in it {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    // Degenerate ranges get a unit span so the scale stays finite.
    if hi_x - lo_x <= 0.0 {
        lo_x -= 0.5;
        hi_x += 0.5;
    }
    if hi_y - lo_y <= 0.0 {
        lo_y -= 0.5;
        hi_y += 0.5;
    }
    Some((lo_x, hi_x, lo_y, hi_y))
}

fn render_panel(out: &mut String, panel: &Panel, top: f64) {
    let (left, right) = (MARGIN, WIDTH - MARGIN / 2.0);
    let (upper, lower) = (top + MARGIN / 1.5, top + PANEL_HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, top + 18.0, escape(&panel.title));
    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{upper}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        right - left,
        lower - upper
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (left + right) / 2.0, lower + 30.0, escape(&panel.x_label));
    let Some((mut lo_x, mut hi_x, mut lo_y, mut hi_y)) = bounds(panel) else { return };
    let (mut sx, mut sy) = ((right - left) / (hi_x - lo_x), (lower - upper) / (hi_y - lo_y));
    if panel.equal_aspect {
        let s = sx.min(sy);
        let (cx, cy) = ((lo_x + hi_x) / 2.0, (lo_y + hi_y) / 2.0);
        let (hw, hh) = ((right - left) / s / 2.0, (lower - upper) / s / 2.0);
        (lo_x, hi_x, lo_y, hi_y) = (cx - hw, cx + hw, cy - hh, cy + hh);
        (sx, sy) = (s, s);
    }
    let px = |x: f64| left + (x - lo_x) * sx;
    let py = |y: f64| lower - (y - lo_y) * sy;
    for (v, anchor, x, y) in [(lo_y, "end", left - 4.0, lower), (hi_y, "end", left - 4.0, upper + 8.0)] {
        let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
    for (v, x) in [(lo_x, left), (hi_x, right)] {
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, lower + 14.0, tick(v));
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.trim_end());
        if !s.label.is_empty() && i < 8 {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                left + 6.0,
                upper + 14.0 + 13.0 * i as f64,
                escape(&s.label)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Keeps at most `max` evenly spaced points, always including the last one.
pub fn thin(points: Vec<(f64, f64)>, max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max || max < 2 {
        return points;
    }
    let stride = points.len().div_ceil(max - 1);
    let last = *points.last().expect("non-empty");
    let mut out: Vec<_> = points.into_iter().step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}
