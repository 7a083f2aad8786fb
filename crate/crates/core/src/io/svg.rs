//! Self-contained SVG line charts for reports.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
/// Points per polyline after decimation.
const MAX_POINTS: usize = 1500;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plots each `(label, values)` against `x`. Non-finite values are skipped.
pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    let finite = |v: &f64| v.is_finite();
    let (x_lo, x_hi) = x.iter().copied().filter(finite).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y_lo, mut y_hi) = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(finite)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(y_lo.is_finite() && y_hi.is_finite()) {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-12 * y_hi.abs().max(1.0) {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let px = |v: f64| MARGIN + (v - x_lo) / x_span * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (v, y) in [(y_hi, MARGIN), (y_lo, HEIGHT - MARGIN)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.4}</text>"#, MARGIN - 4.0, y + 4.0);
    }
    for (v, anchor) in [(x_lo, "start"), (x_hi, "end")] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#, px(v), HEIGHT - MARGIN + 14.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 8.0, escape(x_label));
    let step = x.len().div_ceil(MAX_POINTS).max(1);
    for (k, (label, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut points = String::new();
        for (xv, yv) in x.iter().zip(values.iter()).step_by(step) {
            if xv.is_finite() && yv.is_finite() {
                let _ = write!(points, "{:.1},{:.1} ", px(*xv), py(*yv));
            }
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, points.trim_end());
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 14.0 * (k as f64 + 1.0),
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let x: Vec<f64> = (0..5000).map(|k| k as f64 * 1e-3).collect();
        let a: Vec<f64> = x.iter().map(|t| t.sin()).collect();
        let b = vec![f64::NAN; x.len()];
        let svg = line_chart("v_d <test>", "t [s]", &x, &[("measured", &a), ("flat", &b)]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("&lt;test&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        let pts = svg.lines().find(|l| l.contains("polyline")).unwrap().matches(',').count();
        assert!(pts <= MAX_POINTS + 5);
    }
}
