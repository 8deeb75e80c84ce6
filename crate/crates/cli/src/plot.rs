//! Minimal SVG line chart for trend summaries: mean DER per grid point.

use std::fmt::Write as _;

pub fn render_der_plot(title: &str, points: &[(String, f64)]) -> String {
    let width = 640.0;
    let height = 420.0;
    let margin_left = 70.0;
    let margin_right = 30.0;
    let margin_top = 50.0;
    let margin_bottom = 70.0;
    let plot_w = width - margin_left - margin_right;
    let plot_h = height - margin_top - margin_bottom;

    let max_der = points
        .iter()
        .map(|(_, d)| *d)
        .fold(0.0f64, f64::max)
        .max(1.0)
        * 1.15;
    let x = |i: usize| {
        if points.len() <= 1 {
            margin_left + plot_w / 2.0
        } else {
            margin_left + plot_w * i as f64 / (points.len() - 1) as f64
        }
    };
    let y = |der: f64| margin_top + plot_h * (1.0 - der / max_der);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="28" font-family="monospace" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        title
    );

    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{margin_left}" y1="{margin_top}" x2="{margin_left}" y2="{:.1}" stroke="black"/>"#,
        margin_top + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{margin_left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        margin_top + plot_h,
        margin_left + plot_w,
        margin_top + plot_h
    );

    // Y ticks.
    for tick in 0..=4 {
        let der = max_der * tick as f64 / 4.0;
        let ty = y(der);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ty:.1}" x2="{margin_left}" y2="{ty:.1}" stroke="black"/>"#,
            margin_left - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12" text-anchor="end">{der:.1}</text>"#,
            margin_left - 9.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" font-family="monospace" font-size="13" transform="rotate(-90 18 {:.1})" text-anchor="middle">mean DER (%)</text>"#,
        margin_top + plot_h / 2.0,
        margin_top + plot_h / 2.0
    );

    // Polyline and points.
    let path: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, (_, d))| format!("{:.1},{:.1}", x(i), y(*d)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path.join(" ")
    );
    for (i, (label, der)) in points.iter().enumerate() {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#1f77b4"/>"##,
            x(i),
            y(*der)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12" text-anchor="middle">{label}</text>"#,
            x(i),
            margin_top + plot_h + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="11" text-anchor="middle">{der:.2}</text>"#,
            x(i),
            y(*der) - 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
