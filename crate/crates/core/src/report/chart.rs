use std::fmt::Write as _;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart (one bar per label) with an optional dashed
/// vertical reference line.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)], reference: Option<f64>) -> String {
    let (left, right, top, bar_h, gap) = (170.0, 40.0, 40.0, 22.0, 8.0);
    let plot_w = 420.0;
    let width = left + plot_w + right;
    let height = top + bars.len() as f64 * (bar_h + gap) + 40.0;
    let max = bars
        .iter()
        .map(|b| b.1)
        .chain(reference)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let x = |v: f64| left + plot_w * (v.max(0.0) / max);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" font-size="15" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 8.0, y + bar_h * 0.7, escape(label));
        if v.is_finite() {
            let _ = writeln!(s, r##"<rect x="{left:.1}" y="{y:.1}" width="{:.1}" height="{bar_h:.1}" fill="#4c72b0"/>"##, x(*v) - left);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{v:.1}</text>"#, x(*v) + 4.0, y + bar_h * 0.7);
        }
    }
    let axis_y = top + bars.len() as f64 * (bar_h + gap);
    let _ = writeln!(s, r#"<line x1="{left:.1}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#, left + plot_w);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">median FID</text>"#, left + plot_w / 2.0, axis_y + 28.0);
    if let Some(r) = reference.filter(|r| r.is_finite()) {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{axis_y:.1}" stroke="red" stroke-dasharray="5,4" data-reference="{r}"/>"#,
            x(r),
            top - 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}
