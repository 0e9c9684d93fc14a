//! Minimal static SVG figures.

use std::fmt::Write as _;

const W: f64 = 420.0;
const H: f64 = 260.0;
const M: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Side-by-side bar charts of values in `[0, 1]`; `None` bars are drawn as
/// empty slots.
pub(crate) fn bar_panels(panels: &[(&str, Vec<(String, Option<f64>)>)]) -> String {
    let width = W * panels.len() as f64;
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" font-family="sans-serif" font-size="10">"#);
    s.push('\n');
    for (k, (title, bars)) in panels.iter().enumerate() {
        let x0 = k as f64 * W + M;
        let (pw, ph) = (W - 1.5 * M, H - 2.5 * M);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, x0, M * 0.6, escape(title));
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, M + ph, x0 + pw, M + ph);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{M}" x2="{x0}" y2="{}" stroke="black"/>"#, M + ph);
        for tick in [0.0, 0.5, 1.0] {
            let y = M + ph * (1.0 - tick);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, x0 - 4.0, y + 3.0);
        }
        let bw = pw / bars.len().max(1) as f64;
        for (i, (label, v)) in bars.iter().enumerate() {
            let x = x0 + i as f64 * bw;
            if let Some(v) = v {
                let h = ph * v.clamp(0.0, 1.0);
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4c72b0"/>"##,
                    x + 0.1 * bw,
                    M + ph - h,
                    0.8 * bw,
                    h
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-45 {:.1} {:.1})">{}</text>"#,
                x + 0.5 * bw,
                M + ph + 12.0,
                x + 0.5 * bw,
                M + ph + 12.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Decision pulses, `p_t` markers, local usage and normalized speed over time.
pub(crate) fn trace(title: &str, rows: &[(f64, bool, f64, f64)]) -> String {
    let width = (rows.len() as f64 * 3.0).clamp(400.0, 4000.0);
    let (pw, ph) = (width - 1.5 * M, H - 2.0 * M);
    let n = rows.len().max(2) as f64 - 1.0;
    let x = |t: usize| M + pw * t as f64 / n;
    let y = |v: f64| M + ph * (1.0 - v.clamp(0.0, 1.0));
    let vmax = rows.iter().map(|r| r.3).fold(0.0_f64, f64::max).max(1e-9);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" font-family="sans-serif" font-size="10">"#);
    s.push('\n');
    let _ = writeln!(s, r#"<text x="{M}" y="{}" font-size="12">{}</text>"#, M * 0.6, escape(title));
    let _ = writeln!(s, r#"<rect x="{M}" y="{M}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (t, &(_, d, _, _)) in rows.iter().enumerate() {
        if d {
            let _ = writeln!(s, r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#1f77b4"/>"##, x(t), y(0.0), y(1.0));
        }
    }
    let poly = |f: &dyn Fn(&(f64, bool, f64, f64)) -> f64| -> String {
        rows.iter().enumerate().map(|(t, r)| format!("{:.1},{:.1}", x(t), y(f(r)))).collect::<Vec<_>>().join(" ")
    };
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#2ca02c"/>"##, poly(&|r| r.2));
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#7f7f7f" stroke-dasharray="3,2"/>"##, poly(&|r| r.3 / vmax));
    for (t, r) in rows.iter().enumerate() {
        let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="1.5" fill="none" stroke="#ff7f0e"/>"##, x(t), y(r.0));
    }
    let _ = writeln!(
        s,
        r#"<text x="{M}" y="{}">pulses: d_t, circles: p_t, green: 31-frame usage, dashed: speed / max</text>"#,
        H - 8.0
    );
    s.push_str("</svg>\n");
    s
}
