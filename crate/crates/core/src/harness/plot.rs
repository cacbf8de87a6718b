use std::fmt::Write as _;

use super::CurvePoint;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Recall (percent) against log-scaled K. Each series is drawn twice: MR
/// solid, mMR dashed.
pub fn recall_plot_svg(title: &str, series: &[(String, Vec<CurvePoint>)]) -> String {
    let ks: Vec<usize> = series.iter().flat_map(|(_, c)| c.iter().map(|p| p.k)).collect();
    let kmin = ks.iter().copied().min().unwrap_or(1).max(1) as f64;
    let kmax = (ks.iter().copied().max().unwrap_or(10) as f64).max(kmin * 10.0);
    let (lo, hi) = (kmin.log10(), kmax.log10());
    let x = |k: usize| LEFT + (((k.max(1) as f64).log10() - lo) / (hi - lo)) * (W - LEFT - RIGHT);
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 100.0) / 100.0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="18" font-size="13">{}</text>"#, escape(title));
    for v in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.1}" x2="{x2:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{tx:.1}" y="{ty:.1}" text-anchor="end">{v}</text>"##,
            yy = y(v),
            x2 = W - RIGHT,
            tx = LEFT - 6.0,
            ty = y(v) + 4.0
        );
    }
    let mut decade = 10f64.powf(lo.floor());
    while decade <= kmax * 1.0001 {
        if decade >= kmin * 0.9999 {
            let xx = x(decade.round() as usize);
            let _ = writeln!(s, r#"<text x="{xx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, decade.round());
        }
        decade *= 10.0;
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">K</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">recall (%)</text>"#, H / 2.0, H / 2.0);

    for (i, (name, curve)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (dash, pick) in [("", (|p: &CurvePoint| p.mr) as fn(&CurvePoint) -> f64), (r#" stroke-dasharray="5,3""#, |p: &CurvePoint| p.mmr)] {
            let pts: Vec<String> = curve.iter().map(|p| format!("{:.1},{:.1}", x(p.k), y(pick(p)))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#, pts.join(" "));
        }
        let ly = TOP + 16.0 * i as f64 + 8.0;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(name)
        );
    }
    let ly = TOP + 16.0 * series.len() as f64 + 16.0;
    let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">solid MR, dashed mMR</text>"#, W - RIGHT + 12.0);
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
