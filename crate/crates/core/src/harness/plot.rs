use std::fmt::Write as _;
use std::path::Path;

use super::aggregate::{curves_to_csv, AggregateCurve};
use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG line chart of mean reward per episode with shaded
/// standard-error bands. Legend entries follow the order of `curves`.
pub fn svg_chart(curves: &[(String, AggregateCurve)]) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|(_, c)| c.mean.is_empty()) {
        return Err(Error::Contract("need at least one non-empty curve".into()));
    }
    let episodes = curves.iter().map(|(_, c)| c.episodes()).max().unwrap_or(1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, c) in curves {
        for (m, s) in c.mean.iter().zip(&c.stderr) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Contract("curves contain non-finite values".into()));
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |ep: f64| {
        if episodes == 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + (ep - 1.0) / (episodes - 1) as f64 * plot_w
        }
    };
    let sy = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
        let ep = 1.0 + (episodes - 1) as f64 * i as f64 / 4.0;
        let x = sx(ep);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            TOP + plot_h + 18.0,
            ep
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Episode</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">Mean reward per step</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (idx, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let upper: Vec<String> = c
            .mean
            .iter()
            .zip(&c.stderr)
            .enumerate()
            .map(|(i, (m, e))| format!("{:.2},{:.2}", sx((i + 1) as f64), sy(m + e)))
            .collect();
        let lower: Vec<String> = c
            .mean
            .iter()
            .zip(&c.stderr)
            .enumerate()
            .rev()
            .map(|(i, (m, e))| format!("{:.2},{:.2}", sx((i + 1) as f64), sy(m - e)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{:.2},{:.2}", sx((i + 1) as f64), sy(*m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * idx as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the chart to `path` and the curve data to the same path with a
/// `.csv` extension.
pub fn render_curves(curves: &[(String, AggregateCurve)], path: &Path) -> Result<()> {
    let svg = svg_chart(curves)?;
    std::fs::write(path, svg)?;
    std::fs::write(path.with_extension("csv"), curves_to_csv(curves)?)?;
    Ok(())
}
