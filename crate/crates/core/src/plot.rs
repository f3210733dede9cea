//! Minimal self-contained SVG log-log plot for error-versus-step-size series.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub label: &'a str,
    /// `(dt, rms_error)` points; non-finite or non-positive values are skipped.
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 55.0;

/// Render a log-log plot with dashed reference guides of the given slopes
/// anchored at the last point of the first series.
pub fn loglog_svg(title: &str, series: &[Series], guide_slopes: &[f64]) -> String {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
        .collect();
    let (x0, x1, y0, y1) = if finite.is_empty() {
        (-3.0, 0.0, -3.0, 0.0)
    } else {
        let xs: Vec<f64> = finite.iter().map(|p| p.0.log10()).collect();
        let ys: Vec<f64> = finite.iter().map(|p| p.1.log10()).collect();
        let pad = 0.15;
        (
            xs.iter().cloned().fold(f64::INFINITY, f64::min) - pad,
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad,
            ys.iter().cloned().fold(f64::INFINITY, f64::min) - pad,
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad,
        )
    };
    let sx = |lx: f64| ML + (lx - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |ly: f64| H - MB - (ly - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    );
    // axes box
    let _ = write!(
        svg,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    );
    // decade ticks and grid
    for d in (x0.floor() as i64)..=(x1.ceil() as i64) {
        let lx = d as f64;
        if lx < x0 || lx > x1 {
            continue;
        }
        let x = sx(lx);
        let _ = write!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{MT}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{d}</text>\n",
            H - MB,
            H - MB + 18.0
        );
    }
    for d in (y0.floor() as i64)..=(y1.ceil() as i64) {
        let ly = d as f64;
        if ly < y0 || ly > y1 {
            continue;
        }
        let y = sy(ly);
        let _ = write!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{d}</text>\n",
            W - MR,
            ML - 6.0,
            y + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">time step</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">rms error</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    );
    // slope guides anchored at the last finite point of the first series
    if let Some(anchor) = series
        .first()
        .and_then(|s| s.points.iter().rev().find(|&&(x, y)| x > 0.0 && y > 0.0))
    {
        let (ax, ay) = (anchor.0.log10(), anchor.1.log10());
        for &slope in guide_slopes {
            let (gx0, gx1) = (x0 + 0.05, x1 - 0.05);
            let gy = |lx: f64| ay + slope * (lx - ax);
            let _ = write!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#999\" \
                 stroke-dasharray=\"6,4\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" fill=\"#666\">slope {slope}</text>\n",
                sx(gx0),
                sy(gy(gx0)),
                sx(gx1),
                sy(gy(gx1)),
                sx(gx1) - 70.0,
                sy(gy(gx1)) - 6.0
            );
        }
    }
    // data series
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|&&(x, y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
            .map(|&(x, y)| (sx(x.log10()), sy(y.log10())))
            .collect();
        if pts.len() > 1 {
            let path: String =
                pts.iter().map(|(x, y)| format!("{x:.1},{y:.1} ")).collect();
            let _ = write!(
                svg,
                "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
            );
        }
        for (x, y) in &pts {
            let _ = write!(svg, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{color}\"/>\n");
        }
        let ly = MT + 16.0 + 16.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{:.1}\">{}</text>\n",
            ML + 10.0,
            ML + 34.0,
            ML + 40.0,
            ly + 4.0,
            xml_escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
