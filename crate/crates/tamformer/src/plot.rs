//! F1-over-lead-time line plot, written as a self-contained SVG string so
//! output is deterministic byte for byte.

use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 52.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 18.0;
const BOTTOM: f64 = 42.0;

const PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render one polyline per named report: x runs from the largest lead time
/// down toward the action on the right, y is F1 on [0,1].
pub fn render_f1_svg(reports: &[(String, MetricsReport)]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Contract("plot needs at least one report".into()));
    }
    for (name, r) in reports {
        if r.rows.is_empty() {
            return Err(Error::Contract(format!("report {name} has no rows")));
        }
    }

    let mut times: Vec<f64> = reports.iter().flat_map(|(_, r)| r.rows.iter().map(|w| w.t_a)).collect();
    times.sort_by(|a, b| b.partial_cmp(a).unwrap());
    times.dedup();
    let (t_max, t_min) = (times[0], *times.last().unwrap());
    let span = (t_max - t_min).max(f64::EPSILON);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_of = |t: f64| LEFT + (t_max - t) / span * plot_w;
    let y_of = |f1: f64| TOP + (1.0 - f1) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    );

    for i in 0..=4 {
        let f1 = i as f64 / 4.0;
        let y = y_of(f1);
        let _ = write!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{f1:.2}</text>\n",
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for &t in &times {
        let x = x_of(t);
        let _ = write!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#eee\"/>\n\
             <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{t}</text>\n",
            HEIGHT - BOTTOM,
            HEIGHT - BOTTOM + 16.0
        );
    }
    let _ = write!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">lead time before event (s)</text>\n\
         <text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">F1</text>\n",
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM,
        HEIGHT - BOTTOM,
        LEFT + plot_w / 2.0,
        HEIGHT - 8.0,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, (name, report)) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut rows: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.t_a, r.f1)).collect();
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let points: Vec<String> =
            rows.iter().map(|&(t, f1)| format!("{:.2},{:.2}", x_of(t), y_of(f1))).collect();
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        );
        for &(t, f1) in &rows {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                x_of(t),
                y_of(f1)
            );
        }
        let ly = TOP + 8.0 + 16.0 * i as f64;
        let _ = write!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            WIDTH - RIGHT - 150.0,
            WIDTH - RIGHT - 126.0,
            WIDTH - RIGHT - 120.0,
            ly + 4.0,
            esc(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn plot_f1_over_time(reports: &[(String, MetricsReport)], path: &Path) -> Result<()> {
    let svg = render_f1_svg(reports)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
