//! Minimal deterministic SVG emission for heatmaps and semilog line charts.
//! Output depends only on the plotted values, never on timing or thread
//! count, so identical inputs produce byte-identical files.

use super::{NoiseRow, ResultGrid};
use crate::solver::SolverTrace;

const CELL: f64 = 32.0;
const MARGIN: f64 = 64.0;
const CHART_W: f64 = 560.0;
const CHART_H: f64 = 360.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

#[derive(Debug, Clone, Copy)]
pub enum Overlay {
    /// Curve row·col = product (the s·r phase boundary).
    Hyperbola { product: f64 },
    /// Curve row = slope·col (the n = c·K frontier).
    Line { slope: f64 },
}

/// Fractional index of `v` within a sorted axis, for plotting between cells.
fn interp_pos(values: &[f64], v: f64) -> Option<f64> {
    if values.is_empty() || v < values[0] || v > values[values.len() - 1] {
        return None;
    }
    if values.len() == 1 {
        return Some(0.0);
    }
    for w in 0..values.len() - 1 {
        if v <= values[w + 1] {
            let span = values[w + 1] - values[w];
            let frac = if span == 0.0 { 0.0 } else { (v - values[w]) / span };
            return Some(w as f64 + frac);
        }
    }
    None
}

fn fmt(x: f64) -> String {
    format!("{x:.2}")
}

/// Heatmap of a success-rate grid: white = 1, black = 0, row 0 at the bottom.
pub fn heatmap(grid: &ResultGrid, overlay: Option<Overlay>) -> String {
    let nrows = grid.row_values.len();
    let ncols = grid.col_values.len();
    let width = MARGIN * 2.0 + CELL * ncols as f64;
    let height = MARGIN * 2.0 + CELL * nrows as f64;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(width), fmt(height), fmt(width), fmt(height)
    ));
    out.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        fmt(width), fmt(height)
    ));
    // row i of the data sits i cells above the bottom margin
    let ybase = |i: usize| height - MARGIN - CELL * (i as f64 + 1.0);
    for i in 0..nrows {
        for j in 0..ncols {
            let level = (grid.values[i][j].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push_str(&format!(
                "<rect class=\"cell\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({level},{level},{level})\"/>\n",
                fmt(MARGIN + CELL * j as f64),
                fmt(ybase(i)),
                fmt(CELL),
                fmt(CELL)
            ));
        }
    }
    // axis tick labels
    for (j, c) in grid.col_values.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{c}</text>\n",
            fmt(MARGIN + CELL * (j as f64 + 0.5)),
            fmt(height - MARGIN + 16.0)
        ));
    }
    for (i, r) in grid.row_values.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{r}</text>\n",
            fmt(MARGIN - 8.0),
            fmt(ybase(i) + 0.5 * CELL + 4.0)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        fmt(width / 2.0),
        fmt(height - MARGIN + 36.0),
        grid.col_label
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{}</text>\n",
        fmt(MARGIN - 40.0),
        fmt(height / 2.0),
        fmt(MARGIN - 40.0),
        fmt(height / 2.0),
        grid.row_label
    ));

    if let Some(ov) = overlay {
        let samples = 256;
        let cmin = grid.col_values[0];
        let cmax = grid.col_values[ncols - 1];
        let mut points = Vec::new();
        for t in 0..=samples {
            let c = cmin + (cmax - cmin) * t as f64 / samples as f64;
            let r = match ov {
                Overlay::Hyperbola { product } => {
                    if c == 0.0 {
                        continue;
                    }
                    product / c
                }
                Overlay::Line { slope } => slope * c,
            };
            let (Some(cx), Some(ry)) = (interp_pos(&grid.col_values, c), interp_pos(&grid.row_values, r))
            else {
                continue;
            };
            let x = MARGIN + CELL * (cx + 0.5);
            let y = height - MARGIN - CELL * (ry + 0.5);
            points.push(format!("{},{}", fmt(x), fmt(y)));
        }
        if points.len() >= 2 {
            out.push_str(&format!(
                "<polyline class=\"overlay\" points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
                points.join(" ")
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Semilog chart shared by the trace and noise plots.
fn semilog_chart<'a>(
    curves: impl Iterator<Item = (&'a str, Vec<(f64, f64)>)>,
    x_label: &str,
) -> String {
    let curves: Vec<(&str, Vec<(f64, f64)>)> = curves
        .map(|(name, pts)| {
            let pts = pts
                .into_iter()
                .filter(|&(_, v)| v.is_finite() && v > 0.0)
                .map(|(x, v)| (x, v.log10().clamp(-14.0, 2.0)))
                .collect();
            (name, pts)
        })
        .collect();
    let width = CHART_W + 2.0 * MARGIN;
    let height = CHART_H + 2.0 * MARGIN;
    let xmax = curves
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let (ymin, ymax) = curves
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (ymin, ymax) = if ymin > ymax {
        (-1.0, 1.0)
    } else if ymin == ymax {
        (ymin - 1.0, ymax + 1.0)
    } else {
        (ymin, ymax)
    };
    let px = |x: f64| MARGIN + CHART_W * x / xmax;
    let py = |y: f64| MARGIN + CHART_H * (ymax - y) / (ymax - ymin);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(width), fmt(height), fmt(width), fmt(height)
    ));
    out.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        fmt(width), fmt(height)
    ));
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        fmt(MARGIN), fmt(MARGIN), fmt(CHART_W), fmt(CHART_H)
    ));
    // decade gridlines
    let mut d = ymin.ceil();
    while d <= ymax.floor() {
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            fmt(MARGIN), fmt(py(d)), fmt(MARGIN + CHART_W), fmt(py(d))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">1e{d}</text>\n",
            fmt(MARGIN - 6.0),
            fmt(py(d) + 4.0)
        ));
        d += 1.0;
    }
    for (c, (name, pts)) in curves.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[c % PALETTE.len()];
        let joined: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
            .collect();
        out.push_str(&format!(
            "<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            joined.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            fmt(MARGIN + CHART_W + 8.0),
            fmt(MARGIN + 16.0 * (c as f64 + 1.0))
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{x_label}</text>\n",
        fmt(MARGIN + CHART_W / 2.0),
        fmt(height - MARGIN + 32.0)
    ));
    out.push_str("</svg>\n");
    out
}

/// Relative error against iteration count, one curve per trace, log y axis.
/// Wall-clock columns are deliberately excluded.
pub fn trace_chart(curves: &[(String, &SolverTrace)]) -> String {
    semilog_chart(
        curves.iter().map(|(name, trace)| {
            let pts = trace
                .iterations
                .iter()
                .map(|rec| (rec.iter as f64, rec.rel_err))
                .collect();
            (name.as_str(), pts)
        }),
        "iteration",
    )
}

/// Median relative error against SNR in dB, log y axis.
pub fn noise_chart(rows: &[NoiseRow]) -> String {
    let pts = rows
        .iter()
        .map(|row| (row.snr_db, row.median_rel_err))
        .collect();
    semilog_chart(std::iter::once(("median", pts)), "SNR (dB)")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::IterRecord;

    fn demo_grid() -> ResultGrid {
        ResultGrid {
            row_label: "r".into(),
            col_label: "s".into(),
            row_values: vec![1.0, 2.0],
            col_values: vec![1.0, 2.0],
            values: vec![vec![1.0, 0.5], vec![0.5, 0.0]],
            cell_seeds: Vec::new(),
        }
    }

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let svg = heatmap(&demo_grid(), None);
        assert_eq!(svg.matches("class=\"cell\"").count(), 4);
        assert!(svg.contains("rgb(255,255,255)"));
        assert!(svg.contains("rgb(0,0,0)"));
    }

    #[test]
    fn overlay_emits_polyline_inside_range() {
        let svg = heatmap(&demo_grid(), Some(Overlay::Hyperbola { product: 2.0 }));
        assert_eq!(svg.matches("class=\"overlay\"").count(), 1);
        // product 9 lies outside the 2x2 grid entirely
        let svg = heatmap(&demo_grid(), Some(Overlay::Hyperbola { product: 9.0 }));
        assert_eq!(svg.matches("class=\"overlay\"").count(), 0);
    }

    #[test]
    fn trace_chart_ignores_wall_time() {
        let make = |wall: f64| SolverTrace {
            iterations: (0..5)
                .map(|i| IterRecord {
                    iter: i,
                    rel_err: 10f64.powi(-(i as i32)),
                    objective: 1.0,
                    wall_ms: wall * i as f64,
                })
                .collect(),
            factors: Vec::new(),
            xhat: Vec::new(),
            converged: true,
        };
        let a = make(1.0);
        let b = make(57.0);
        let svg_a = trace_chart(&[("t".into(), &a)]);
        let svg_b = trace_chart(&[("t".into(), &b)]);
        assert_eq!(svg_a, svg_b);
        assert_eq!(svg_a.matches("class=\"curve\"").count(), 1);
    }

    #[test]
    fn interp_pos_bounds() {
        let axis = [16.0, 24.0, 32.0];
        assert_eq!(interp_pos(&axis, 16.0), Some(0.0));
        assert_eq!(interp_pos(&axis, 28.0), Some(1.5));
        assert_eq!(interp_pos(&axis, 40.0), None);
    }
}
