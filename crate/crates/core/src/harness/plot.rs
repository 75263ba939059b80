//! Minimal SVG rendering: phase-grid heatmaps and semilog line plots.

use std::fmt::Write as _;
use std::path::Path;

use super::PhaseGrid;
use crate::error::Result;

/// Values below this are drawn at this level on semilog axes.
pub const SEMILOG_FLOOR: f64 = 1e-16;

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A named polyline of `(x, y)` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub enum PlotKind<'a> {
    /// Success rate per cell, black (0) to white (1).
    Heatmap(&'a PhaseGrid),
    /// Semilog lines with a log-scaled y axis.
    Lines {
        series: &'a [Series],
        x_label: &'a str,
        y_label: &'a str,
    },
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">{}</text>"#,
        TOP + (H - TOP - BOTTOM) / 2.0,
        TOP + (H - TOP - BOTTOM) / 2.0,
        escape(y_label)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap with `m/d` on the x axis and `η` on the y axis.
pub fn heatmap_svg(grid: &PhaseGrid) -> String {
    let mut out = String::new();
    header(&mut out);
    let (nx, ny) = (grid.ratios.len().max(1), grid.etas.len().max(1));
    let cw = (W - LEFT - RIGHT) / nx as f64;
    let ch = (H - TOP - BOTTOM) / ny as f64;
    for (i, r) in grid.ratios.iter().enumerate() {
        for j in 0..grid.etas.len() {
            let rate = grid.cell(i, j).success_rate.clamp(0.0, 1.0);
            let g = (rate * 255.0).round() as u8;
            // eta grows upwards
            let y = TOP + (ny - 1 - j) as f64 * ch;
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{g:02x}{g:02x}{g:02x}"/>"##,
                LEFT + i as f64 * cw,
                y,
                cw,
                ch
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{r}</text>"#,
            LEFT + (i as f64 + 0.5) * cw,
            H - BOTTOM + 15.0
        );
    }
    for (j, e) in grid.etas.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{e}</text>"#,
            LEFT - 5.0,
            TOP + (ny - 1 - j) as f64 * ch + ch / 2.0 + 4.0
        );
    }
    axis_labels(&mut out, "m/d", "eta");
    out.push_str("</svg>\n");
    out
}

/// Line plot with a base-10 log y axis; values are clamped at [`SEMILOG_FLOOR`].
pub fn trace_svg(series: &[Series], x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    header(&mut out);
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let ly = |y: f64| y.max(SEMILOG_FLOOR).log10();
    let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(ly(p.1)), b.max(ly(p.1)))
    });
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - ly(y)) / (y1 - y0) * ph;

    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let step = ((y1 - y0) / 8.0).ceil().max(1.0) as i64;
    let mut e = y0 as i64;
    while e <= y1 as i64 {
        let y = TOP + (y1 - e as f64) / (y1 - y0) * ph;
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
            LEFT - 5.0,
            y + 4.0
        );
        e += step;
    }
    for t in 0..=4 {
        let x = x0 + (x1 - x0) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(x),
            H - BOTTOM + 15.0,
            format_tick(x)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            LEFT + pw - 5.0,
            TOP + 15.0 + 14.0 * i as f64,
            escape(&s.label)
        );
    }
    axis_labels(&mut out, x_label, y_label);
    out.push_str("</svg>\n");
    out
}

fn format_tick(x: f64) -> String {
    if x == x.round() && x.abs() < 1e6 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

/// Renders `plot` and writes it to `path`.
pub fn export_svg(plot: &PlotKind<'_>, path: &Path) -> Result<()> {
    let svg = match plot {
        PlotKind::Heatmap(g) => heatmap_svg(g),
        PlotKind::Lines {
            series,
            x_label,
            y_label,
        } => trace_svg(series, x_label, y_label),
    };
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::PhaseCell;

    fn grid() -> PhaseGrid {
        let cells = [(2.0, 0.0, 0.0), (2.0, 0.1, 0.0), (4.0, 0.0, 1.0), (4.0, 0.1, 0.5)]
            .iter()
            .map(|&(r, e, s)| PhaseCell {
                m_over_d: r,
                eta: e,
                success_rate: s,
                n_sets: 1,
                n_signals: 1,
                failures: 0,
                signal_rate: s,
            })
            .collect();
        PhaseGrid {
            ratios: vec![2.0, 4.0],
            etas: vec![0.0, 0.1],
            cells,
        }
    }

    #[test]
    fn heatmap_is_deterministic() {
        let a = heatmap_svg(&grid());
        assert_eq!(a, heatmap_svg(&grid()));
        assert_eq!(a.matches("<rect").count(), 5);
        assert!(a.contains("#ffffff") && a.contains("#000000") && a.contains("#808080"));
    }

    #[test]
    fn zero_distance_is_clamped() {
        let s = vec![Series {
            label: "trial 0".into(),
            points: vec![(0.0, 1.0), (1.0, 1e-3), (2.0, 0.0)],
        }];
        let svg = trace_svg(&s, "k", "dist");
        assert!(svg.contains("1e-16"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        assert_eq!(svg, trace_svg(&s, "k", "dist"));
    }

    #[test]
    fn writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.svg");
        export_svg(&PlotKind::Heatmap(&grid()), &path).unwrap();
        assert!(std::fs::read_to_string(path).unwrap().starts_with("<svg"));
    }
}
