//! Self-contained SVG plots with a CSV sidecar of the plotted series.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Point-connected trajectories in the plane (equal axis treatment).
    TrajectoryOverlay,
    /// Value over epochs/steps.
    LossCurve,
    /// One bar per named series using its first y value.
    SpeedBars,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub out: PathBuf,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Render the spec to `<out>.svg` and write `<out>.csv` alongside it.
/// Returns the SVG path.
pub fn emit_plot(spec: &PlotSpec) -> Result<PathBuf> {
    if spec.series.is_empty() || spec.series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Config("plot requires non-empty series".into()));
    }

    let svg_path = spec.out.with_extension("svg");
    let csv_path = spec.out.with_extension("csv");

    let mut csv = String::from("series,x,y\n");
    for s in &spec.series {
        for (x, y) in &s.points {
            let _ = writeln!(csv, "{},{},{}", s.name, x, y);
        }
    }
    crate::write_atomic(&csv_path, csv.as_bytes())?;

    let svg = match spec.kind {
        PlotKind::SpeedBars => render_bars(spec),
        _ => render_lines(spec),
    };
    crate::write_atomic(&svg_path, svg.as_bytes())?;
    Ok(svg_path)
}

fn data_bounds(spec: &PlotSpec) -> (f64, f64, f64, f64) {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in &spec.series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    (xmin, xmax, ymin, ymax)
}

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    )
}

fn axes(spec: &PlotSpec) -> String {
    format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lbly}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">{xl}</text>\n\
         <text x=\"16\" y=\"{cy}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 16 {cy})\">{yl}</text>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN / 2.0,
        t = MARGIN / 2.0,
        cx = WIDTH / 2.0,
        lbly = HEIGHT - 12.0,
        cy = HEIGHT / 2.0,
        xl = xml_escape(&spec.x_label),
        yl = xml_escape(&spec.y_label),
    )
}

fn render_lines(spec: &PlotSpec) -> String {
    let (xmin, xmax, ymin, ymax) = data_bounds(spec);
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (WIDTH - 1.5 * MARGIN);
    let sy = |y: f64| (HEIGHT - MARGIN) - (y - ymin) / (ymax - ymin) * (HEIGHT - 1.5 * MARGIN);

    let mut svg = svg_header(&spec.title);
    svg.push_str(&axes(spec));
    for (i, s) in spec.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        // Legend row.
        let ly = MARGIN / 2.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>",
            x = WIDTH - MARGIN * 2.4,
            y = ly,
            tx = WIDTH - MARGIN * 2.4 + 14.0,
            ty = ly + 9.0,
            name = xml_escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_bars(spec: &PlotSpec) -> String {
    let n = spec.series.len();
    let ymax = spec
        .series
        .iter()
        .map(|s| s.points[0].1)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut svg = svg_header(&spec.title);
    svg.push_str(&axes(spec));
    let span = WIDTH - 1.5 * MARGIN;
    let slot = span / n as f64;
    let bar_w = slot * 0.6;
    for (i, s) in spec.series.iter().enumerate() {
        let v = s.points[0].1;
        let h = v / ymax * (HEIGHT - 1.5 * MARGIN);
        let x = MARGIN + slot * i as f64 + (slot - bar_w) / 2.0;
        let y = (HEIGHT - MARGIN) - h;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{color}\"/>\
             <text x=\"{cx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{name}</text>\
             <text x=\"{cx:.2}\" y=\"{vy:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"10\">{v:.3}</text>",
            cx = x + bar_w / 2.0,
            ly = HEIGHT - MARGIN + 14.0,
            vy = y - 4.0,
            name = xml_escape(&s.name),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
