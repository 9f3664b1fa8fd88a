//! Hand-written SVG output: mean curves per optimizer and 2-D trajectories
//! over contour lines of the averaged train objective.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::run::RunOutput;
use crate::error::Result;
use crate::landscape::{LandscapeSequence, Point};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#d62728", "#ff7f0e", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<rect class="axes" x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, frame.px(xv), y1 + 16.0, tick(xv));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, frame.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 18.0,
            PALETTE[i % PALETTE.len()],
            x + 24.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn points(frame: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let _ = write!(s, "{:.2},{:.2} ", frame.px(x), frame.py(y));
    }
    s.trim_end().to_string()
}

/// Per-optimizer mean over non-failed runs at every index; a run that stopped
/// early contributes its last value afterwards.
pub fn mean_curves(runs: &[RunOutput], value: impl Fn(&super::run::RunRecord) -> f64) -> BTreeMap<String, Vec<f64>> {
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for run in runs.iter().filter(|r| !r.failed()) {
        groups.entry(run.optimizer.name().to_string()).or_default().push(run.records.iter().map(&value).collect());
    }
    groups
        .into_iter()
        .map(|(name, series)| {
            let len = series.iter().map(Vec::len).max().unwrap_or(0);
            let mean = (0..len)
                .map(|i| {
                    let total: f64 = series.iter().map(|s| s[i.min(s.len() - 1)]).sum();
                    total / series.len() as f64
                })
                .collect();
            (name, mean)
        })
        .collect()
}

/// Mean value-versus-index curves, one polyline per optimizer.
pub fn curves_svg(curves: &BTreeMap<String, Vec<f64>>, title: &str, x_label: &str, y_label: &str) -> String {
    let finite = || curves.values().flatten().copied().filter(|v| v.is_finite());
    let y = (finite().fold(f64::INFINITY, f64::min), finite().fold(f64::NEG_INFINITY, f64::max));
    let y = if y.0.is_finite() { y } else { (0.0, 1.0) };
    let x_max = curves.values().map(|c| c.len().saturating_sub(1)).max().unwrap_or(1).max(1) as f64;
    let frame = Frame::new((0.0, x_max), y);

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, x_label, y_label);
    for (i, (name, curve)) in curves.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<polyline class="curve" data-optimizer="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(name),
            PALETTE[i % PALETTE.len()],
            points(&frame, curve.iter().enumerate().map(|(i, &v)| (i as f64, v)))
        );
    }
    legend(&mut out, &curves.keys().map(String::as_str).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Line segments of the `level` set of a sampled field, by marching squares.
/// `grid[j][i]` is the value at `(xs[i], ys[j])`.
pub fn contour_segments(xs: &[f64], ys: &[f64], grid: &[Vec<f64>], level: f64) -> Vec<[Point; 2]> {
    let mut segments = Vec::new();
    let cross = |a: Point, va: f64, b: Point, vb: f64| -> Point {
        let t = (level - va) / (vb - va);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    };
    for j in 0..ys.len().saturating_sub(1) {
        for i in 0..xs.len().saturating_sub(1) {
            let corners = [
                ([xs[i], ys[j]], grid[j][i]),
                ([xs[i + 1], ys[j]], grid[j][i + 1]),
                ([xs[i + 1], ys[j + 1]], grid[j + 1][i + 1]),
                ([xs[i], ys[j + 1]], grid[j + 1][i]),
            ];
            let mut hits = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, va) = corners[e];
                let (b, vb) = corners[(e + 1) % 4];
                if (va < level) != (vb < level) {
                    hits.push(cross(a, va, b, vb));
                }
            }
            match hits.len() {
                2 => segments.push([hits[0], hits[1]]),
                4 => {
                    let center = corners.iter().map(|c| c.1).sum::<f64>() / 4.0;
                    if (center < level) == (corners[0].1 < level) {
                        segments.push([hits[0], hits[3]]);
                        segments.push([hits[1], hits[2]]);
                    } else {
                        segments.push([hits[0], hits[1]]);
                        segments.push([hits[2], hits[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segments
}

const GRID: usize = 80;
const LEVELS: usize = 14;

/// Trajectories over contour lines of the averaged train objective. The view
/// covers every finite trajectory point, with a margin.
pub fn trajectory_svg(seq: &LandscapeSequence, paths: &[(&str, &[Point])], title: &str) -> String {
    let finite = || paths.iter().flat_map(|(_, p)| p.iter()).filter(|p| p[0].is_finite() && p[1].is_finite());
    let mut lo = [-5.0f64, -5.0f64];
    let mut hi = [5.0f64, 5.0f64];
    for p in finite() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - 0.5).max(-50.0);
            hi[k] = hi[k].max(p[k] + 0.5).min(50.0);
        }
    }
    let frame = Frame::new((lo[0], hi[0]), (lo[1], hi[1]));
    let axis = |k: usize| -> Vec<f64> { (0..=GRID).map(|i| lo[k] + (hi[k] - lo[k]) * i as f64 / GRID as f64).collect() };
    let (xs, ys) = (axis(0), axis(1));
    let grid: Vec<Vec<f64>> = ys.iter().map(|&y| xs.iter().map(|&x| seq.train_value([x, y])).collect()).collect();
    let values = || grid.iter().flatten().copied();
    let (vmin, vmax) = (values().fold(f64::INFINITY, f64::min), values().fold(f64::NEG_INFINITY, f64::max));

    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, "θ₁", "θ₂");
    for l in 0..LEVELS {
        let level = vmin + (vmax - vmin) * (l as f64 + 0.5) / LEVELS as f64;
        let mut d = String::new();
        for [a, b] in contour_segments(&xs, &ys, &grid, level) {
            let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", frame.px(a[0]), frame.py(a[1]), frame.px(b[0]), frame.py(b[1]));
        }
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r##"<path class="contour" data-level="{level}" fill="none" stroke="#b0b0b0" stroke-width="0.8" d="{d}"/>"##
            );
        }
    }
    for (i, (name, path)) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<polyline class="trajectory" data-optimizer="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(name),
            points(&frame, path.iter().map(|p| (p[0], p[1])))
        );
        if let Some(p) = path.first() {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#, frame.px(p[0]), frame.py(p[1]));
        }
    }
    legend(&mut out, &paths.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(svg: &str, path: &Path) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}
