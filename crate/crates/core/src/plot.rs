//! SVG figures of a two-parameter gain plane: stability and passivity
//! rasters, verified cubes, the inscribed box, cost contours and flow paths.

use std::fmt::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::flow;
use crate::linalg;
use crate::passivity::{self, CertifyOptions, PassivityMode};
use crate::plant::LtiPlant;
use crate::polytope::GainPolytope;
use crate::region::VerifiedRegion;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlotError {
    #[error("plots need a two-parameter gain, this plant has {dim}")]
    DimensionUnsupported { dim: usize },
    #[error("invalid plot window")]
    InvalidWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotConfig {
    /// `(lo, hi)` per axis; derived from the plotted objects when absent.
    pub window: Option<[(f64, f64); 2]>,
    pub stability_resolution: usize,
    /// Grid size for passivity classification; `None` disables the raster.
    pub passivity_resolution: Option<usize>,
    pub contour_resolution: usize,
    /// Offsets `f_K − f_K*` at which contours are drawn.
    pub contour_levels: Vec<f64>,
    /// Budget per raster sample; smaller than the default certification budget.
    pub certify: CertifyOptions,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            window: None,
            stability_resolution: 201,
            passivity_resolution: Some(61),
            contour_resolution: 201,
            contour_levels: vec![1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 3.0],
            certify: CertifyOptions { restarts: 2, iterations: 600, ..CertifyOptions::default() },
        }
    }
}

/// Objects to draw; gains are vectorized.
#[derive(Debug, Clone, Default)]
pub struct PlotInput<'a> {
    pub region: Option<&'a VerifiedRegion>,
    pub polytope: Option<&'a GainPolytope>,
    pub trajectories: Vec<Vec<Vec<f64>>>,
    pub k_star: Vec<f64>,
    pub k_hat: Vec<f64>,
    pub f_k_star: f64,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, k: f64) -> f64 {
        MARGIN + (k - self.x.0) / (self.x.1 - self.x.0) * SIZE
    }

    fn py(&self, k: f64) -> f64 {
        MARGIN + (self.y.1 - k) / (self.y.1 - self.y.0) * SIZE
    }

    fn grid(&self, res: usize) -> (Vec<f64>, Vec<f64>) {
        let axis = |(lo, hi): (f64, f64)| (0..res).map(|i| lo + (hi - lo) * i as f64 / (res - 1) as f64).collect();
        (axis(self.x), axis(self.y))
    }
}

fn default_window(input: &PlotInput) -> [(f64, f64); 2] {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut push = |k: &[f64]| {
        if k.len() == 2 && k.iter().all(|v| v.is_finite()) {
            pts.push([k[0], k[1]]);
        }
    };
    push(&input.k_star);
    push(&input.k_hat);
    if let Some(r) = input.region {
        for c in &r.cubes {
            c.cube.vertices().iter().for_each(|v| push(v));
        }
    }
    if let Some(p) = input.polytope {
        p.box_vertices().iter().for_each(|v| push(v));
    }
    input.trajectories.iter().flatten().for_each(|k| push(k));
    let mut w = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for p in &pts {
        for i in 0..2 {
            w[i].0 = w[i].0.min(p[i]);
            w[i].1 = w[i].1.max(p[i]);
        }
    }
    w.map(|(lo, hi)| {
        if !lo.is_finite() {
            return (-1.0, 1.0);
        }
        let pad = 0.15 * (hi - lo).max(1.0);
        (lo - pad, hi + pad)
    })
}

/// Horizontal runs of `true` cells as rectangles.
fn raster_runs(out: &mut String, frame: &Frame, xs: &[f64], ys: &[f64], cells: &[bool], fill: &str) {
    let res = xs.len();
    let dx = (frame.x.1 - frame.x.0) / (res - 1) as f64;
    let dy = (frame.y.1 - frame.y.0) / (res - 1) as f64;
    let _ = writeln!(out, r#"<g fill="{fill}" stroke="none" shape-rendering="crispEdges">"#);
    for (j, y) in ys.iter().enumerate() {
        let mut i = 0;
        while i < res {
            if !cells[j * res + i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < res && cells[j * res + i] {
                i += 1;
            }
            let x0 = frame.px(xs[start] - 0.5 * dx).max(MARGIN);
            let x1 = frame.px(xs[i - 1] + 0.5 * dx).min(MARGIN + SIZE);
            let y0 = frame.py(y + 0.5 * dy).max(MARGIN);
            let y1 = frame.py(y - 0.5 * dy).min(MARGIN + SIZE);
            let _ = writeln!(out, r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#, x1 - x0, y1 - y0);
        }
    }
    out.push_str("</g>\n");
}

/// Marching-squares segments of `values = level` on the grid `xs × ys`
/// (row `j` holds `y = ys[j]`). Cells with a non-finite corner are skipped.
pub fn contour_segments(xs: &[f64], ys: &[f64], values: &[f64], level: f64) -> Vec<[[f64; 2]; 2]> {
    let nx = xs.len();
    let v = |i: usize, j: usize| values[j * nx + i] - level;
    let mut segs = Vec::new();
    for j in 0..ys.len().saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            if c.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let p = [[xs[i], ys[j]], [xs[i + 1], ys[j]], [xs[i + 1], ys[j + 1]], [xs[i], ys[j + 1]]];
            let cross = |a: usize, b: usize| -> Option<[f64; 2]> {
                if (c[a] > 0.0) == (c[b] > 0.0) {
                    return None;
                }
                let t = c[a] / (c[a] - c[b]);
                Some([p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])])
            };
            let e: Vec<Option<[f64; 2]>> = (0..4).map(|k| cross(k, (k + 1) % 4)).collect();
            let hits: Vec<usize> = (0..4).filter(|k| e[*k].is_some()).collect();
            match hits.len() {
                2 => segs.push([e[hits[0]].unwrap(), e[hits[1]].unwrap()]),
                4 => {
                    let center = c.iter().sum::<f64>() / 4.0;
                    if (center > 0.0) == (c[0] > 0.0) {
                        segs.push([e[0].unwrap(), e[1].unwrap()]);
                        segs.push([e[2].unwrap(), e[3].unwrap()]);
                    } else {
                        segs.push([e[3].unwrap(), e[0].unwrap()]);
                        segs.push([e[1].unwrap(), e[2].unwrap()]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

fn draw_segments(out: &mut String, frame: &Frame, segs: &[[[f64; 2]; 2]], style: &str) {
    if segs.is_empty() {
        return;
    }
    let mut d = String::new();
    for [a, b] in segs {
        let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", frame.px(a[0]), frame.py(a[1]), frame.px(b[0]), frame.py(b[1]));
    }
    let _ = writeln!(out, r#"<path {style} fill="none" d="{d}"/>"#);
}

fn nice_ticks((lo, hi): (f64, f64)) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn axes(out: &mut String, frame: &Frame) {
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#000"/>"##
    );
    let bottom = MARGIN + SIZE;
    for t in nice_ticks(frame.x) {
        let x = frame.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}" stroke="#000"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            bottom + 5.0,
            bottom + 20.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(frame.y) {
        let y = frame.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN}" y2="{y:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN - 5.0,
            MARGIN - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">k_1</text>"#, MARGIN + SIZE / 2.0, bottom + 45.0);
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">k_2</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0
    );
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Renders the figure for a two-parameter plant.
pub fn render_run(plant: &LtiPlant, mode: &PassivityMode, input: &PlotInput, config: &PlotConfig) -> Result<String, PlotError> {
    let dim = plant.gain_dim();
    if dim != 2 {
        return Err(PlotError::DimensionUnsupported { dim });
    }
    let [wx, wy] = config.window.unwrap_or_else(|| default_window(input));
    if !(wx.0 < wx.1 && wy.0 < wy.1) || [wx.0, wx.1, wy.0, wy.1].iter().any(|v| !v.is_finite()) {
        return Err(PlotError::InvalidWindow);
    }
    let frame = Frame { x: wx, y: wy };
    let total = SIZE + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r##"<rect width="{total}" height="{total}" fill="#fff"/>"##);
    let _ = writeln!(out, r#"<clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}"/></clipPath>"#);

    let sres = config.stability_resolution.max(2);
    let (xs, ys) = frame.grid(sres);
    let abscissa: Vec<f64> = ys
        .iter()
        .flat_map(|y| xs.iter().map(move |x| (*x, *y)))
        .map(|(x, y)| linalg::spectral_abscissa(&plant.closed_loop(&plant.gain_from_vec(&[x, y]))).unwrap_or(f64::NAN))
        .collect();
    let stable: Vec<bool> = abscissa.iter().map(|a| *a < 0.0).collect();
    out.push_str("<g clip-path=\"url(#plot)\">\n");
    out.push_str("<g id=\"stability\">\n");
    raster_runs(&mut out, &frame, &xs, &ys, &stable, "#ececec");
    out.push_str("</g>\n");

    if let Some(pres) = config.passivity_resolution {
        let pres = pres.max(2);
        let (px, py) = frame.grid(pres);
        let points: Vec<(usize, [f64; 2])> =
            py.iter().flat_map(|y| px.iter().map(move |x| [*x, *y])).enumerate().collect();
        let passive: Vec<bool> = points
            .par_iter()
            .map(|(i, k)| {
                let opts = CertifyOptions { seed: config.certify.seed.wrapping_add(*i as u64), ..config.certify.clone() };
                passivity::certify_gain(plant, &plant.gain_from_vec(k), mode, &opts).is_ok()
            })
            .collect();
        out.push_str("<g id=\"passivity\" opacity=\"0.8\">\n");
        raster_runs(&mut out, &frame, &px, &py, &passive, "#b7e4c7");
        out.push_str("</g>\n");
    }

    if let Some(region) = input.region {
        out.push_str("<g id=\"cubes\" fill=\"none\" stroke=\"#2d6a4f\" stroke-width=\"0.6\">\n");
        for cell in &region.cubes {
            let h = 0.5 * cell.cube.edge;
            let (x0, x1) = (frame.px(cell.cube.center[0] - h), frame.px(cell.cube.center[0] + h));
            let (y0, y1) = (frame.py(cell.cube.center[1] + h), frame.py(cell.cube.center[1] - h));
            let _ = writeln!(out, r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#, x1 - x0, y1 - y0);
        }
        out.push_str("</g>\n");
    }

    let f_star = input.f_k_star;
    let cres = config.contour_resolution.max(2);
    let (cx, cy) = frame.grid(cres);
    let excess: Vec<f64> = cy
        .iter()
        .flat_map(|y| cx.iter().map(move |x| [*x, *y]))
        .map(|k| flow::evaluate_cost(plant, &plant.gain_from_vec(&k)).map_or(f64::NAN, |e| e.f - f_star))
        .collect();
    out.push_str("<g id=\"contours\">\n");
    for level in &config.contour_levels {
        draw_segments(&mut out, &frame, &contour_segments(&cx, &cy, &excess, *level), r##"stroke="#8d99ae" stroke-width="0.7""##);
    }
    out.push_str("</g>\n");

    out.push_str("<g id=\"stability-boundary\">\n");
    draw_segments(&mut out, &frame, &contour_segments(&xs, &ys, &abscissa, 0.0), r##"stroke="#000" stroke-width="1.2""##);
    out.push_str("</g>\n");

    if let Some(poly) = input.polytope {
        if let Some((lo, hi)) = poly.box_bounds() {
            let (x0, x1) = (frame.px(lo[0]), frame.px(hi[0]));
            let (y0, y1) = (frame.py(hi[1]), frame.py(lo[1]));
            let _ = writeln!(
                out,
                r##"<rect id="polytope" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#1d4ed8" stroke-width="2"/>"##,
                x1 - x0,
                y1 - y0
            );
        }
    }

    out.push_str("<g id=\"trajectories\" fill=\"none\" stroke=\"#d62828\" stroke-width=\"1.5\">\n");
    for path in &input.trajectories {
        let pts: Vec<String> = path.iter().map(|k| format!("{:.2},{:.2}", frame.px(k[0]), frame.py(k[1]))).collect();
        if !pts.is_empty() {
            let _ = writeln!(out, r#"<polyline points="{}"/>"#, pts.join(" "));
        }
    }
    out.push_str("</g>\n");

    if input.k_star.len() == 2 {
        let (x, y) = (frame.px(input.k_star[0]), frame.py(input.k_star[1]));
        let _ = writeln!(
            out,
            r##"<path id="k-star" d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="#000" stroke-width="2"/>"##,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0
        );
    }
    if input.k_hat.len() == 2 {
        let _ = writeln!(
            out,
            r##"<circle id="k-hat" cx="{:.2}" cy="{:.2}" r="4" fill="#d62828"/>"##,
            frame.px(input.k_hat[0]),
            frame.py(input.k_hat[1])
        );
    }
    out.push_str("</g>\n");
    axes(&mut out, &frame);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::benchmarks;

    #[test]
    fn contour_of_a_plane() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0];
        let values: Vec<f64> = ys.iter().flat_map(|_| xs.iter().copied()).collect();
        let segs = contour_segments(&xs, &ys, &values, 0.5);
        assert_eq!(segs.len(), 1);
        for p in segs[0] {
            assert!((p[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn three_parameter_gains_are_rejected() {
        let three = LtiPlant::new(
            crate::linalg::Mat::identity(3, 3) * -1.0,
            crate::linalg::Mat::from_row_slice(3, 1, &[1.0, 0.0, 0.0]),
            crate::linalg::Mat::from_row_slice(3, 1, &[1.0, 0.0, 0.0]),
            crate::linalg::Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            crate::linalg::Mat::zeros(1, 1),
            crate::linalg::Mat::identity(3, 3),
            crate::linalg::Mat::identity(1, 1),
        )
        .unwrap();
        let err = render_run(&three, &PassivityMode::nonstrict(), &PlotInput::default(), &PlotConfig::default());
        assert_eq!(err, Err(PlotError::DimensionUnsupported { dim: 3 }));
    }

    #[test]
    fn trajectory_only_plot() {
        let plant = benchmarks::coupled_two_state();
        let input = PlotInput {
            trajectories: vec![vec![vec![-0.6, 0.5], vec![-0.3, 0.3], vec![0.0, 0.15]]],
            k_star: vec![0.048, 0.143],
            k_hat: vec![0.0, 0.15],
            f_k_star: 0.4932,
            ..Default::default()
        };
        let config = PlotConfig { passivity_resolution: None, stability_resolution: 41, contour_resolution: 41, ..Default::default() };
        let svg = render_run(&plant, &PassivityMode::nonstrict(), &input, &config).unwrap();
        assert!(svg.contains("<polyline") && svg.contains("id=\"contours\""));
        assert!(!svg.contains("id=\"passivity\""));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
