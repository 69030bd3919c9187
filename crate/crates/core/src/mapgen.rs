//! Difficulty maps: a lattice over the workspace, model estimates at each
//! cell, leaf regions, and CSV / SVG export.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::domain::{features_from_xyz, TaskFeatures, Workspace};
use crate::error::{Error, Result};
use crate::model::{DifficultyEstimate, EffectModel};

/// Cell centers of the workspace lattice.
///
/// In the plane, centers sit at `x = −r + res/2 + i·res`, `y = res/2 + j·res`
/// and are kept when `x² + y² ≤ r²`. With a slice every cell has
/// `z = z_slice`; otherwise layers sit at `z = res/2 + k·res` up to the
/// workspace height. Order is z, then y, then x.
pub fn build_grid(ws: &Workspace, resolution: f64, z_slice: Option<f64>) -> Result<Vec<TaskFeatures>> {
    ws.validate()?;
    if !(resolution.is_finite() && resolution > 0.0 && resolution < ws.radius) {
        return Err(Error::InvalidResolution {
            resolution,
            radius: ws.radius,
        });
    }
    let layers: Vec<f64> = match z_slice {
        Some(z) => {
            if !(z.is_finite() && (0.0..=ws.height).contains(&z)) {
                return Err(Error::SliceOutOfRange { z, height: ws.height });
            }
            vec![z]
        }
        None => lattice(resolution / 2.0, resolution, ws.height),
    };
    let r = ws.radius;
    let xs = lattice(-r + resolution / 2.0, resolution, r);
    let ys = lattice(resolution / 2.0, resolution, r);
    let mut grid = Vec::new();
    for &z in &layers {
        for &y in &ys {
            for &x in &xs {
                if x * x + y * y <= r * r {
                    grid.push(features_from_xyz(x, y, z)?);
                }
            }
        }
    }
    Ok(grid)
}

fn lattice(start: f64, step: f64, upper: f64) -> Vec<f64> {
    (0..)
        .map(|i| start + i as f64 * step)
        .take_while(|v| *v <= upper)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyMap {
    pub grid: Vec<(TaskFeatures, DifficultyEstimate)>,
    pub resolution: f64,
    /// `None` for a layered map of the whole workspace.
    pub z_slice: Option<f64>,
}

/// Evaluates `model` at every grid cell, keeping grid order.
pub fn difficulty_map(
    model: &dyn EffectModel,
    grid: &[TaskFeatures],
    resolution: f64,
    z_slice: Option<f64>,
) -> DifficultyMap {
    DifficultyMap {
        grid: grid.par_iter().map(|p| (*p, model.predict(p))).collect(),
        resolution,
        z_slice,
    }
}

/// Cells sharing a leaf. `cells` index into the map grid, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub leaf_id: usize,
    pub tau_hat: f64,
    pub cells: Vec<usize>,
    /// One face-connected component: 4-neighbourhood within a slice,
    /// 6-neighbourhood across layers.
    pub connected: bool,
}

/// Integer lattice coordinates of each cell.
pub fn lattice_indices(map: &DifficultyMap) -> Vec<(i64, i64, i64)> {
    let min = |f: fn(&TaskFeatures) -> f64| {
        map.grid
            .iter()
            .map(|(p, _)| f(p))
            .fold(f64::INFINITY, f64::min)
    };
    let (x0, y0, z0) = (min(|p| p.x), min(|p| p.y), min(|p| p.z));
    let step = |v: f64, origin: f64| ((v - origin) / map.resolution).round() as i64;
    map.grid
        .iter()
        .map(|(p, _)| (step(p.x, x0), step(p.y, y0), step(p.z, z0)))
        .collect()
}

pub fn extract_regions(map: &DifficultyMap) -> Result<Vec<Region>> {
    let mut by_leaf: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, est)) in map.grid.iter().enumerate() {
        by_leaf.entry(est.leaf_id.ok_or(Error::NoLeafIds)?).or_default().push(i);
    }
    let coords = lattice_indices(map);
    let mut regions: Vec<Region> = by_leaf
        .into_iter()
        .map(|(leaf_id, cells)| Region {
            leaf_id,
            tau_hat: map.grid[cells[0]].1.tau_hat,
            connected: is_connected(&cells, &coords),
            cells,
        })
        .collect();
    regions.sort_by(|a, b| {
        b.tau_hat
            .abs()
            .total_cmp(&a.tau_hat.abs())
            .then(a.leaf_id.cmp(&b.leaf_id))
    });
    Ok(regions)
}

fn is_connected(cells: &[usize], coords: &[(i64, i64, i64)]) -> bool {
    let members: HashMap<(i64, i64, i64), usize> = cells.iter().map(|&c| (coords[c], c)).collect();
    let mut seen = vec![false; cells.len()];
    let position: HashMap<usize, usize> = cells.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let mut queue = VecDeque::from([cells[0]]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(c) = queue.pop_front() {
        let (i, j, k) = coords[c];
        for n in [
            (i - 1, j, k),
            (i + 1, j, k),
            (i, j - 1, k),
            (i, j + 1, k),
            (i, j, k - 1),
            (i, j, k + 1),
        ] {
            if let Some(&nc) = members.get(&n) {
                let slot = position[&nc];
                if !seen[slot] {
                    seen[slot] = true;
                    reached += 1;
                    queue.push_back(nc);
                }
            }
        }
    }
    reached == cells.len()
}

/// Three RGB stops; values interpolate linearly from `center` at zero to
/// `negative` / `positive` at the ends of the symmetric scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergingPalette {
    pub negative: [u8; 3],
    pub center: [u8; 3],
    pub positive: [u8; 3],
}

impl Default for DivergingPalette {
    fn default() -> Self {
        DivergingPalette {
            negative: [33, 102, 172],
            center: [247, 247, 247],
            positive: [178, 24, 43],
        }
    }
}

impl DivergingPalette {
    /// Color of `value` on a scale running from `−max_abs` to `max_abs`.
    pub fn color(&self, value: f64, max_abs: f64) -> String {
        let t = if max_abs > 0.0 { (value / max_abs).clamp(-1.0, 1.0) } else { 0.0 };
        let end = if t < 0.0 { self.negative } else { self.positive };
        let w = t.abs();
        let mix = |c: usize| (self.center[c] as f64 + w * (end[c] as f64 - self.center[c] as f64)).round() as u8;
        format!("#{:02x}{:02x}{:02x}", mix(0), mix(1), mix(2))
    }
}

const PX_PER_M: f64 = 1000.0;
const MARGIN: f64 = 60.0;
const LEGEND_WIDTH: f64 = 120.0;
const LEGEND_STEPS: usize = 20;

/// One `rect` per cell, colored on a diverging scale centered at zero.
pub fn render_svg_slice(map: &DifficultyMap, palette: &DivergingPalette) -> Result<String> {
    let z = map.z_slice.ok_or(Error::NotASlice)?;
    if map.grid.is_empty() {
        return Err(Error::InvalidParameter("map has no cells".into()));
    }
    let half = map.resolution / 2.0;
    let fold = |f: fn(&TaskFeatures) -> f64, init: f64, op: fn(f64, f64) -> f64| {
        map.grid.iter().map(|(p, _)| f(p)).fold(init, op)
    };
    let x_lo = fold(|p| p.x, f64::INFINITY, f64::min) - half;
    let x_hi = fold(|p| p.x, f64::NEG_INFINITY, f64::max) + half;
    let y_lo = fold(|p| p.y, f64::INFINITY, f64::min) - half;
    let y_hi = fold(|p| p.y, f64::NEG_INFINITY, f64::max) + half;
    let max_abs = map.grid.iter().map(|(_, e)| e.tau_hat.abs()).fold(0.0, f64::max);

    let plot_w = (x_hi - x_lo) * PX_PER_M;
    let plot_h = (y_hi - y_lo) * PX_PER_M;
    let width = plot_w + 2.0 * MARGIN + LEGEND_WIDTH;
    let height = plot_h + 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x_lo) * PX_PER_M;
    let py = |y: f64| MARGIN + (y_hi - y) * PX_PER_M;
    let cell = map.resolution * PX_PER_M;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(
        s,
        r#"<title>Difficulty map, z = {z:.3} m</title>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="16" text-anchor="middle">difficulty (s), z = {z:.3} m</text>"#,
        MARGIN + plot_w / 2.0,
        MARGIN / 2.0
    );
    let _ = writeln!(s, r#"<g id="cells" stroke="none">"#);
    for (p, e) in &map.grid {
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="{}"/>"#,
            px(p.x - half),
            py(p.y + half),
            palette.color(e.tau_hat, max_abs)
        );
    }
    let _ = writeln!(s, "</g>");

    let axis_y = MARGIN + plot_h;
    let _ = writeln!(
        s,
        r#"<g id="axes" font-family="sans-serif" font-size="12" fill="black">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        MARGIN,
        MARGIN + plot_w
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        MARGIN, MARGIN, MARGIN
    );
    for x in [x_lo, 0.0, x_hi] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.3}</text>"#,
            px(x),
            axis_y + 16.0
        );
    }
    for y in [y_lo, y_hi] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.3}</text>"#,
            MARGIN - 6.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">x (m)</text>"#,
        MARGIN + plot_w / 2.0,
        axis_y + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">y (m)</text>"#,
        MARGIN / 3.0,
        MARGIN + plot_h / 2.0,
        MARGIN / 3.0,
        MARGIN + plot_h / 2.0
    );
    let _ = writeln!(s, "</g>");

    let lx = MARGIN + plot_w + 30.0;
    let step_h = plot_h / LEGEND_STEPS as f64;
    let _ = writeln!(
        s,
        r#"<g id="legend" font-family="sans-serif" font-size="12">"#
    );
    for k in 0..LEGEND_STEPS {
        let v = max_abs * (1.0 - (2 * k + 1) as f64 / LEGEND_STEPS as f64);
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.3}" width="20.0" height="{step_h:.3}" fill="{}"/>"#,
            MARGIN + k as f64 * step_h,
            palette.color(v, max_abs)
        );
    }
    for (label, y) in [
        (max_abs, MARGIN),
        (0.0, MARGIN + plot_h / 2.0),
        (-max_abs, MARGIN + plot_h),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{:.3} s</text>"#,
            lx + 26.0,
            y + 4.0,
            label + 0.0
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub const MAP_CSV_HEADER: &str = "x_m,y_m,z_m,dist_m,tau_hat_s,leaf_id";

/// One row per cell in grid order, nine decimals; `leaf_id` blank when the
/// model has no leaves.
pub fn export_map_csv(map: &DifficultyMap) -> String {
    let mut s = String::from(MAP_CSV_HEADER);
    s.push('\n');
    for (p, e) in &map.grid {
        let leaf = e.leaf_id.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:.9},{:.9},{:.9},{:.9},{:.9},{leaf}",
            p.x, p.y, p.z, p.dist, e.tau_hat
        );
    }
    s
}
