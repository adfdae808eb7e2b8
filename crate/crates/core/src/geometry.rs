//! BEV ray geometry.
//!
//! Continuous grid coordinates are `(row, col)` with cell `(h, w)` covering
//! `[h, h+1) × [w, w+1)`, so its center is `(h + 0.5, w + 0.5)`. Angles are
//! measured from the origin with `0` pointing along increasing columns and
//! `π/2` pointing toward row 0 ("forward" for a camera on the bottom edge).
//!
//! Rays are equal-angle sectors `[θ_i, θ_{i+1})` of a field of view that
//! defaults to the full circle. The cell containing the origin has no angle
//! and belongs to no ray.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer cell index `(h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub h: usize,
    pub w: usize,
}

impl Cell {
    pub const fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.h as f64 + 0.5, self.w as f64 + 0.5)
    }

    /// Euclidean distance between cell centers.
    pub fn distance(&self, other: &Cell) -> f64 {
        let (a, b) = (self.center(), other.center());
        (a.0 - b.0).hypot(a.1 - b.1)
    }
}

/// Angular extent covered by the rays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    /// Angle of the first sector boundary, radians.
    pub start: f64,
    /// Angular span in `(0, 2π]`.
    pub span: f64,
}

impl Default for FieldOfView {
    fn default() -> Self {
        Self {
            start: 0.0,
            span: TAU,
        }
    }
}

/// Default camera origin: center of the middle cell of the bottom row.
pub fn default_origin(h: usize, w: usize) -> (f64, f64) {
    (h as f64 - 0.5, ((w.saturating_sub(1)) / 2) as f64 + 0.5)
}

/// Assignment of BEV cells to rays, with radially ordered cell lists.
#[derive(Debug, Clone)]
pub struct RayPartition {
    h: usize,
    w: usize,
    n_ray: usize,
    origin: (f64, f64),
    origin_cell: Cell,
    fov: FieldOfView,
    assignment: Vec<Option<usize>>,
    radius: Vec<f64>,
    ray_cells: Vec<Vec<Cell>>,
}

impl RayPartition {
    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn n_ray(&self) -> usize {
        self.n_ray
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn origin_cell(&self) -> Cell {
        self.origin_cell
    }

    pub fn field_of_view(&self) -> FieldOfView {
        self.fov
    }

    /// Ray index of `cell`, or `None` for the origin cell and cells outside the field of view.
    pub fn ray_of(&self, cell: Cell) -> Option<usize> {
        self.assignment[cell.h * self.w + cell.w]
    }

    /// Distance from the origin to the center of `cell`.
    pub fn radius(&self, cell: Cell) -> f64 {
        self.radius[cell.h * self.w + cell.w]
    }

    /// Cells of ray `i`, sorted by radius then `(h, w)`.
    pub fn cells(&self, ray: usize) -> &[Cell] {
        &self.ray_cells[ray]
    }

    pub fn rays(&self) -> impl Iterator<Item = (usize, &[Cell])> {
        self.ray_cells.iter().enumerate().map(|(i, c)| (i, c.as_slice()))
    }

    /// Per-cell ray assignment in row-major order.
    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn assigned_count(&self) -> usize {
        self.ray_cells.iter().map(Vec::len).sum()
    }
}

/// Angle of `cell` seen from `origin`, wrapped to `[0, 2π)`.
pub fn cell_angle(origin: (f64, f64), cell: Cell) -> f64 {
    let (r, c) = cell.center();
    let theta = (origin.0 - r).atan2(c - origin.1);
    wrap_angle(theta)
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(TAU);
    if t >= TAU {
        t -= TAU;
    }
    t
}

/// Sector index of a relative angle under half-open intervals `[i·width, (i+1)·width)`.
fn sector(rel: f64, width: f64, n_ray: usize) -> usize {
    let mut i = ((rel / width).floor().max(0.0) as usize).min(n_ray - 1);
    while i > 0 && i as f64 * width > rel {
        i -= 1;
    }
    while i + 1 < n_ray && (i + 1) as f64 * width <= rel {
        i += 1;
    }
    i
}

pub fn partition_rays(h: usize, w: usize, origin: (f64, f64), n_ray: usize) -> Result<RayPartition> {
    partition_rays_with_fov(h, w, origin, n_ray, FieldOfView::default())
}

pub fn partition_rays_with_fov(
    h: usize,
    w: usize,
    origin: (f64, f64),
    n_ray: usize,
    fov: FieldOfView,
) -> Result<RayPartition> {
    if n_ray < 1 {
        return Err(Error::argument("n_ray must be at least 1"));
    }
    if h == 0 || w == 0 {
        return Err(Error::argument("grid must be non-empty"));
    }
    let inside = origin.0.is_finite()
        && origin.1.is_finite()
        && origin.0 >= 0.0
        && origin.0 < h as f64
        && origin.1 >= 0.0
        && origin.1 < w as f64;
    if !inside {
        return Err(Error::argument(format!(
            "origin ({}, {}) outside the {h}x{w} grid",
            origin.0, origin.1
        )));
    }
    if !(fov.span > 0.0 && fov.span <= TAU) || !fov.start.is_finite() {
        return Err(Error::argument("field of view span must be in (0, 2π]"));
    }

    let origin_cell = Cell::new(origin.0.floor() as usize, origin.1.floor() as usize);
    let width = fov.span / n_ray as f64;
    let mut assignment = vec![None; h * w];
    let mut radius = vec![0.0; h * w];
    let mut ray_cells: Vec<Vec<Cell>> = vec![Vec::new(); n_ray];

    for row in 0..h {
        for col in 0..w {
            let cell = Cell::new(row, col);
            let (cr, cc) = cell.center();
            let idx = row * w + col;
            radius[idx] = (cr - origin.0).hypot(cc - origin.1);
            if cell == origin_cell {
                continue;
            }
            let rel = wrap_angle(cell_angle(origin, cell) - fov.start);
            if rel >= fov.span {
                continue;
            }
            let ray = sector(rel, width, n_ray);
            assignment[idx] = Some(ray);
            ray_cells[ray].push(cell);
        }
    }
    for cells in &mut ray_cells {
        cells.sort_by(|a, b| {
            let ra = radius[a.h * w + a.w];
            let rb = radius[b.h * w + b.w];
            ra.total_cmp(&rb).then(a.cmp(b))
        });
    }

    Ok(RayPartition {
        h,
        w,
        n_ray,
        origin,
        origin_cell,
        fov,
        assignment,
        radius,
        ray_cells,
    })
}

/// Axis-aligned object footprint in continuous grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectBox {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub id: u32,
}

impl ObjectBox {
    pub fn new(center: (f64, f64), half_extents: (f64, f64), id: u32) -> Self {
        Self {
            center: [center.0, center.1],
            half_extents: [half_extents.0, half_extents.1],
            id,
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        let (r, c) = cell.center();
        (r - self.center[0]).abs() <= self.half_extents[0]
            && (c - self.center[1]).abs() <= self.half_extents[1]
    }

    /// Distance from `cell`'s center to the box center.
    pub fn center_distance(&self, cell: Cell) -> f64 {
        let (r, c) = cell.center();
        (r - self.center[0]).hypot(c - self.center[1])
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        let [cr, cc] = self.center;
        let [dr, dc] = self.half_extents;
        if !(cr.is_finite() && cc.is_finite() && dr.is_finite() && dc.is_finite()) {
            return Err(Error::argument(format!("object {}: non-finite box", self.id)));
        }
        if dr < 0.5 || dc < 0.5 {
            return Err(Error::argument(format!(
                "object {}: half extents must be at least 0.5 cell",
                self.id
            )));
        }
        let intersects =
            cr + dr > 0.0 && cr - dr < h as f64 && cc + dc > 0.0 && cc - dc < w as f64;
        if !intersects {
            return Err(Error::argument(format!(
                "object {}: box does not intersect the grid",
                self.id
            )));
        }
        Ok(())
    }
}

/// Rasterised object footprints: which object (if any) owns each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    h: usize,
    w: usize,
    owner: Vec<Option<u32>>,
    boxes: Vec<ObjectBox>,
}

impl ForegroundMask {
    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn is_foreground(&self, cell: Cell) -> bool {
        self.owner[cell.h * self.w + cell.w].is_some()
    }

    pub fn owner(&self, cell: Cell) -> Option<u32> {
        self.owner[cell.h * self.w + cell.w]
    }

    pub fn owners(&self) -> &[Option<u32>] {
        &self.owner
    }

    pub fn boxes(&self) -> &[ObjectBox] {
        &self.boxes
    }

    pub fn object(&self, id: u32) -> Option<&ObjectBox> {
        self.boxes.iter().find(|b| b.id == id)
    }

    pub fn count(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }

    /// Foreground indicator as `0.0 / 1.0` values, row-major.
    pub fn indicator(&self) -> Vec<f64> {
        self.owner
            .iter()
            .map(|o| if o.is_some() { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Marks every cell whose center lies inside a box. Earlier boxes keep
/// ownership of overlapping cells.
pub fn rasterize_objects(boxes: &[ObjectBox], h: usize, w: usize) -> Result<ForegroundMask> {
    if h == 0 || w == 0 {
        return Err(Error::argument("cannot rasterise onto an empty grid"));
    }
    for b in boxes {
        b.validate(h, w)?;
    }
    let mut owner = vec![None; h * w];
    for b in boxes {
        let r0 = (b.center[0] - b.half_extents[0] - 0.5).floor().max(0.0) as usize;
        let r1 = ((b.center[0] + b.half_extents[0] - 0.5).ceil().max(0.0) as usize).min(h - 1);
        let c0 = (b.center[1] - b.half_extents[1] - 0.5).floor().max(0.0) as usize;
        let c1 = ((b.center[1] + b.half_extents[1] - 0.5).ceil().max(0.0) as usize).min(w - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = Cell::new(row, col);
                let slot = &mut owner[row * w + col];
                if slot.is_none() && b.contains(cell) {
                    *slot = Some(b.id);
                }
            }
        }
    }
    Ok(ForegroundMask {
        h,
        w,
        owner,
        boxes: boxes.to_vec(),
    })
}

/// Radius of the nearest foreground cell on each ray, `None` for rays that hit no object.
pub fn ray_depth_truth(p: &RayPartition, m: &ForegroundMask) -> Vec<Option<f64>> {
    p.rays()
        .map(|(_, cells)| {
            cells
                .iter()
                .find(|c| m.is_foreground(**c))
                .map(|c| p.radius(*c))
        })
        .collect()
}

/// For each object id, the sorted list of rays that contain at least one of its cells.
pub fn rays_through_objects(p: &RayPartition, m: &ForegroundMask) -> BTreeMap<u32, Vec<usize>> {
    let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (ray, cells) in p.rays() {
        for c in cells {
            if let Some(id) = m.owner(*c) {
                let rays = out.entry(id).or_default();
                if rays.last() != Some(&ray) {
                    rays.push(ray);
                }
            }
        }
    }
    out
}
