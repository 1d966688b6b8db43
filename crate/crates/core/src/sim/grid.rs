//! Per-cell occupancy probability maps and their binary-occupancy /
//! uncertainty encoding.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DetectorModel, GridDims, ImageSize, WorldObject};
use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Occupancy probability per cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub p: Vec<f32>,
}

impl ProbabilityMap {
    pub fn filled(width: usize, height: usize, cell_size: f64, value: f32) -> Self {
        ProbabilityMap { width, height, cell_size, p: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.p[y * self.width + x]
    }
}

/// Binary occupancy `o` and uncertainty `u` per cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub occupied: Vec<bool>,
    pub uncertainty: Vec<f64>,
}

impl OccupancyGrid {
    /// Grid with every cell set to the same `(o, u)`.
    pub fn uniform(width: usize, height: usize, cell_size: f64, occupied: bool, u: f64) -> Self {
        OccupancyGrid { width, height, cell_size, occupied: vec![occupied; width * height], uncertainty: vec![u; width * height] }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    /// Pixel footprint of a cell.
    pub fn cell_rect(&self, idx: usize) -> Rect {
        let (x, y) = self.coords(idx);
        let s = self.cell_size;
        Rect { x0: x as f64 * s, y0: y as f64 * s, x1: (x + 1) as f64 * s, y1: (y + 1) as f64 * s }
    }

    pub fn set(&mut self, x: usize, y: usize, occupied: bool, u: f64) {
        let i = self.index(x, y);
        self.occupied[i] = occupied;
        self.uncertainty[i] = u;
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if self.occupied.len() != self.len() || self.uncertainty.len() != self.len() {
            return Err(Error::invalid("grid buffers do not match its dimensions"));
        }
        if self.uncertainty.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::invalid("cell uncertainty outside [0, 1]"));
        }
        Ok(())
    }
}

/// Cell size that maps a `dims` grid onto `image`.
pub fn cell_size_for(image: ImageSize, dims: GridDims) -> f64 {
    image.w / dims.cells_w as f64
}

/// Renders the detector's per-cell occupancy probability. Each object raises
/// the cells it covers from the background level towards its own level
/// (`id_p`, or `ood_p` for OOD objects) in proportion to covered cell area.
pub fn render_probability_map<R: Rng + ?Sized>(
    objects: &[WorldObject],
    model: &DetectorModel,
    image: ImageSize,
    rng: &mut R,
) -> ProbabilityMap {
    let dims = model.grid;
    let s = cell_size_for(image, dims);
    let bg = model.background_p;
    let mut p = vec![bg; dims.cells_w * dims.cells_h];
    for o in objects {
        let level = if o.ood { model.ood_p } else { model.id_p };
        let r = o.bbox.to_rect();
        let x0 = (r.x0 / s).floor().max(0.0) as usize;
        let y0 = (r.y0 / s).floor().max(0.0) as usize;
        let x1 = ((r.x1 / s).ceil().max(0.0) as usize).min(dims.cells_w);
        let y1 = ((r.y1 / s).ceil().max(0.0) as usize).min(dims.cells_h);
        for y in y0..y1 {
            let cy0 = y as f64 * s;
            let oy = (r.y1.min(cy0 + s) - r.y0.max(cy0)).max(0.0);
            for x in x0..x1 {
                let cx0 = x as f64 * s;
                let ox = (r.x1.min(cx0 + s) - r.x0.max(cx0)).max(0.0);
                let cover = ox * oy / (s * s);
                let v = bg + (level - bg) * cover;
                let cell = &mut p[y * dims.cells_w + x];
                if (v - bg).abs() > (*cell - bg).abs() {
                    *cell = v;
                }
            }
        }
    }
    let noise = model.p_noise;
    let out = p
        .into_iter()
        .map(|v| {
            let n = if noise > 0.0 { noise * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            (v + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    ProbabilityMap { width: dims.cells_w, height: dims.cells_h, cell_size: s, p: out }
}

/// `o = [p >= 0.5]`, `u = 2(1 - p)` when occupied and `u = 2p` otherwise.
pub fn occupancy_of(p: f64) -> Result<(bool, f64)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("occupancy probability {p} outside [0, 1]")));
    }
    Ok(if p >= 0.5 { (true, 2.0 * (1.0 - p)) } else { (false, 2.0 * p) })
}

pub fn to_occupancy_grid(map: &ProbabilityMap) -> Result<OccupancyGrid> {
    if map.p.len() != map.width * map.height || map.width == 0 || map.height == 0 {
        return Err(Error::invalid("probability map size does not match its dimensions"));
    }
    let mut occupied = Vec::with_capacity(map.p.len());
    let mut uncertainty = Vec::with_capacity(map.p.len());
    for &p in &map.p {
        let (o, u) = occupancy_of(p as f64)?;
        occupied.push(o);
        uncertainty.push(u);
    }
    Ok(OccupancyGrid { width: map.width, height: map.height, cell_size: map.cell_size, occupied, uncertainty })
}
