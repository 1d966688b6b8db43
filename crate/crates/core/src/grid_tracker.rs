//! Occupancy-grid tracker driven by per-cell occupancy and uncertainty.
//!
//! Each frame: occupied cells are clustered, clusters are associated to
//! tracks greedily by IoU, every track is refit from particles weighted by
//! the product of its cells' likelihoods, and each track's existence
//! log-likelihood-ratio is updated from the mean particle weight over the
//! no-object likelihood of the same cells.

use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_gaussian, iou, set_distance, BBox, GaussianState, Rect, StateCov, StateVec};
use crate::io::{TrackFrame, TrackRecord};
use crate::output_frame::LabelAllocator;
use crate::rfs::Label;
use crate::rng::{Domain, FrameStreams, StreamRng};
use crate::sim::OccupancyGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub p_tp: f64,
    pub p_fp: f64,
    /// Likelihood falloff, in cells.
    pub sigma: f64,
    pub n_particles: usize,
    /// Occupied cells within this Chebyshev distance join one cluster.
    pub link_radius: usize,
    /// Unoccupied cells within this Chebyshev distance form a cluster's boundary.
    pub boundary_radius: usize,
    pub birth_lr0: f64,
    pub kill_log_lr: f64,
    pub confirm_log_lr: f64,
    /// Center-distance association gate, and missed-frame evidence radius (px).
    pub assoc_gate_px: f64,
    /// Stddevs for position, size, velocity (px per stage).
    pub process_noise: [f64; 3],
    pub birth_spread: [f64; 6],
    /// Stddev floor on the refit covariance. A refit from sharply peaked
    /// weights is nearly a point; the floor keeps velocity correctable.
    pub fit_floor: [f64; 6],
    /// Clusters above this many cells are subsampled.
    pub max_cells: usize,
    /// Births need this many occupied cells with `u <= birth_max_u`.
    pub min_birth_cells: usize,
    pub birth_max_u: f64,
    /// Log-LR change applied when every particle has zero likelihood.
    pub degenerate_log_penalty: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            p_tp: 0.75,
            p_fp: 0.2,
            sigma: 1.0,
            n_particles: 50,
            link_radius: 2,
            boundary_radius: 2,
            birth_lr0: 0.0,
            kill_log_lr: 0.01f64.ln(),
            confirm_log_lr: 10f64.ln(),
            assoc_gate_px: 24.0,
            process_noise: [0.5, 0.25, 0.5],
            birth_spread: [2.0; 6],
            fit_floor: [1.0, 1.0, 0.5, 0.5, 1.0, 1.0],
            max_cells: 4096,
            min_birth_cells: 2,
            birth_max_u: 0.95,
            degenerate_log_penalty: 0.1f64.ln(),
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_fp && self.p_fp < self.p_tp && self.p_tp <= 1.0) {
            return Err(Error::Config("need 0 <= p_fp < p_tp <= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if self.n_particles == 0 || self.max_cells == 0 {
            return Err(Error::Config("n_particles and max_cells must be at least 1".into()));
        }
        if !(self.kill_log_lr < self.confirm_log_lr) {
            return Err(Error::Config("kill_log_lr must be below confirm_log_lr".into()));
        }
        if self.process_noise.iter().chain(&self.birth_spread).chain(&self.fit_floor).any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise stddevs must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_u(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::invalid(format!("uncertainty {u} outside [0, 1]")))
    }
}

/// `p(o, u | x)` for a cell at set distance `d` (cells) from the track box.
pub fn pixel_likelihood(o: bool, u: f64, d: f64, params: &GridParams) -> Result<f64> {
    check_u(u)?;
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("distance {d} must be non-negative")));
    }
    let s = params.sigma;
    let near = params.p_fp + (params.p_tp - params.p_fp) * (-d * d / (2.0 * s * s)).exp();
    let p1 = near * (1.0 - u) + u / 2.0;
    Ok(if o { p1 } else { 1.0 - p1 })
}

/// `p(o, u | ∅)`: the same cell with no object nearby.
pub fn empty_likelihood(o: bool, u: f64, params: &GridParams) -> Result<f64> {
    check_u(u)?;
    let p1 = params.p_fp * (1.0 - u) + u / 2.0;
    Ok(if o { p1 } else { 1.0 - p1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub occupied: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Tight bound of the occupied cells, in pixels.
    pub bbox: Rect,
}

/// Clusters occupied cells linked within `link_radius` and attaches the
/// unoccupied cells within `boundary_radius` of any member.
pub fn cluster_grid(grid: &OccupancyGrid, params: &GridParams) -> Result<Vec<Cluster>> {
    grid.validate()?;
    let (w, h) = (grid.width as isize, grid.height as isize);
    let mut seen = vec![false; grid.len()];
    let mut stamp = vec![usize::MAX; grid.len()];
    let mut clusters = Vec::new();
    let lr = params.link_radius as isize;
    let br = params.boundary_radius as isize;
    for start in 0..grid.len() {
        if !grid.occupied[start] || seen[start] {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(c) = queue.pop_front() {
            members.push(c);
            let (x, y) = grid.coords(c);
            for dy in -lr..=lr {
                for dx in -lr..=lr {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let n = grid.index(nx as usize, ny as usize);
                    if grid.occupied[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        members.sort_unstable();
        let mut boundary = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &c in &members {
            let (x, y) = grid.coords(c);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -br..=br {
                for dx in -br..=br {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let n = grid.index(nx as usize, ny as usize);
                    if !grid.occupied[n] && stamp[n] != id {
                        stamp[n] = id;
                        boundary.push(n);
                    }
                }
            }
        }
        boundary.sort_unstable();
        let s = grid.cell_size;
        let bbox = Rect { x0: x0 as f64 * s, y0: y0 as f64 * s, x1: (x1 + 1) as f64 * s, y1: (y1 + 1) as f64 * s };
        clusters.push(Cluster { occupied: members, boundary, bbox });
    }
    Ok(clusters)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTrack {
    pub label: Label,
    pub state: GaussianState,
    pub log_lr: f64,
}

impl GridTrack {
    pub fn bbox(&self) -> BBox {
        self.state.bbox()
    }
}

/// Greedy association: candidate pairs with positive IoU or centers within
/// `gate_px`, taken by decreasing IoU then increasing center distance.
/// Returns, per cluster, the assigned track index or `None` for "new".
pub fn associate(clusters: &[Cluster], tracks: &[GridTrack], gate_px: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (ci, c) in clusters.iter().enumerate() {
        let cb = c.bbox.to_bbox();
        for (ti, t) in tracks.iter().enumerate() {
            let tb = t.bbox();
            let overlap = iou(&cb, &tb);
            let dist = (cb.cx - tb.cx).hypot(cb.cy - tb.cy);
            if overlap > 0.0 || dist <= gate_px {
                pairs.push((overlap, dist, ci, ti));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
    let mut out = vec![None; clusters.len()];
    let mut taken = vec![false; tracks.len()];
    for (_, _, ci, ti) in pairs {
        if out[ci].is_none() && !taken[ti] {
            out[ci] = Some(ti);
            taken[ti] = true;
        }
    }
    out
}

/// Constant-velocity prediction of a Gaussian state.
pub fn predict_state(g: &GaussianState, process_noise: &[f64; 3]) -> GaussianState {
    let mut f = StateCov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    let [p, s, v] = *process_noise;
    let q = StateCov::from_diagonal(&StateVec::new(p * p, p * p, s * s, s * s, v * v, v * v));
    let cov = f * g.cov * f.transpose() + q;
    GaussianState { mean: f * g.mean, cov: 0.5 * (cov + cov.transpose()) }
}

/// Evidence cells for one track update.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    /// `(cell rect, o, u)`.
    pub cells: Vec<(Rect, bool, f64)>,
    /// Multiplier on log sums, `N / S` after subsampling.
    pub scale: f64,
}

impl Evidence {
    /// Evidence from explicit cell indices, subsampled above `max_cells`.
    pub fn from_cells(grid: &OccupancyGrid, idx: &[usize], max_cells: usize, rng: &mut StreamRng) -> Self {
        let (chosen, scale): (Vec<usize>, f64) = if idx.len() > max_cells {
            let mut pick: Vec<usize> = sample_indices(rng, idx.len(), max_cells).into_iter().map(|i| idx[i]).collect();
            pick.sort_unstable();
            (pick, idx.len() as f64 / max_cells as f64)
        } else {
            (idx.to_vec(), 1.0)
        };
        Evidence { cells: chosen.into_iter().map(|i| (grid.cell_rect(i), grid.occupied[i], grid.uncertainty[i])).collect(), scale }
    }
}

/// Unoccupied cells within `gate_px` of `b`, the evidence for a track no
/// cluster was associated with.
pub fn missed_cells(grid: &OccupancyGrid, b: &BBox, gate_px: f64) -> Vec<usize> {
    let r = b.to_rect();
    let s = grid.cell_size;
    let lo = |v: f64, n: usize| (((v - gate_px) / s).floor().max(0.0) as usize).min(n);
    let hi = |v: f64, n: usize| (((v + gate_px) / s).ceil().max(0.0) as usize).min(n);
    let mut out = Vec::new();
    for y in lo(r.y0, grid.height)..hi(r.y1, grid.height) {
        for x in lo(r.x0, grid.width)..hi(r.x1, grid.width) {
            let i = grid.index(x, y);
            if !grid.occupied[i] && set_distance(&r, &grid.cell_rect(i)) <= gate_px {
                out.push(i);
            }
        }
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-likelihood of the evidence for one particle state.
pub fn log_particle_weight(x: &StateVec, ev: &Evidence, cell_size: f64, params: &GridParams) -> Result<f64> {
    let r = BBox::from_state(x, 1.0).to_rect();
    let mut sum = 0.0;
    for (cell, o, u) in &ev.cells {
        sum += pixel_likelihood(*o, *u, set_distance(&r, cell) / cell_size, params)?.ln();
    }
    Ok(sum * ev.scale)
}

/// `Σ ln p(o_i, u_i | ∅)` over the evidence cells.
pub fn log_empty(ev: &Evidence, params: &GridParams) -> Result<f64> {
    let mut sum = 0.0;
    for (_, o, u) in &ev.cells {
        sum += empty_likelihood(*o, *u, params)?.ln();
    }
    Ok(sum * ev.scale)
}

/// `log LR + log w̄ - Σ log p(o_i, u_i | ∅)`.
pub fn update_existence(log_lr: f64, log_wbar: f64, ev: &Evidence, params: &GridParams) -> Result<f64> {
    Ok(log_lr + log_wbar - log_empty(ev, params)?)
}

#[derive(Debug, Clone)]
pub struct TrackUpdate {
    pub track: GridTrack,
    pub log_wbar: f64,
    /// Every particle had zero likelihood.
    pub degenerate: bool,
}

/// Predicts a track, weighs `n_particles` samples against `ev`, refits the
/// Gaussian and updates the existence ratio.
pub fn update_track(track: &GridTrack, ev: &Evidence, cell_size: f64, params: &GridParams, rng: &mut StreamRng) -> Result<TrackUpdate> {
    let predicted = predict_state(&track.state, &params.process_noise);
    let l = predicted.cholesky_l()?;
    let xs: Vec<StateVec> = (0..params.n_particles).map(|_| predicted.sample_with(&l, rng)).collect();
    let lw = xs.iter().map(|x| log_particle_weight(x, ev, cell_size, params)).collect::<Result<Vec<_>>>()?;
    let lse = log_sum_exp(&lw);
    let log_wbar = lse - (lw.len() as f64).ln();
    if !lse.is_finite() {
        return Ok(TrackUpdate {
            track: GridTrack { label: track.label, state: predicted, log_lr: track.log_lr + params.degenerate_log_penalty },
            log_wbar,
            degenerate: true,
        });
    }
    let weighted: Vec<(StateVec, f64)> = xs.into_iter().zip(&lw).map(|(x, l)| (x, (l - lse).exp())).collect();
    let state = fit_gaussian(&weighted)?.floored(&params.fit_floor);
    let log_lr = update_existence(track.log_lr, log_wbar, ev, params)?;
    Ok(TrackUpdate { track: GridTrack { label: track.label, state, log_lr }, log_wbar, degenerate: false })
}

/// Births a track for every cluster with enough informative occupied
/// cells, then drops tracks whose log LR fell below the kill threshold.
pub fn birth_and_kill(
    mut tracks: Vec<GridTrack>,
    unassigned: &[&Cluster],
    grid: &OccupancyGrid,
    params: &GridParams,
    labels: &mut LabelAllocator,
) -> Vec<GridTrack> {
    tracks.retain(|t| t.log_lr >= params.kill_log_lr);
    for c in unassigned {
        let informative = c.occupied.iter().filter(|&&i| grid.uncertainty[i] <= params.birth_max_u).count();
        if informative < params.min_birth_cells {
            continue;
        }
        let b = c.bbox.to_bbox();
        let mean = StateVec::new(b.cx, b.cy, b.w, b.h, 0.0, 0.0);
        tracks.push(GridTrack {
            label: labels.fresh(),
            state: GaussianState::from_std(mean, &params.birth_spread),
            log_lr: params.birth_lr0,
        });
    }
    tracks
}

/// Per-frame result of the grid tracker.
#[derive(Debug, Clone)]
pub struct GridFrameReport {
    /// Confirmed tracks.
    pub output: TrackFrame,
    /// `(label, log LR)` of every live track after the update.
    pub log_lrs: Vec<(Label, f64)>,
    pub degenerate: Vec<Label>,
    /// Tracks whose update failed; they keep their previous state.
    pub errors: Vec<(Label, String)>,
}

pub struct GridTracker {
    params: GridParams,
    seed: u64,
    tracks: Vec<GridTrack>,
    labels: LabelAllocator,
}

impl GridTracker {
    pub fn new(params: GridParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(GridTracker { params, seed, tracks: Vec::new(), labels: LabelAllocator::new() })
    }

    pub fn tracks(&self) -> &[GridTrack] {
        &self.tracks
    }

    pub fn insert(&mut self, mut track: GridTrack) {
        self.labels.reserve_above(track.label);
        if track.label == 0 {
            track.label = self.labels.fresh();
        }
        self.tracks.push(track);
    }

    /// One frame: cluster, associate, update each track, birth and kill.
    pub fn process(&mut self, frame: usize, grid: &OccupancyGrid) -> Result<GridFrameReport> {
        let p = &self.params;
        let clusters = cluster_grid(grid, p)?;
        let assignment = associate(&clusters, &self.tracks, p.assoc_gate_px);
        let mut cluster_of = vec![None; self.tracks.len()];
        for (ci, a) in assignment.iter().enumerate() {
            if let Some(ti) = a {
                cluster_of[*ti] = Some(ci);
            }
        }
        let streams = FrameStreams::new(self.seed, frame as u64);
        let results: Vec<Result<TrackUpdate>> = self
            .tracks
            .par_iter()
            .zip(cluster_of.par_iter())
            .map(|(t, ci)| {
                let mut sub = streams.stream(t.label, Domain::GridSubsample);
                let ev = match ci {
                    Some(ci) => {
                        let c = &clusters[*ci];
                        let mut idx = c.occupied.clone();
                        idx.extend_from_slice(&c.boundary);
                        idx.sort_unstable();
                        Evidence::from_cells(grid, &idx, p.max_cells, &mut sub)
                    }
                    None => {
                        let predicted = predict_state(&t.state, &p.process_noise);
                        Evidence::from_cells(grid, &missed_cells(grid, &predicted.bbox(), p.assoc_gate_px), p.max_cells, &mut sub)
                    }
                };
                let mut rng = streams.stream(t.label, Domain::GridTrack);
                update_track(t, &ev, grid.cell_size, p, &mut rng)
            })
            .collect();
        let mut updated = Vec::with_capacity(self.tracks.len());
        let mut degenerate = Vec::new();
        let mut errors = Vec::new();
        for (t, r) in self.tracks.iter().zip(results) {
            match r {
                Ok(u) => {
                    if u.degenerate {
                        degenerate.push(t.label);
                    }
                    updated.push(u.track);
                }
                Err(e) => {
                    errors.push((t.label, e.to_string()));
                    updated.push(t.clone());
                }
            }
        }
        let unassigned: Vec<&Cluster> = clusters.iter().zip(&assignment).filter(|(_, a)| a.is_none()).map(|(c, _)| c).collect();
        self.tracks = birth_and_kill(updated, &unassigned, grid, p, &mut self.labels);
        let output = TrackFrame {
            frame,
            tracks: self
                .tracks
                .iter()
                .filter(|t| t.log_lr >= p.confirm_log_lr)
                .map(|t| TrackRecord {
                    label: t.label,
                    bbox: t.bbox().to_array(),
                    cov_diag: t.state.cov.diagonal().iter().copied().collect(),
                })
                .collect(),
        };
        let log_lrs = self.tracks.iter().map(|t| (t.label, t.log_lr)).collect();
        Ok(GridFrameReport { output, log_lrs, degenerate, errors })
    }
}
