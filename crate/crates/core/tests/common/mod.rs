#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use uncertrack::geometry::{GaussianState, StateVec};
use uncertrack::grid_tracker::{cluster_grid, update_track, Evidence, GridParams, GridTrack, GridTracker};
use uncertrack::harness::suites;
use uncertrack::rfs::{empty_population, step, DetectionSource, FilterParams, ObjectModel};
use uncertrack::rng::{substream, Domain, FrameStreams, StreamRng};
use uncertrack::sim::grid::occupancy_of;
use uncertrack::sim::{to_occupancy_grid, OccupancyGrid, Simulation};

// ---------------------------------------------------------------------------
// 1D toy world: 10 cells, at most two objects.

pub const CELLS: u8 = 10;
const STAY: f64 = 0.6;
const HIT: f64 = 0.6;
const NEAR: f64 = 0.2;

pub fn toy_params(n_particles: usize) -> FilterParams {
    FilterParams { n_particles, p_detect: 0.8, clutter_rate: 0.5, birth_prob: 0.3, death_prob: 0.1, max_objects: 2 }
}

fn step_cell(x: u8, r: f64) -> u8 {
    if r < STAY {
        x
    } else if r < STAY + (1.0 - STAY) / 2.0 {
        x.saturating_sub(1)
    } else {
        (x + 1).min(CELLS - 1)
    }
}

/// `(next cell, probability)` of the random walk.
fn moves(x: u8) -> Vec<(u8, f64)> {
    let side = (1.0 - STAY) / 2.0;
    let mut out: BTreeMap<u8, f64> = BTreeMap::new();
    *out.entry(x).or_default() += STAY;
    *out.entry(x.saturating_sub(1)).or_default() += side;
    *out.entry((x + 1).min(CELLS - 1)).or_default() += side;
    out.into_iter().collect()
}

fn g(z: u8, x: u8) -> f64 {
    match z.abs_diff(x) {
        0 => HIT,
        1 => NEAR,
        _ => 0.0,
    }
}

pub struct Toy;

impl ObjectModel for Toy {
    type State = u8;
    type Measurement = u8;

    fn propagate(&self, x: &u8, rng: &mut StreamRng) -> u8 {
        step_cell(*x, rng.random())
    }
    fn spawn(&self, z: &u8, _rng: &mut StreamRng) -> u8 {
        *z
    }
    fn log_likelihood(&self, z: &u8, x: &u8) -> f64 {
        g(*z, *x).ln()
    }
    fn log_clutter_spatial(&self, _z: &u8) -> f64 {
        -(CELLS as f64).ln()
    }
    fn gated(&self, z: &u8, x: &u8) -> bool {
        z.abs_diff(*x) <= 1
    }
    fn cmp_state(&self, a: &u8, b: &u8) -> Ordering {
        a.cmp(b)
    }
    fn cmp_measurement(&self, a: &u8, b: &u8) -> Ordering {
        a.cmp(b)
    }
}

/// Ground truth and detections of the toy world for one seed.
pub fn toy_data(seed: u64, frames: usize) -> Vec<Vec<u8>> {
    let p = toy_params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clutter = Poisson::new(p.clutter_rate).unwrap();
    let mut objects: Vec<u8> = vec![2];
    let mut out = Vec::new();
    for k in 0..frames {
        if k == 3 {
            objects.push(7);
        }
        objects = objects.iter().map(|&x| step_cell(x, rng.random())).collect();
        let mut z = Vec::new();
        for &x in &objects {
            if rng.random::<f64>() < p.p_detect {
                let r: f64 = rng.random();
                let off = if r < HIT {
                    0
                } else if r < HIT + NEAR {
                    -1
                } else {
                    1
                };
                z.push((x as i32 + off).clamp(0, CELLS as i32 - 1) as u8);
            }
        }
        for _ in 0..clutter.sample(&mut rng) as usize {
            z.push(rng.random_range(0..CELLS));
        }
        out.push(z);
    }
    out
}

/// `(cell, tentative)` per object, in particle order.
type Hyp = Vec<(u8, bool)>;

/// Greedy gated likelihood written out for the toy model: pairs by
/// decreasing `g`, then object rank, then detection rank. Returns the log
/// weight and the surviving objects.
fn oracle_weigh(h: &Hyp, z: &[u8], p: &FilterParams) -> (f64, Hyp) {
    let rank = |n: usize, key: &dyn Fn(usize) -> u8| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by_key(|&i| (key(i), i));
        idx
    };
    let obj = rank(h.len(), &|i| h[i].0);
    let det = rank(z.len(), &|j| z[j]);
    let mut pairs = Vec::new();
    for (ri, &i) in obj.iter().enumerate() {
        for (rj, &j) in det.iter().enumerate() {
            let v = g(z[j], h[i].0);
            if v > 0.0 {
                pairs.push((v, ri, rj));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let kappa = p.clutter_rate / CELLS as f64;
    let mut used_o = vec![false; h.len()];
    let mut used_d = vec![false; z.len()];
    let mut lw = 0.0;
    for (v, ri, rj) in pairs {
        if used_o[ri] || used_d[rj] {
            continue;
        }
        used_o[ri] = true;
        used_d[rj] = true;
        lw += (p.p_detect * v / kappa).ln();
    }
    let mut kept = Hyp::new();
    for (ri, &i) in obj.iter().enumerate() {
        if !used_o[ri] && !h[i].1 {
            lw += (1.0 - p.p_detect).ln();
        }
    }
    for (i, o) in h.iter().enumerate() {
        let ri = obj.iter().position(|&k| k == i).unwrap();
        if used_o[ri] || !o.1 {
            kept.push((o.0, false));
        }
    }
    (lw, kept)
}

fn oracle_predict(dist: &BTreeMap<Hyp, f64>, p: &FilterParams) -> BTreeMap<Hyp, f64> {
    let mut out = BTreeMap::new();
    for (h, &q) in dist {
        let mut partial: Vec<(Hyp, f64)> = vec![(Hyp::new(), q)];
        for &(x, t) in h {
            let mut next = Vec::new();
            for (acc, w) in &partial {
                next.push((acc.clone(), w * p.death_prob));
                for (y, m) in moves(x) {
                    let mut a = acc.clone();
                    a.push((y, t));
                    next.push((a, w * (1.0 - p.death_prob) * m));
                }
            }
            partial = next;
        }
        for (h, w) in partial {
            *out.entry(h).or_insert(0.0) += w;
        }
    }
    out
}

fn oracle_birth(dist: &BTreeMap<Hyp, f64>, z: &[u8], p: &FilterParams) -> BTreeMap<Hyp, f64> {
    let mut order: Vec<u8> = z.to_vec();
    order.sort();
    let mut out = BTreeMap::new();
    for (h, &q) in dist {
        let mut partial: Vec<(Hyp, f64)> = vec![(h.clone(), q)];
        for &d in &order {
            let mut next = Vec::new();
            for (acc, w) in partial {
                if acc.len() >= p.max_objects || acc.iter().any(|o| o.0.abs_diff(d) <= 1) {
                    next.push((acc, w));
                    continue;
                }
                let mut born = acc.clone();
                born.push((d, true));
                next.push((born, w * p.birth_prob));
                next.push((acc, w * (1.0 - p.birth_prob)));
            }
            partial = next;
        }
        for (h, w) in partial {
            *out.entry(h).or_insert(0.0) += w;
        }
    }
    out
}

fn cardinality(dist: impl Iterator<Item = (usize, f64)>) -> [f64; 3] {
    let mut c = [0.0; 3];
    let mut total = 0.0;
    for (n, w) in dist {
        c[n] += w;
        total += w;
    }
    c.map(|v| v / total)
}

/// Exact posterior cardinality distributions, one per frame.
pub fn exact_cardinality(data: &[Vec<u8>], p: &FilterParams) -> Vec<[f64; 3]> {
    let mut dist: BTreeMap<Hyp, f64> = BTreeMap::from([(Hyp::new(), 1.0)]);
    let mut out = Vec::new();
    for z in data {
        let predicted = oracle_predict(&dist, p);
        let mut post: BTreeMap<Hyp, f64> = BTreeMap::new();
        for (h, q) in predicted {
            let (lw, kept) = oracle_weigh(&h, z, p);
            *post.entry(kept).or_insert(0.0) += q * lw.exp();
        }
        let total: f64 = post.values().sum();
        post.values_mut().for_each(|v| *v /= total);
        out.push(cardinality(post.iter().map(|(h, w)| (h.len(), *w))));
        dist = oracle_birth(&post, z, p);
    }
    out
}

/// Weighted cardinality distributions of the particle filter, one per frame.
pub fn filter_cardinality(data: &[Vec<u8>], p: &FilterParams, seed: u64) -> Vec<[f64; 3]> {
    let mut particles = empty_population::<u8>(p.n_particles);
    let mut out = Vec::new();
    for (k, z) in data.iter().enumerate() {
        let o = step(&particles, &DetectionSource::Shared(z), &Toy, p, FrameStreams::new(seed, k as u64)).unwrap();
        out.push(cardinality(o.weighted.iter().map(|q| (q.cardinality(), q.weight))));
        particles = o.particles;
    }
    out
}

pub fn total_variation(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Per-frame total variation between filter and exact posterior, averaged
/// over `seeds`.
pub fn mean_tv(seeds: u64, n_particles: usize, frames: usize) -> Vec<f64> {
    let p = toy_params(n_particles);
    mean_tv_between(seeds, &p, &p, frames)
}

/// Same, with the oracle run under `oracle` and the filter under `filter`.
pub fn mean_tv_between(seeds: u64, filter: &FilterParams, oracle: &FilterParams, frames: usize) -> Vec<f64> {
    let mut acc = vec![0.0; frames];
    for s in 0..seeds {
        let data = toy_data(1000 + s, frames);
        let exact = exact_cardinality(&data, oracle);
        let approx = filter_cardinality(&data, filter, s);
        for (k, (e, a)) in exact.iter().zip(&approx).enumerate() {
            acc[k] += total_variation(e, a) / seeds as f64;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Grid-track refit against dense integration along cx.

pub struct RefitCase {
    pub grid: OccupancyGrid,
    pub cells: Vec<usize>,
    pub track: GridTrack,
    pub params: GridParams,
}

/// One occupied 4 px cell (p = 0.9) on a background of probability
/// `background`, and a 1-cell track whose prior is spread along cx only.
pub fn refit_case(n_particles: usize, background: f64) -> RefitCase {
    let (bo, bu) = occupancy_of(background).unwrap();
    let mut grid = OccupancyGrid::uniform(20, 20, 4.0, bo, bu);
    let (o, u) = occupancy_of(0.9).unwrap();
    grid.set(10, 10, o, u);
    let params = GridParams { n_particles, process_noise: [0.0; 3], ..GridParams::default() };
    let c = cluster_grid(&grid, &params).unwrap().remove(0);
    let mut cells = c.occupied.clone();
    cells.extend(&c.boundary);
    cells.sort_unstable();
    let tiny = 1e-4;
    let track = GridTrack {
        label: 1,
        state: GaussianState::from_std(StateVec::new(45.0, 42.0, 4.0, 4.0, 0.0, 0.0), &[3.0, tiny, tiny, tiny, tiny, tiny]),
        log_lr: 0.0,
    };
    RefitCase { grid, cells, track, params }
}

fn cell_likelihood(o: bool, u: f64, d: f64, p: &GridParams) -> f64 {
    let s = p.sigma;
    let p1 = (p.p_fp + (p.p_tp - p.p_fp) * (-d * d / (2.0 * s * s)).exp()) * (1.0 - u) + u / 2.0;
    if o {
        p1
    } else {
        1.0 - p1
    }
}

/// Posterior mean of cx by quadrature on a 1e-3 px grid.
pub fn dense_posterior_cx(case: &RefitCase) -> f64 {
    let g = &case.grid;
    let m = case.track.state.mean;
    let sd = case.track.state.cov[(0, 0)].sqrt();
    let (cy, w, h) = (m[1], m[2], m[3]);
    let s = g.cell_size;
    let (mut num, mut den) = (0.0, 0.0);
    let steps = 48_000;
    for i in 0..=steps {
        let cx = m[0] - 8.0 * sd + 16.0 * sd * i as f64 / steps as f64;
        let (bx0, bx1, by0, by1) = (cx - w / 2.0, cx + w / 2.0, cy - h / 2.0, cy + h / 2.0);
        let mut lw = -0.5 * ((cx - m[0]) / sd).powi(2);
        for &c in &case.cells {
            let (x, y) = ((c % g.width) as f64, (c / g.width) as f64);
            let (cx0, cx1, cy0, cy1) = (x * s, (x + 1.0) * s, y * s, (y + 1.0) * s);
            let dx = (cx0 - bx1).max(bx0 - cx1).max(0.0);
            let dy = (cy0 - by1).max(by0 - cy1).max(0.0);
            lw += cell_likelihood(g.occupied[c], g.uncertainty[c], dx.hypot(dy) / s, &case.params).ln();
        }
        let wgt = lw.exp();
        num += wgt * cx;
        den += wgt;
    }
    num / den
}

pub fn dense_lw(case: &RefitCase, cx: f64) -> f64 {
    let g = &case.grid;
    let m = case.track.state.mean;
    let (cy, w, h) = (m[1], m[2], m[3]);
    let s = g.cell_size;
    let (bx0, bx1, by0, by1) = (cx - w / 2.0, cx + w / 2.0, cy - h / 2.0, cy + h / 2.0);
    let mut lw = 0.0;
    for &c in &case.cells {
        let (x, y) = ((c % g.width) as f64, (c / g.width) as f64);
        let (cx0, cx1, cy0, cy1) = (x * s, (x + 1.0) * s, y * s, (y + 1.0) * s);
        let dx = (cx0 - bx1).max(bx0 - cx1).max(0.0);
        let dy = (cy0 - by1).max(by0 - cy1).max(0.0);
        lw += cell_likelihood(g.occupied[c], g.uncertainty[c], dx.hypot(dy) / s, &case.params).ln();
    }
    lw
}

/// Refit cx mean from `update_track`.
pub fn refit_cx(case: &RefitCase, seed: u64) -> f64 {
    let mut sub = substream(seed, 0, 0, Domain::GridSubsample);
    let ev = Evidence::from_cells(&case.grid, &case.cells, case.params.max_cells, &mut sub);
    let mut rng = substream(seed, 0, 1, Domain::GridTrack);
    update_track(&case.track, &ev, case.grid.cell_size, &case.params, &mut rng).unwrap().track.state.mean[0]
}

// ---------------------------------------------------------------------------
// Grid throughput.

pub struct Throughput {
    pub fps: f64,
    pub confirmed: usize,
    pub cells: (usize, usize),
}

/// Frames per second of the grid tracker over 100 pre-rendered 240x160
/// frames of a five-object scene, on one thread.
pub fn grid_throughput() -> Throughput {
    let mut s = suites::clean_suite();
    s.objects.truncate(5);
    s.detector.grid.cells_w = 240;
    s.detector.grid.cells_h = 160;
    let sim = Simulation::new(&s, 7);
    let maps: Vec<_> = (0..100).map(|k| sim.probability_map(k)).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let mut t = GridTracker::new(GridParams::default(), 7).unwrap();
        let start = Instant::now();
        let mut confirmed = 0;
        for (k, m) in maps.iter().enumerate() {
            let g = to_occupancy_grid(m).unwrap();
            confirmed = t.process(k, &g).unwrap().output.tracks.len();
        }
        let secs = start.elapsed().as_secs_f64();
        Throughput { fps: maps.len() as f64 / secs, confirmed, cells: (maps[0].width, maps[0].height) }
    })
}
