//! CLEAR-MOT evaluation: MOTA, MOTP (mean `1 - IoU` over matches), and the
//! miss, mismatch and false-positive fractions.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::io::TrackFrame;

/// Minimum IoU for a match.
pub const MATCH_IOU: f64 = 0.5;

/// Minimum-cost assignment on a rectangular cost matrix. Returns, per row,
/// the assigned column (every row is assigned when `rows <= cols`).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    if m == 0 {
        return vec![None; n];
    }
    // work on the orientation with rows <= cols
    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // potentials method, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for (j, &pj) in p.iter().enumerate().skip(1) {
        if pj != 0 {
            let (r, c) = (pj - 1, j - 1);
            if transposed {
                out[c] = Some(r);
            } else {
                out[r] = Some(c);
            }
        }
    }
    out
}

/// Raw CLEAR-MOT counts; adding two counts concatenates sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt_total: usize,
    pub matches: usize,
    pub misses: usize,
    pub fps: usize,
    pub switches: usize,
    /// Sum of `1 - IoU` over matches.
    pub cost_sum: f64,
}

impl Add for MotCounts {
    type Output = MotCounts;
    fn add(self, o: MotCounts) -> MotCounts {
        MotCounts {
            gt_total: self.gt_total + o.gt_total,
            matches: self.matches + o.matches,
            misses: self.misses + o.misses,
            fps: self.fps + o.fps,
            switches: self.switches + o.switches,
            cost_sum: self.cost_sum + o.cost_sum,
        }
    }
}

impl AddAssign for MotCounts {
    fn add_assign(&mut self, o: MotCounts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mota: f64,
    pub motp: f64,
    pub miss: f64,
    pub mismatch: f64,
    pub fp: f64,
    pub counts: MotCounts,
}

impl MetricsReport {
    pub fn from_counts(c: MotCounts) -> Result<Self> {
        if c.gt_total == 0 {
            return Err(Error::Data("no ground-truth objects in the sequence".into()));
        }
        let g = c.gt_total as f64;
        let miss = c.misses as f64 / g;
        let fp = c.fps as f64 / g;
        let mismatch = c.switches as f64 / g;
        let motp = if c.matches > 0 { c.cost_sum / c.matches as f64 } else { 0.0 };
        let errors = (c.misses + c.fps + c.switches) as f64 / g;
        Ok(MetricsReport { mota: 1.0 - errors, motp, miss, mismatch, fp, counts: c })
    }

    pub const CSV_HEADER: &'static str = "seed,mota,motp,miss,mismatch,fp";

    pub fn csv_row(&self, seed: u64) -> String {
        format!("{seed},{},{},{},{},{}", self.mota, self.motp, self.miss, self.mismatch, self.fp)
    }
}

/// Matching of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt label, hypothesis label, IoU)`.
    pub pairs: Vec<(u64, u64, f64)>,
    pub counts: MotCounts,
}

/// Cross-frame CLEAR-MOT state.
#[derive(Debug, Clone, Default)]
pub struct MotAccumulator {
    prev: HashMap<u64, u64>,
    last_hyp: HashMap<u64, u64>,
    total: MotCounts,
    frames: Vec<FrameMatch>,
}

impl MotAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Matches one frame: last frame's pairs persist while IoU stays at or
    /// above the gate, the rest are assigned optimally on `1 - IoU`. A
    /// switch is counted whenever a ground-truth object is matched to a
    /// different hypothesis than at its previous match.
    pub fn match_frame(&mut self, hyps: &[(u64, BBox)], truth: &[(u64, BBox)]) -> FrameMatch {
        let mut gt_used = vec![false; truth.len()];
        let mut hyp_used = vec![false; hyps.len()];
        let mut pairs = Vec::new();
        for (gi, (g, gb)) in truth.iter().enumerate() {
            if let Some(h) = self.prev.get(g) {
                if let Some(hi) = hyps.iter().position(|(l, _)| l == h) {
                    let o = iou(gb, &hyps[hi].1);
                    if o >= MATCH_IOU && !hyp_used[hi] {
                        gt_used[gi] = true;
                        hyp_used[hi] = true;
                        pairs.push((gi, hi, o));
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..truth.len()).filter(|&i| !gt_used[i]).collect();
        let free_h: Vec<usize> = (0..hyps.len()).filter(|&i| !hyp_used[i]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            // gated pairs cost more than any feasible set of real matches
            let big = 1.0 + free_g.len().max(free_h.len()) as f64;
            let cost: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| {
                    free_h
                        .iter()
                        .map(|&hi| {
                            let o = iou(&truth[gi].1, &hyps[hi].1);
                            if o >= MATCH_IOU {
                                1.0 - o
                            } else {
                                big
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, c) in hungarian(&cost).into_iter().enumerate() {
                if let Some(c) = c {
                    let (gi, hi) = (free_g[r], free_h[c]);
                    let o = iou(&truth[gi].1, &hyps[hi].1);
                    if o >= MATCH_IOU {
                        pairs.push((gi, hi, o));
                    }
                }
            }
        }
        pairs.sort_by_key(|p| p.0);

        let mut counts = MotCounts { gt_total: truth.len(), matches: pairs.len(), ..Default::default() };
        counts.misses = truth.len() - pairs.len();
        counts.fps = hyps.len() - pairs.len();
        self.prev.clear();
        let mut out = Vec::with_capacity(pairs.len());
        for (gi, hi, o) in pairs {
            let (g, h) = (truth[gi].0, hyps[hi].0);
            if let Some(prev_h) = self.last_hyp.insert(g, h) {
                if prev_h != h {
                    counts.switches += 1;
                }
            }
            self.prev.insert(g, h);
            counts.cost_sum += 1.0 - o;
            out.push((g, h, o));
        }
        self.total += counts;
        let fm = FrameMatch { pairs: out, counts };
        self.frames.push(fm.clone());
        fm
    }

    pub fn counts(&self) -> MotCounts {
        self.total
    }

    pub fn frames(&self) -> &[FrameMatch] {
        &self.frames
    }

    pub fn report(&self) -> Result<MetricsReport> {
        MetricsReport::from_counts(self.total)
    }
}

fn boxes(f: &TrackFrame) -> Result<Vec<(u64, BBox)>> {
    f.tracks.iter().map(|t| Ok((t.label, t.bbox()?))).collect()
}

/// Evaluates hypothesis frames against truth frames. Frames are aligned by
/// index; a truth frame with no hypothesis line counts as an empty output.
pub fn evaluate(hyps: &[TrackFrame], truth: &[TrackFrame]) -> Result<MetricsReport> {
    let by_frame: BTreeMap<usize, &TrackFrame> = hyps.iter().map(|f| (f.frame, f)).collect();
    let mut acc = MotAccumulator::new();
    for t in truth {
        let h = match by_frame.get(&t.frame) {
            Some(f) => boxes(f)?,
            None => Vec::new(),
        };
        acc.match_frame(&h, &boxes(t)?);
    }
    acc.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::TrackRecord;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>) -> f64 {
            if r == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            let free_cols = used.iter().filter(|u| !**u).count();
            let rows_left = cost.len() - r;
            if rows_left > free_cols {
                // more rows than columns: this row may stay unassigned
                best = go(cost, r + 1, used);
            }
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r][c] + go(cost, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost[0].len()])
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(rows in 1usize..6, cols in 1usize..6, vals in prop::collection::vec(0.0..10.0f64, 36)) {
            let cost: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| vals[r * 6 + c]).collect()).collect();
            let a = hungarian(&cost);
            let assigned: Vec<usize> = a.iter().flatten().copied().collect();
            prop_assert_eq!(assigned.len(), rows.min(cols));
            let mut uniq = assigned.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), assigned.len());
            let total: f64 = a.iter().enumerate().filter_map(|(r, c)| c.map(|c| cost[r][c])).sum();
            prop_assert!((total - brute_force(&cost)).abs() < 1e-9);
        }
    }

    fn b(cx: f64, cy: f64) -> BBox {
        BBox::new(cx, cy, 20.0, 20.0).unwrap()
    }

    #[test]
    fn perfect_tracking() {
        let mut acc = MotAccumulator::new();
        for f in 0..5 {
            let t = vec![(1, b(10.0 + f as f64, 10.0)), (2, b(100.0, 50.0))];
            let h = vec![(7, t[0].1), (8, t[1].1)];
            let m = acc.match_frame(&h, &t);
            assert_eq!(m.pairs.len(), 2);
        }
        let r = acc.report().unwrap();
        assert_eq!((r.mota, r.motp, r.miss, r.fp, r.mismatch), (1.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn missing_hypothesis_is_a_miss() {
        let mut acc = MotAccumulator::new();
        let m = acc.match_frame(&[], &[(1, b(0.0, 0.0))]);
        assert_eq!(m.counts.misses, 1);
        assert!(MotAccumulator::new().report().is_err());
    }

    #[test]
    fn crossing_swap_counts_two_switches() {
        let mut acc = MotAccumulator::new();
        let mut switches = Vec::new();
        for f in 0..6 {
            let x = 10.0 * f as f64;
            let truth = vec![(1, b(50.0 + x, 0.0)), (2, b(150.0 - x, 0.0))];
            // labels follow the truth until frame 3, then swap
            let hyps = if f < 3 { vec![(10, truth[0].1), (20, truth[1].1)] } else { vec![(20, truth[0].1), (10, truth[1].1)] };
            switches.push(acc.match_frame(&hyps, &truth).counts.switches);
        }
        assert_eq!(switches, vec![0, 0, 0, 2, 0, 0]);
    }

    /// Ten gt-frames with two misses, one false positive and one switch.
    pub(crate) fn hand_fixture() -> (Vec<TrackFrame>, Vec<TrackFrame>) {
        let rec = |label, x: f64| TrackRecord { label, bbox: [x, 50.0, 20.0, 20.0], cov_diag: vec![] };
        let mut truth = Vec::new();
        let mut hyps = Vec::new();
        for f in 0..10 {
            let x = 100.0 + f as f64;
            truth.push(TrackFrame { frame: f, tracks: vec![rec(1, x)] });
            let tracks = match f {
                2 | 3 => vec![],
                5 => vec![rec(1, x), rec(9, 400.0)],
                f if f >= 7 => vec![rec(2, x)],
                _ => vec![rec(1, x)],
            };
            hyps.push(TrackFrame { frame: f, tracks });
        }
        (hyps, truth)
    }

    #[test]
    fn hand_traced_fixture() {
        let (hyps, truth) = hand_fixture();
        let r = evaluate(&hyps, &truth).unwrap();
        assert_eq!(r.counts.gt_total, 10);
        assert_eq!((r.counts.misses, r.counts.fps, r.counts.switches), (2, 1, 1));
        assert_eq!(r.mota, 0.6);
        assert!((r.mota - (1.0 - r.miss - r.fp - r.mismatch)).abs() < 1e-12);
    }

    #[test]
    fn counts_add_over_concatenation() {
        let (hyps, truth) = hand_fixture();
        let shift = |fs: &[TrackFrame], dl: u64| -> Vec<TrackFrame> {
            fs.iter()
                .map(|f| TrackFrame {
                    frame: f.frame + 10,
                    tracks: f.tracks.iter().map(|t| TrackRecord { label: t.label + dl, ..t.clone() }).collect(),
                })
                .collect()
        };
        let (hyps2, truth2) = (shift(&hyps, 100), shift(&truth, 50));
        let a = evaluate(&hyps, &truth).unwrap();
        let b2 = evaluate(&hyps2, &truth2).unwrap();
        let whole = evaluate(&[hyps, hyps2].concat(), &[truth, truth2].concat()).unwrap();
        assert_eq!(a.counts + b2.counts, whole.counts);
    }

    proptest! {
        #[test]
        fn relabeling_and_identity(seed in 0u64..500, offset in 1u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut acc = MotAccumulator::new();
            let mut acc2 = MotAccumulator::new();
            for _ in 0..8 {
                let truth: Vec<(u64, BBox)> = (0..3).map(|i| (i, b(100.0 * i as f64 + rng.random_range(-3.0..3.0), 0.0))).collect();
                let hyps: Vec<(u64, BBox)> = (0..rng.random_range(0..4u64))
                    .map(|i| (rng.random_range(0..4u64) * 10 + i, b(100.0 * i as f64 + rng.random_range(-8.0..8.0), 0.0)))
                    .collect();
                let renamed: Vec<(u64, BBox)> = hyps.iter().map(|(l, bb)| (l + offset * 1000, *bb)).collect();
                let m = acc.match_frame(&hyps, &truth);
                acc2.match_frame(&renamed, &truth);
                for (_, _, o) in m.pairs {
                    prop_assert!((0.0..=0.5).contains(&(1.0 - o)));
                }
            }
            let (r, r2) = (acc.report().unwrap(), acc2.report().unwrap());
            prop_assert_eq!(&r, &r2);
            prop_assert!((r.mota - (1.0 - r.miss - r.fp - r.mismatch)).abs() < 1e-12);
            prop_assert!(r.mota <= 1.0);
        }
    }
}
