//! Output frames: a labeled, most-probable summary of a weighted particle
//! population, and regeneration of the next population from it.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::Result;
use crate::geometry::{fit_gaussian, iou, mahalanobis, BBox, GaussianState, StateVec};
use crate::gmm::{fit_gmm_em_weighted, EmOptions};
use crate::io::{TrackFrame, TrackRecord};
use crate::rfs::{Label, MultiObjectParticle, TrackedObject};

pub type BoxParticle = MultiObjectParticle<StateVec>;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    pub label: Label,
    pub gaussian: GaussianState,
    /// Ranking weight the track was selected with.
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputFrame {
    /// Sorted by label.
    pub tracks: Vec<FrameTrack>,
}

impl OutputFrame {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn to_record(&self, frame: usize) -> TrackFrame {
        TrackFrame {
            frame,
            tracks: self
                .tracks
                .iter()
                .map(|t| TrackRecord {
                    label: t.label,
                    bbox: t.gaussian.bbox().to_array(),
                    cov_diag: t.gaussian.cov.diagonal().iter().copied().collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityBin {
    pub cardinality: usize,
    /// Indices into the particle slice the bins were built from.
    pub members: Vec<usize>,
    pub cum_weight: f64,
}

/// Hands out fresh labels, never reusing one.
#[derive(Debug, Clone, Default)]
pub struct LabelAllocator {
    next: Label,
}

impl LabelAllocator {
    pub fn new() -> Self {
        LabelAllocator { next: 1 }
    }

    pub fn fresh(&mut self) -> Label {
        let l = self.next.max(1);
        self.next = l + 1;
        l
    }

    /// Ensures future labels exceed every label already in use.
    pub fn reserve_above(&mut self, label: Label) {
        self.next = self.next.max(label + 1);
    }
}

/// One bin per distinct cardinality, in increasing cardinality order.
pub fn bin_particles(particles: &[BoxParticle]) -> Vec<CardinalityBin> {
    let mut map: BTreeMap<usize, CardinalityBin> = BTreeMap::new();
    for (i, p) in particles.iter().enumerate() {
        let b = map.entry(p.cardinality()).or_insert_with(|| CardinalityBin {
            cardinality: p.cardinality(),
            members: Vec::new(),
            cum_weight: 0.0,
        });
        b.members.push(i);
        b.cum_weight += p.weight;
    }
    map.into_values().collect()
}

/// Highest-weight bin; ties go to the larger cardinality.
pub fn winning_bin(bins: &[CardinalityBin]) -> Option<&CardinalityBin> {
    bins.iter().max_by(|a, b| a.cum_weight.total_cmp(&b.cum_weight).then(a.cardinality.cmp(&b.cardinality)))
}

/// Particle weights of `members`, falling back to uniform when all are zero.
fn member_weights(particles: &[BoxParticle], members: &[usize]) -> Vec<f64> {
    let w: Vec<f64> = members.iter().map(|&i| particles[i].weight.max(0.0)).collect();
    if w.iter().sum::<f64>() > 0.0 {
        w
    } else {
        vec![1.0; w.len()]
    }
}

/// Log weight of one object for refitting its state: the particle weight
/// with the other objects' likelihood terms divided out, i.e. the prior
/// weight times this object's own term.
fn object_log_weight(p: &BoxParticle, o: &TrackedObject<StateVec>) -> f64 {
    let others: f64 = p.objects.iter().map(|q| q.log_evidence).sum::<f64>() - o.log_evidence;
    p.weight.max(0.0).ln() - others
}

/// Exponentiates log weights relative to their maximum; uniform when none
/// is finite.
fn relative_weights(points: Vec<(StateVec, f64)>) -> Vec<(StateVec, f64)> {
    let max = points.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return points.into_iter().map(|(x, _)| (x, 1.0)).collect();
    }
    points.into_iter().map(|(x, l)| (x, (l - max).exp())).collect()
}

/// Knobs shared by output-frame extraction and regeneration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOptions {
    /// Candidate boxes overlapping at least this IoU describe one object.
    pub merge_iou: f64,
    /// Mahalanobis gate for handing frame labels to unlabeled objects.
    pub label_gate: f64,
    /// Minimum stddevs of the Gaussians the next population is drawn from.
    pub spread_floor: [f64; 6],
    pub em: EmOptions,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions { merge_iou: 0.5, label_gate: 3.0, spread_floor: [0.0; 6], em: EmOptions::default() }
    }
}

/// One object hypothesis of a bin: a label's refit Gaussian or a component
/// fit to the bin's unlabeled objects. Weights are expected counts per
/// particle.
#[derive(Debug, Clone)]
struct BinComponent {
    label: Option<Label>,
    weight: f64,
    gaussian: GaussianState,
}

/// Object hypotheses of one bin.
///
/// Labeled objects are grouped by label. An unlabeled object whose box
/// overlaps a label's provisional fit by `merge_iou` joins that label,
/// at most one object per particle and label. The remaining unlabeled
/// objects are pooled into a mixture with one component per object of the
/// bin, or one per overlap cluster of the pool when there are more (so
/// distinct objects are not averaged into one box), clamped to the point
/// count. A mixture component overlapping an
/// earlier, heavier hypothesis is folded into it, so a split cluster does
/// not become two objects.
///
/// Fits weight an object by its prior weight times its own likelihood term
/// (see `TrackedObject::log_evidence`), so one object's fit is not driven
/// by how well the rest of its particle matched. Labeled hypotheses come
/// first, in label order; mixture ones follow by decreasing weight.
fn bin_components<R: Rng + ?Sized>(
    particles: &[BoxParticle],
    bin: &CardinalityBin,
    opts: &FrameOptions,
    rng: &mut R,
) -> Result<Vec<BinComponent>> {
    if bin.cardinality == 0 {
        return Ok(Vec::new());
    }
    let w = member_weights(particles, &bin.members);
    let total: f64 = w.iter().sum();
    let mut groups: BTreeMap<Label, (Vec<(StateVec, f64)>, f64)> = BTreeMap::new();
    for (&i, &wi) in bin.members.iter().zip(&w) {
        for o in &particles[i].objects {
            if let Some(l) = o.label {
                let g = groups.entry(l).or_default();
                g.0.push((o.state, object_log_weight(&particles[i], o)));
                g.1 += wi / total;
            }
        }
    }
    let mut boxes = Vec::with_capacity(groups.len());
    for (l, (pts, _)) in &groups {
        boxes.push((*l, fit_gaussian(&relative_weights(pts.clone()))?.bbox()));
    }

    let mut expected = 0.0;
    let mut loose = Vec::new();
    for (&i, &wi) in bin.members.iter().zip(&w) {
        let p = &particles[i];
        let mut pairs = Vec::new();
        for (k, o) in p.objects.iter().enumerate().filter(|(_, o)| o.label.is_none()) {
            let b = BBox::from_state(&o.state, 1.0);
            for (l, lb) in &boxes {
                let v = iou(&b, lb);
                if v >= opts.merge_iou && !p.objects.iter().any(|q| q.label == Some(*l)) {
                    pairs.push((v, k, *l));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken_obj = Vec::new();
        let mut taken_label = Vec::new();
        for (_, k, l) in pairs {
            if taken_obj.contains(&k) || taken_label.contains(&l) {
                continue;
            }
            taken_obj.push(k);
            taken_label.push(l);
            let g = groups.get_mut(&l).expect("label has a group");
            g.0.push((p.objects[k].state, object_log_weight(p, &p.objects[k])));
            g.1 += wi / total;
        }
        for (k, o) in p.objects.iter().enumerate() {
            if o.label.is_none() && !taken_obj.contains(&k) {
                expected += wi / total;
                loose.push((o.state, object_log_weight(p, o)));
            }
        }
    }

    let mut comps = Vec::with_capacity(groups.len() + bin.cardinality);
    for (l, (pts, support)) in groups {
        comps.push(BinComponent { label: Some(l), weight: support, gaussian: fit_gaussian(&relative_weights(pts))? });
    }
    if !loose.is_empty() {
        let (pts, pw): (Vec<StateVec>, Vec<f64>) = relative_weights(loose).into_iter().unzip();
        let k = bin.cardinality.max(overlap_clusters(&pts, opts.merge_iou));
        let fit = fit_gmm_em_weighted(&pts, &pw, k, &opts.em, rng)?;
        let mut mixed: Vec<BinComponent> = fit
            .gmm
            .components
            .into_iter()
            .map(|c| BinComponent { label: None, weight: c.weight * expected, gaussian: c.gaussian })
            .collect();
        mixed.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        for c in mixed {
            let b = c.gaussian.bbox();
            let near = comps
                .iter()
                .enumerate()
                .map(|(k, d)| (k, iou(&b, &d.gaussian.bbox())))
                .filter(|(_, v)| *v >= opts.merge_iou)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match near {
                Some((k, _)) => comps[k].weight += c.weight,
                None => comps.push(c),
            }
        }
    }
    Ok(comps)
}

/// Number of leaders in a greedy overlap clustering of `pts`: a point
/// joins the first leader its box overlaps by `merge_iou`, else leads.
fn overlap_clusters(pts: &[StateVec], merge_iou: f64) -> usize {
    let mut leaders: Vec<BBox> = Vec::new();
    for p in pts {
        let b = BBox::from_state(p, 1.0);
        if !leaders.iter().any(|l| iou(&b, l) >= merge_iou) {
            leaders.push(b);
        }
    }
    leaders.len()
}

/// Object hypotheses of every bin, indexed like the bins.
#[derive(Debug, Clone)]
pub struct BinHypotheses {
    bins: Vec<(CardinalityBin, Vec<BinComponent>)>,
}

impl BinHypotheses {
    pub fn new<R: Rng + ?Sized>(particles: &[BoxParticle], bins: &[CardinalityBin], opts: &FrameOptions, rng: &mut R) -> Result<Self> {
        let bins = bins.iter().map(|b| Ok((b.clone(), bin_components(particles, b, opts, rng)?))).collect::<Result<_>>()?;
        Ok(BinHypotheses { bins })
    }

    /// Output frame from the winning bin. Its selected mixture hypotheses
    /// receive their fresh labels in place, so states later drawn from them
    /// carry the label.
    pub fn output_frame(&mut self, labels: &mut LabelAllocator) -> OutputFrame {
        let bins: Vec<CardinalityBin> = self.bins.iter().map(|(b, _)| b.clone()).collect();
        let Some(win) = winning_bin(&bins) else {
            return OutputFrame::default();
        };
        let idx = bins.iter().position(|b| b.cardinality == win.cardinality).expect("winner is a bin");
        select_tracks(&mut self.bins[idx].1, win.cardinality, labels)
    }
}

/// Ranks hypotheses by expected count and labels the top `c`.
fn select_tracks(comps: &mut [BinComponent], c: usize, labels: &mut LabelAllocator) -> OutputFrame {
    let mut order: Vec<usize> = (0..comps.len()).collect();
    // stable sort keeps labeled hypotheses (in label order) ahead on ties
    order.sort_by(|&a, &b| comps[b].weight.total_cmp(&comps[a].weight));
    order.truncate(c);
    let mut tracks: Vec<FrameTrack> = order
        .into_iter()
        .map(|k| {
            let cand = &mut comps[k];
            let label = match cand.label {
                Some(l) => {
                    labels.reserve_above(l);
                    l
                }
                None => labels.fresh(),
            };
            cand.label = Some(label);
            FrameTrack { label, gaussian: cand.gaussian.clone(), support: cand.weight }
        })
        .collect();
    tracks.sort_by_key(|t| t.label);
    OutputFrame { tracks }
}

/// Builds the output frame from the highest-weight cardinality bin: its
/// object hypotheses (see `bin_components`) are ranked by expected count,
/// the top `C` survive and mixture-sourced ones receive fresh labels.
pub fn build_output_frame<R: Rng + ?Sized>(
    particles: &[BoxParticle],
    bins: &[CardinalityBin],
    labels: &mut LabelAllocator,
    opts: &FrameOptions,
    rng: &mut R,
) -> Result<OutputFrame> {
    let Some(bin) = winning_bin(bins) else {
        return Ok(OutputFrame::default());
    };
    let mut comps = bin_components(particles, bin, opts, rng)?;
    Ok(select_tracks(&mut comps, bin.cardinality, labels))
}

/// Gives unlabeled objects the label of the nearest frame track within
/// `label_gate` (Mahalanobis under the track's covariance, its diagonal
/// floored at `spread_floor`). A particle never holds the same label twice;
/// closer pairs are assigned first.
pub fn assign_labels(objects: &mut [TrackedObject<StateVec>], frame: &OutputFrame, opts: &FrameOptions) -> Result<()> {
    let tracks: Vec<GaussianState> = frame.tracks.iter().map(|t| t.gaussian.floored(&opts.spread_floor)).collect();
    let mut pairs = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        if o.label.is_some() {
            continue;
        }
        for (t_idx, t) in frame.tracks.iter().enumerate() {
            if objects.iter().any(|q| q.label == Some(t.label)) {
                continue;
            }
            let d = mahalanobis(&o.state, &tracks[t_idx])?;
            if d <= opts.label_gate {
                pairs.push((d, i, t_idx));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, i, t_idx) in pairs {
        let l = frame.tracks[t_idx].label;
        if objects[i].label.is_none() && !objects.iter().any(|q| q.label == Some(l)) {
            objects[i].label = Some(l);
        }
    }
    Ok(())
}

fn sample_categorical<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|x| *x > 0.0).unwrap_or(w.len() - 1)
}

/// Draws `n` particles: a bin from the bin weights, then one state from
/// each of `C` of the bin's object hypotheses (see `bin_components`),
/// chosen without replacement in proportion to weight. A bin with fewer
/// hypotheses than `C` yields that many objects. A state drawn from a
/// labeled hypothesis keeps the label, including labels absent from this
/// frame; the others go through `assign_labels`.
///
/// `spread_floor` holds per-dimension minimum stddevs of the sampling
/// Gaussians. A fit carried by a few particles has almost no spread, and
/// without the floor its errors (a newborn's velocity, say) could only be
/// corrected through process noise.
pub fn sample_next_particles<R: Rng + ?Sized>(
    hyps: &BinHypotheses,
    frame: &OutputFrame,
    n: usize,
    opts: &FrameOptions,
    rng: &mut R,
) -> Result<Vec<BoxParticle>> {
    let mut mixtures = Vec::with_capacity(hyps.bins.len());
    for (_, comps) in &hyps.bins {
        let mut comps = comps.clone();
        for c in &mut comps {
            c.gaussian = c.gaussian.floored(&opts.spread_floor);
        }
        let factors = comps.iter().map(|c| c.gaussian.cholesky_l()).collect::<Result<Vec<_>>>()?;
        mixtures.push((comps, factors));
    }

    let bin_w: Vec<f64> = hyps.bins.iter().map(|(b, _)| b.cum_weight.max(0.0)).collect();
    let bin_w = if bin_w.iter().sum::<f64>() > 0.0 { bin_w } else { vec![1.0; bin_w.len()] };
    let mut out = Vec::with_capacity(n);
    if bin_w.is_empty() {
        out.resize(n, MultiObjectParticle::empty(1.0 / n as f64));
        return Ok(out);
    }
    for _ in 0..n {
        let bi = sample_categorical(&bin_w, rng);
        let (comps, factors) = &mixtures[bi];
        let count = hyps.bins[bi].0.cardinality.min(comps.len());
        let mut objects: Vec<TrackedObject<StateVec>> = Vec::with_capacity(count);
        let mut avail: Vec<f64> = comps.iter().map(|c| c.weight.max(1e-300)).collect();
        for _ in 0..count {
            let k = sample_categorical(&avail, rng);
            avail[k] = 0.0;
            let mut o = TrackedObject::new(comps[k].gaussian.sample_with(&factors[k], rng));
            o.label = comps[k].label.filter(|l| !objects.iter().any(|q| q.label == Some(*l)));
            objects.push(o);
        }
        assign_labels(&mut objects, frame, opts)?;
        out.push(MultiObjectParticle { objects, weight: 1.0 / n as f64 });
    }
    Ok(out)
}
