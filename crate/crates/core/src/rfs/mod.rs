//! Random-finite-set bootstrap particle filter in which every particle
//! carries its own sampled detection set.
//!
//! One filter step, per particle `i`:
//!
//! 1. predict every object through the motion model and survival process,
//! 2. draw a detection set `Z_i` from the detector's output distribution,
//! 3. weigh the particle by the multi-object likelihood of `Z_i`.
//!
//! Weights are then normalized and the population is resampled
//! systematically. Births are measurement driven: after resampling each
//! particle draws another detection set and births tentative objects at
//! detections that none of its objects explains. A tentative object must
//! be detected at its first weighting; otherwise it is discarded and
//! contributes nothing to the weight. An unconfirmed birth therefore never
//! reaches an output frame. The baseline tracker is the same
//! step with a single thresholded detection set shared by all particles.

pub mod box_model;
pub mod tracker;

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, FrameStreams, StreamRng};

pub use box_model::{BoxModel, BoxModelParams};
pub use tracker::{DetectionMode, RfsTracker, TrackerParams};

/// Persistent object identifier.
pub type Label = u64;

/// Dynamics, measurement and ordering model of a single object.
pub trait ObjectModel: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Measurement: Clone + Send + Sync + std::fmt::Debug;

    fn propagate(&self, x: &Self::State, rng: &mut StreamRng) -> Self::State;
    /// Initial state of an object born at measurement `z`.
    fn spawn(&self, z: &Self::Measurement, rng: &mut StreamRng) -> Self::State;
    /// `ln g(z | x)`.
    fn log_likelihood(&self, z: &Self::Measurement, x: &Self::State) -> f64;
    /// Log spatial density of clutter at `z` (per unit measurement volume).
    fn log_clutter_spatial(&self, z: &Self::Measurement) -> f64;
    /// Whether `z` may be associated with `x`.
    fn gated(&self, z: &Self::Measurement, x: &Self::State) -> bool;
    /// Whether `x` rules out a birth at `z`. Defaults to the association
    /// gate.
    fn blocks_birth(&self, z: &Self::Measurement, x: &Self::State) -> bool {
        self.gated(z, x)
    }
    fn cmp_state(&self, a: &Self::State, b: &Self::State) -> Ordering;
    fn cmp_measurement(&self, a: &Self::Measurement, b: &Self::Measurement) -> Ordering;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject<S> {
    pub state: S,
    pub label: Option<Label>,
    /// This object's own term of the last log weight (0 before its first
    /// weighting).
    pub log_evidence: f64,
    /// Born in the last birth pass and not weighed yet.
    pub tentative: bool,
}

impl<S> TrackedObject<S> {
    pub fn new(state: S) -> Self {
        TrackedObject { state, label: None, log_evidence: 0.0, tentative: false }
    }
}

/// One hypothesis of the full object set plus its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiObjectParticle<S> {
    pub objects: Vec<TrackedObject<S>>,
    pub weight: f64,
}

impl<S> MultiObjectParticle<S> {
    pub fn empty(weight: f64) -> Self {
        MultiObjectParticle { objects: Vec::new(), weight }
    }

    pub fn cardinality(&self) -> usize {
        self.objects.len()
    }
}

/// Model-independent filter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub n_particles: usize,
    pub p_detect: f64,
    /// Expected clutter detections per frame.
    pub clutter_rate: f64,
    pub birth_prob: f64,
    pub death_prob: f64,
    pub max_objects: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { n_particles: 50, p_detect: 0.9, clutter_rate: 2.0, birth_prob: 0.1, death_prob: 0.05, max_objects: 50 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is not a probability")))
            }
        };
        unit("p_detect", self.p_detect)?;
        unit("birth_prob", self.birth_prob)?;
        unit("death_prob", self.death_prob)?;
        if self.n_particles == 0 {
            return Err(Error::Config("n_particles must be at least 1".into()));
        }
        if !(self.clutter_rate > 0.0) || !self.clutter_rate.is_finite() {
            return Err(Error::Config("clutter_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Moves every object through the motion model; each survives
/// independently with probability `1 - death_prob`.
pub fn predict<M: ObjectModel>(
    particle: &MultiObjectParticle<M::State>,
    model: &M,
    params: &FilterParams,
    rng: &mut StreamRng,
) -> MultiObjectParticle<M::State> {
    let mut objects = Vec::with_capacity(particle.objects.len());
    for o in &particle.objects {
        let survives = params.death_prob <= 0.0 || rng.random::<f64>() >= params.death_prob;
        if survives {
            objects.push(TrackedObject {
                state: model.propagate(&o.state, rng),
                label: o.label,
                log_evidence: 0.0,
                tentative: o.tentative,
            });
        }
    }
    MultiObjectParticle { objects, weight: particle.weight }
}

fn canonical_order<T, F: Fn(&T, &T) -> Ordering>(items: &[T], cmp: F) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| cmp(&items[a], &items[b]).then(a.cmp(&b)));
    idx
}

/// Births an object at each detection no object blocks (see
/// `ObjectModel::blocks_birth`, including objects born earlier in this call) with probability `birth_prob`,
/// up to `max_objects`. Detections are visited in canonical order.
pub fn birth<M: ObjectModel>(
    particle: &MultiObjectParticle<M::State>,
    detections: &[M::Measurement],
    model: &M,
    params: &FilterParams,
    rng: &mut StreamRng,
) -> MultiObjectParticle<M::State> {
    let mut out = particle.clone();
    for j in canonical_order(detections, |a, b| model.cmp_measurement(a, b)) {
        if out.objects.len() >= params.max_objects {
            break;
        }
        let z = &detections[j];
        if out.objects.iter().any(|o| model.blocks_birth(z, &o.state)) {
            continue;
        }
        if rng.random::<f64>() < params.birth_prob {
            out.objects.push(TrackedObject { tentative: true, ..TrackedObject::new(model.spawn(z, rng)) });
        }
    }
    out
}

/// Log multi-object likelihood of `detections` relative to the
/// all-clutter hypothesis.
///
/// Detections are assigned greedily to objects: gated pairs are
/// taken in order of decreasing `ln g(z|x)`, ties broken by canonical
/// object rank and then canonical detection rank. An assigned object
/// contributes `ln(p_d g(z|x) / κ(z))`, an unassigned one `ln(1 - p_d)`
/// unless it is tentative; unassigned tentative objects and unassigned
/// detections contribute nothing.
pub fn log_weight<M: ObjectModel>(
    particle: &MultiObjectParticle<M::State>,
    detections: &[M::Measurement],
    model: &M,
    params: &FilterParams,
) -> f64 {
    log_weight_terms(particle, detections, model, params).total
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTerms {
    pub total: f64,
    /// Each object's own term, indexed like `particle.objects`; `None` for a
    /// tentative object left undetected. The terms sum to the total up to
    /// rounding.
    pub terms: Vec<Option<f64>>,
}

/// `log_weight` together with each object's own term.
pub fn log_weight_terms<M: ObjectModel>(
    particle: &MultiObjectParticle<M::State>,
    detections: &[M::Measurement],
    model: &M,
    params: &FilterParams,
) -> WeightTerms {
    let objects = &particle.objects;
    let obj_order = canonical_order(objects, |a, b| model.cmp_state(&a.state, &b.state));
    let det_order = canonical_order(detections, |a, b| model.cmp_measurement(a, b));

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ri, &i) in obj_order.iter().enumerate() {
        let x = &objects[i].state;
        for (rj, &j) in det_order.iter().enumerate() {
            if model.gated(&detections[j], x) {
                pairs.push((model.log_likelihood(&detections[j], x), ri, rj));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let ln_pd = params.p_detect.ln();
    let ln_miss = (1.0 - params.p_detect).ln();
    let ln_rate = params.clutter_rate.ln();
    let mut obj_used = vec![false; objects.len()];
    let mut det_used = vec![false; detections.len()];
    let mut terms = vec![None; objects.len()];
    let mut total = 0.0;
    for (s, ri, rj) in pairs {
        if obj_used[ri] || det_used[rj] {
            continue;
        }
        obj_used[ri] = true;
        det_used[rj] = true;
        let z = &detections[det_order[rj]];
        let t = ln_pd + s - (ln_rate + model.log_clutter_spatial(z));
        terms[obj_order[ri]] = Some(t);
        total += t;
    }
    let mut missed = 0;
    for (ri, used) in obj_used.iter().enumerate() {
        let k = obj_order[ri];
        if !used && !objects[k].tentative {
            terms[k] = Some(ln_miss);
            missed += 1;
        }
    }
    if missed > 0 {
        total += missed as f64 * ln_miss;
    }
    WeightTerms { total, terms }
}

/// Unnormalized particle weight, `exp(log_weight)`.
pub fn weigh<M: ObjectModel>(
    particle: &MultiObjectParticle<M::State>,
    detections: &[M::Measurement],
    model: &M,
    params: &FilterParams,
) -> f64 {
    log_weight(particle, detections, model, params).exp()
}

/// Systematic resampling: indices of the `n` selected ancestors.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    if weights.is_empty() || n == 0 {
        return out;
    }
    let step = 1.0 / n as f64;
    let u0: f64 = rng.random::<f64>() * step;
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 * step;
        while u > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
    }
    out
}

/// Result of one filter step.
#[derive(Debug, Clone)]
pub struct StepOutcome<S> {
    /// Particles after weighting, weights normalized to one.
    pub weighted: Vec<MultiObjectParticle<S>>,
    /// Systematically resampled population with uniform weights.
    pub particles: Vec<MultiObjectParticle<S>>,
    /// Every particle had zero likelihood; weights were reset to uniform.
    pub degenerate: bool,
}

/// Normalizes log-weights into `weighted`. Returns true on degeneracy.
fn normalize<S>(particles: &mut [MultiObjectParticle<S>], log_w: &[f64]) -> bool {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = particles.len() as f64;
    if !max.is_finite() {
        for p in particles.iter_mut() {
            p.weight = 1.0 / n;
        }
        return true;
    }
    let prior: Vec<f64> = particles.iter().map(|p| p.weight.max(0.0)).collect();
    let un: Vec<f64> = log_w.iter().zip(&prior).map(|(l, w)| w * (l - max).exp()).collect();
    let total: f64 = un.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        for p in particles.iter_mut() {
            p.weight = 1.0 / n;
        }
        return true;
    }
    for (p, u) in particles.iter_mut().zip(un) {
        p.weight = u / total;
    }
    false
}

/// Where each particle's detection set comes from.
pub enum DetectionSource<'a, Z> {
    /// Every particle draws its own set from a per-particle stream.
    Sampled(&'a (dyn Fn(&mut StreamRng) -> Result<Vec<Z>> + Sync)),
    /// One set shared by every particle.
    Shared(&'a [Z]),
}

impl<Z: Clone> DetectionSource<'_, Z> {
    fn for_particle(&self, i: usize, streams: FrameStreams, domain: Domain) -> Result<Vec<Z>> {
        match self {
            DetectionSource::Sampled(f) => f(&mut streams.stream(i as u64, domain)),
            DetectionSource::Shared(z) => Ok(z.to_vec()),
        }
    }
}

/// Predicts, weighs and resamples the population, discarding tentative
/// objects that went undetected. No births.
pub fn update<M: ObjectModel>(
    particles: &[MultiObjectParticle<M::State>],
    source: &DetectionSource<M::Measurement>,
    model: &M,
    params: &FilterParams,
    streams: FrameStreams,
) -> Result<StepOutcome<M::State>> {
    if particles.is_empty() {
        return Err(Error::invalid("particle population is empty"));
    }
    let per_particle: Vec<Result<(MultiObjectParticle<M::State>, f64)>> = particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let dets = source.for_particle(i, streams, Domain::DetectionSample)?;
            let mut rng = streams.stream(i as u64, Domain::Dynamics);
            let mut predicted = predict(p, model, params, &mut rng);
            let w = log_weight_terms(&predicted, &dets, model, params);
            predicted.objects = predicted
                .objects
                .into_iter()
                .zip(w.terms)
                .filter_map(|(o, t)| t.map(|t| TrackedObject { log_evidence: t, tentative: false, ..o }))
                .collect();
            Ok((predicted, w.total))
        })
        .collect();
    let mut weighted = Vec::with_capacity(particles.len());
    let mut log_w = Vec::with_capacity(particles.len());
    for r in per_particle {
        let (p, lw) = r?;
        weighted.push(p);
        log_w.push(lw);
    }
    let degenerate = normalize(&mut weighted, &log_w);

    let n = params.n_particles;
    let mut rng = streams.stream(u64::MAX, Domain::Resample);
    let weights: Vec<f64> = weighted.iter().map(|p| p.weight).collect();
    let idx = systematic_resample(&weights, n, &mut rng);
    let particles = idx.into_iter().map(|i| MultiObjectParticle { objects: weighted[i].objects.clone(), weight: 1.0 / n as f64 }).collect();
    Ok(StepOutcome { weighted, particles, degenerate })
}

/// Measurement-driven births on every particle of `particles`, each from
/// its own detection set (a fresh draw when sampled).
pub fn birth_all<M: ObjectModel>(
    particles: &[MultiObjectParticle<M::State>],
    source: &DetectionSource<M::Measurement>,
    model: &M,
    params: &FilterParams,
    streams: FrameStreams,
) -> Result<Vec<MultiObjectParticle<M::State>>> {
    particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let dets = source.for_particle(i, streams, Domain::BirthSample)?;
            Ok(birth(p, &dets, model, params, &mut streams.stream(i as u64, Domain::Birth)))
        })
        .collect()
}

/// A full filter step: `update`, then births on the resampled population.
/// `weighted` holds no objects born in this step.
pub fn step<M: ObjectModel>(
    particles: &[MultiObjectParticle<M::State>],
    source: &DetectionSource<M::Measurement>,
    model: &M,
    params: &FilterParams,
    streams: FrameStreams,
) -> Result<StepOutcome<M::State>> {
    let mut out = update(particles, source, model, params, streams)?;
    out.particles = birth_all(&out.particles, source, model, params, streams)?;
    Ok(out)
}

/// Initial population: `n` empty particles with uniform weights.
pub fn empty_population<S>(n: usize) -> Vec<MultiObjectParticle<S>> {
    (0..n).map(|_| MultiObjectParticle::empty(1.0 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn resample_uniform_weights_is_identity() {
        let mut rng = substream(1, 0, 0, Domain::Resample);
        let idx = systematic_resample(&[0.25; 4], 4, &mut rng);
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn resample_preserves_expected_multiplicity() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let n = 20;
        let trials = 10_000;
        let mut counts = vec![0usize; w.len()];
        for t in 0..trials {
            let mut rng = substream(2, t, 0, Domain::Resample);
            for i in systematic_resample(&w, n, &mut rng) {
                counts[i] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let mean = c as f64 / trials as f64;
            let expected = n as f64 * w[i];
            // systematic copy counts take floor/ceil of N w, so the per-trial
            // variance is at most 1/4
            let sigma = (0.25 / trials as f64).sqrt();
            assert!((mean - expected).abs() < 3.0 * sigma.max(1e-3), "i={i} mean={mean} expected={expected}");
        }
    }

    #[test]
    fn resample_counts_are_floor_or_ceil() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        for t in 0..200 {
            let mut rng = substream(3, t, 0, Domain::Resample);
            let idx = systematic_resample(&w, 7, &mut rng);
            assert_eq!(idx.len(), 7);
            for (i, wi) in w.iter().enumerate() {
                let c = idx.iter().filter(|&&k| k == i).count() as f64;
                assert!((c - 7.0 * wi).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn normalize_flags_all_zero() {
        let mut ps: Vec<MultiObjectParticle<u8>> = empty_population(3);
        assert!(normalize(&mut ps, &[f64::NEG_INFINITY; 3]));
        assert!(ps.iter().all(|p| (p.weight - 1.0 / 3.0).abs() < 1e-15));
        assert!(!normalize(&mut ps, &[0.0, 1.0, f64::NEG_INFINITY]));
        assert_eq!(ps[2].weight, 0.0);
        assert!((ps.iter().map(|p| p.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
