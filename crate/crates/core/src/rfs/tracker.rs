//! Frame-by-frame driver tying the particle filter to output frames.

use serde::{Deserialize, Serialize};

use super::{birth_all, empty_population, update, BoxModel, BoxModelParams, DetectionSource, FilterParams};
use crate::error::{Error, Result};
use crate::gmm::EmOptions;
use crate::output_frame::{
    assign_labels, bin_particles, build_output_frame, sample_next_particles, BinHypotheses, BoxParticle, FrameOptions, LabelAllocator,
    OutputFrame,
};
use crate::rng::{Domain, FrameStreams, StreamRng};
use crate::sim::{sample_detection_set, threshold_detections, ImageSize, RawDetection};

/// How the next population is formed after an output frame is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regeneration {
    /// Keep the resampled particles and label them against the frame.
    Resample,
    /// Draw fresh particles from per-bin mixtures.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub n_particles: usize,
    pub p_detect: f64,
    pub clutter_rate: f64,
    pub birth_prob: f64,
    pub death_prob: f64,
    pub max_objects: usize,
    /// Stddevs for position, size, velocity (px per stage).
    pub process_noise: [f64; 3],
    /// Stddevs for `cx, cy, w, h` (px).
    pub meas_noise: [f64; 4],
    pub birth_spread: [f64; 6],
    pub assoc_gate: f64,
    /// Detections overlapping an object by more than this IoU birth nothing.
    pub birth_iou: f64,
    pub label_gate: f64,
    /// Candidate boxes overlapping at least this IoU describe one object.
    pub merge_iou: f64,
    /// Minimum stddevs of the Gaussians the next population is drawn from
    /// (mixture regeneration only).
    pub spread_floor: [f64; 6],
    /// Confidence threshold of the baseline tracker.
    pub threshold: f64,
    pub regeneration: Regeneration,
    pub em: EmOptions,
}

impl Default for TrackerParams {
    fn default() -> Self {
        let f = FilterParams::default();
        let m = BoxModelParams::default();
        TrackerParams {
            n_particles: f.n_particles,
            p_detect: f.p_detect,
            clutter_rate: f.clutter_rate,
            birth_prob: f.birth_prob,
            death_prob: f.death_prob,
            max_objects: f.max_objects,
            process_noise: m.process_noise,
            meas_noise: m.meas_noise,
            birth_spread: m.birth_spread,
            assoc_gate: m.gate,
            birth_iou: m.birth_iou,
            label_gate: 3.0,
            merge_iou: 0.5,
            spread_floor: [2.0, 2.0, 1.0, 1.0, 1.0, 1.0],
            threshold: 0.7,
            regeneration: Regeneration::Mixture,
            em: EmOptions::default(),
        }
    }
}

impl TrackerParams {
    pub fn frame_options(&self) -> FrameOptions {
        FrameOptions { merge_iou: self.merge_iou, label_gate: self.label_gate, spread_floor: self.spread_floor, em: self.em }
    }

    pub fn filter(&self) -> FilterParams {
        FilterParams {
            n_particles: self.n_particles,
            p_detect: self.p_detect,
            clutter_rate: self.clutter_rate,
            birth_prob: self.birth_prob,
            death_prob: self.death_prob,
            max_objects: self.max_objects,
        }
    }

    pub fn box_model(&self, image: ImageSize, clutter_size: [f64; 2]) -> BoxModel {
        BoxModel::new(BoxModelParams {
            process_noise: self.process_noise,
            meas_noise: self.meas_noise,
            birth_spread: self.birth_spread,
            gate: self.assoc_gate,
            birth_iou: self.birth_iou,
            image,
            clutter_size,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.filter().validate()?;
        let positive = self.meas_noise.iter().all(|s| *s > 0.0 && s.is_finite());
        let non_neg = self.process_noise.iter().chain(&self.birth_spread).chain(&self.spread_floor).all(|s| *s >= 0.0 && s.is_finite());
        if !positive || !non_neg {
            return Err(Error::Config("noise stddevs must be finite, measurement noise positive".into()));
        }
        if !(self.assoc_gate > 0.0 && self.label_gate > 0.0) {
            return Err(Error::Config("gates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.birth_iou) {
            return Err(Error::Config("birth_iou must lie in [0, 1]".into()));
        }
        if !(self.merge_iou > 0.0 && self.merge_iou <= 1.0) {
            return Err(Error::Config("merge_iou must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if self.em.max_iters == 0 {
            return Err(Error::Config("em.max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which detection sets the particles see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionMode {
    /// Every particle samples its own set; kept boxes get this jitter (px).
    Uncertainty { box_jitter: f64 },
    /// One thresholded set shared by all particles.
    Baseline { threshold: f64 },
}

#[derive(Debug, Clone)]
pub struct FrameReport {
    pub frame: OutputFrame,
    pub degenerate: bool,
}

pub struct RfsTracker {
    model: BoxModel,
    params: TrackerParams,
    mode: DetectionMode,
    seed: u64,
    particles: Vec<BoxParticle>,
    labels: LabelAllocator,
}

impl RfsTracker {
    pub fn new(params: TrackerParams, mode: DetectionMode, model: BoxModel, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(RfsTracker { particles: empty_population(params.n_particles), model, params, mode, seed, labels: LabelAllocator::new() })
    }

    pub fn particles(&self) -> &[BoxParticle] {
        &self.particles
    }

    /// Runs one frame and returns its output frame.
    pub fn process(&mut self, frame: usize, raw: &[RawDetection]) -> Result<FrameReport> {
        let streams = FrameStreams::new(self.seed, frame as u64);
        let filter = self.params.filter();
        let (jitter, shared) = match self.mode {
            DetectionMode::Uncertainty { box_jitter } => (box_jitter, Vec::new()),
            DetectionMode::Baseline { threshold } => (0.0, threshold_detections(raw, threshold).boxes),
        };
        let sampler = |rng: &mut StreamRng| Ok(sample_detection_set(raw, jitter, rng).boxes);
        let source = match self.mode {
            DetectionMode::Uncertainty { .. } => DetectionSource::Sampled(&sampler),
            DetectionMode::Baseline { .. } => DetectionSource::Shared(&shared),
        };
        let outcome = update(&self.particles, &source, &self.model, &filter, streams)?;

        let bins = bin_particles(&outcome.weighted);
        let opts = self.params.frame_options();
        let mut rng = streams.stream(0, Domain::OutputFrame);
        let (out, next) = match self.params.regeneration {
            Regeneration::Resample => {
                let out = build_output_frame(&outcome.weighted, &bins, &mut self.labels, &opts, &mut rng)?;
                let mut ps = outcome.particles;
                for p in &mut ps {
                    assign_labels(&mut p.objects, &out, &opts)?;
                }
                (out, ps)
            }
            Regeneration::Mixture => {
                let mut hyps = BinHypotheses::new(&outcome.weighted, &bins, &opts, &mut rng)?;
                let out = hyps.output_frame(&mut self.labels);
                let mut rng = streams.stream(0, Domain::Regenerate);
                let ps = sample_next_particles(&hyps, &out, self.params.n_particles, &opts, &mut rng)?;
                (out, ps)
            }
        };
        self.particles = birth_all(&next, &source, &self.model, &filter, streams)?;
        Ok(FrameReport { frame: out, degenerate: outcome.degenerate })
    }
}
