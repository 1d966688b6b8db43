//! Ground-truth worlds and an emulated uncertainty-aware detector.
//!
//! The detector produces per-object confidence scores (with OOD objects
//! fluctuating around a lower mean), Poisson clutter, sampled detection sets
//! where each box is kept with probability equal to its confidence, and
//! per-cell occupancy probability maps.

pub mod grid;
pub mod replay;
pub mod scenario;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub use grid::{render_probability_map, to_occupancy_grid, OccupancyGrid, ProbabilityMap};
pub use scenario::{Scenario, Simulation};

/// One simulated object in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub id: u64,
    pub bbox: BBox,
    pub velocity: [f64; 2],
    pub ood: bool,
    /// Mean detector confidence.
    pub c_bar: f64,
    /// Standard deviation of the per-frame confidence.
    pub jitter: f64,
}

/// A detector output before thresholding or sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawDetection {
    pub bbox: BBox,
    pub confidence: f64,
}

/// One realization of the detector's output set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSample {
    pub boxes: Vec<BBox>,
}

impl DetectionSample {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Process noise of the simulated world, in pixels per stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionNoise {
    pub pos: f64,
    pub size: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        MotionNoise { pos: 0.0, size: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDims {
    pub cells_w: usize,
    pub cells_h: usize,
}

impl Default for GridDims {
    fn default() -> Self {
        GridDims { cells_w: 240, cells_h: 160 }
    }
}

/// Parameters of the emulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    /// Stddev of the per-pass box perturbation of sampled detections (px).
    pub box_jitter: f64,
    /// Mean number of clutter detections per frame.
    pub clutter_rate: f64,
    /// Clutter confidence is uniform on this interval.
    pub clutter_conf: [f64; 2],
    /// Clutter box sides are uniform on this interval (px).
    pub clutter_size: [f64; 2],
    /// Stddev of the box regression error of raw detections (px).
    pub meas_noise: f64,
    pub background_p: f64,
    pub id_p: f64,
    pub ood_p: f64,
    /// Stddev of additive noise on the probability map.
    pub p_noise: f64,
    pub grid: GridDims,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            box_jitter: 2.0,
            clutter_rate: 2.0,
            clutter_conf: [0.3, 0.9],
            clutter_size: [20.0, 100.0],
            meas_noise: 2.0,
            background_p: 0.05,
            id_p: 0.95,
            ood_p: 0.6,
            p_noise: 0.0,
            grid: GridDims::default(),
        }
    }
}

/// Image extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSize {
    pub w: f64,
    pub h: f64,
}

impl Default for ImageSize {
    fn default() -> Self {
        ImageSize { w: 960.0, h: 640.0 }
    }
}

fn jittered_box<R: Rng + ?Sized>(b: &BBox, std: f64, rng: &mut R) -> BBox {
    if std <= 0.0 {
        return *b;
    }
    let mut n = || std * rng.sample::<f64, _>(StandardNormal);
    BBox { cx: b.cx + n(), cy: b.cy + n(), w: (b.w + n()).max(1.0), h: (b.h + n()).max(1.0) }
}

/// Advances every object by its velocity plus Gaussian noise. Objects whose
/// center leaves the image by more than `margin` pixels are dropped.
pub fn step_world<R: Rng + ?Sized>(
    objects: &[WorldObject],
    noise: &MotionNoise,
    image: ImageSize,
    margin: f64,
    rng: &mut R,
) -> Vec<WorldObject> {
    let mut out = Vec::with_capacity(objects.len());
    for o in objects {
        let mut b = o.bbox;
        b.cx += o.velocity[0];
        b.cy += o.velocity[1];
        if noise.pos > 0.0 {
            b.cx += noise.pos * rng.sample::<f64, _>(StandardNormal);
            b.cy += noise.pos * rng.sample::<f64, _>(StandardNormal);
        }
        if noise.size > 0.0 {
            b.w = (b.w + noise.size * rng.sample::<f64, _>(StandardNormal)).max(1.0);
            b.h = (b.h + noise.size * rng.sample::<f64, _>(StandardNormal)).max(1.0);
        }
        let inside = b.cx >= -margin && b.cx <= image.w + margin && b.cy >= -margin && b.cy <= image.h + margin;
        if inside {
            out.push(WorldObject { bbox: b, ..o.clone() });
        }
    }
    out
}

/// Emulates one network pass: one scored detection per object plus clutter.
pub fn render_raw_detections<R: Rng + ?Sized>(
    objects: &[WorldObject],
    model: &DetectorModel,
    image: ImageSize,
    rng: &mut R,
) -> Vec<RawDetection> {
    let mut out = Vec::with_capacity(objects.len() + 4);
    for o in objects {
        let eps: f64 = rng.sample(StandardNormal);
        let confidence = (o.c_bar + o.jitter * eps).clamp(0.0, 1.0);
        out.push(RawDetection { bbox: jittered_box(&o.bbox, model.meas_noise, rng), confidence });
    }
    if model.clutter_rate > 0.0 {
        let n = Poisson::new(model.clutter_rate).map(|p| p.sample(rng) as usize).unwrap_or(0);
        let [c0, c1] = model.clutter_conf;
        let [s0, s1] = model.clutter_size;
        for _ in 0..n {
            let bbox = BBox {
                cx: rng.random_range(0.0..image.w),
                cy: rng.random_range(0.0..image.h),
                w: uniform(rng, s0, s1).max(1.0),
                h: uniform(rng, s0, s1).max(1.0),
            };
            out.push(RawDetection { bbox, confidence: uniform(rng, c0, c1).clamp(0.0, 1.0) });
        }
    }
    out
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Samples a detection set: each raw box is kept iff `v < confidence` with
/// `v ~ U[0, 1)`, and kept boxes get an independent Gaussian jitter.
pub fn sample_detection_set<R: Rng + ?Sized>(raw: &[RawDetection], box_jitter: f64, rng: &mut R) -> DetectionSample {
    let mut boxes = Vec::with_capacity(raw.len());
    for d in raw {
        let v: f64 = rng.random();
        if v < d.confidence {
            boxes.push(jittered_box(&d.bbox, box_jitter, rng));
        }
    }
    DetectionSample { boxes }
}

/// Fixed-threshold detection set used by the baseline tracker.
pub fn threshold_detections(raw: &[RawDetection], threshold: f64) -> DetectionSample {
    DetectionSample { boxes: raw.iter().filter(|d| d.confidence >= threshold).map(|d| d.bbox).collect() }
}
