//! Scenario files and the frame-by-frame ground-truth generator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    render_probability_map, render_raw_detections, step_world, DetectorModel, ImageSize, MotionNoise, ProbabilityMap, RawDetection,
    WorldObject,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::{substream, Domain};

/// Scenario object: either a parametric start box with constant velocity or
/// an explicit per-frame trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioObject {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<[f64; 4]>>,
    pub c_bar: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub ood: bool,
    /// First frame the object exists in.
    #[serde(default)]
    pub first_frame: usize,
    /// Last frame the object exists in (inclusive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_frame: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub image: ImageSize,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    pub objects: Vec<ScenarioObject>,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default)]
    pub motion_noise: MotionNoise,
    /// Objects whose center leaves the image by more than this are removed.
    #[serde(default)]
    pub margin: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Data(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("scenario: {m}")));
        if self.frames == 0 {
            return bad("frame count must be at least 1".into());
        }
        if !(self.image.w > 0.0 && self.image.h > 0.0) {
            return bad("image size must be positive".into());
        }
        let d = &self.detector;
        if d.grid.cells_w == 0 || d.grid.cells_h == 0 {
            return bad("grid dimensions must be positive".into());
        }
        for p in [d.background_p, d.id_p, d.ood_p] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability level {p} outside [0, 1]"));
            }
        }
        if d.clutter_rate < 0.0 || d.box_jitter < 0.0 || d.meas_noise < 0.0 || d.p_noise < 0.0 {
            return bad("detector noise and rates must be non-negative".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return bad(format!("duplicate object id {}", o.id));
            }
            if !(0.0..=1.0).contains(&o.c_bar) || !(o.jitter >= 0.0) {
                return bad(format!("object {}: c_bar must be in [0, 1] and jitter >= 0", o.id));
            }
            match (&o.start, &o.trajectory) {
                (Some(s), None) => {
                    BBox::new(s[0], s[1], s[2], s[3]).map_err(|e| Error::Data(format!("object {}: {e}", o.id)))?;
                }
                (None, Some(t)) => {
                    if t.is_empty() {
                        return bad(format!("object {}: empty trajectory", o.id));
                    }
                    for s in t {
                        BBox::new(s[0], s[1], s[2], s[3]).map_err(|e| Error::Data(format!("object {}: {e}", o.id)))?;
                    }
                }
                _ => return bad(format!("object {}: give exactly one of `start` or `trajectory`", o.id)),
            }
        }
        Ok(())
    }
}

/// Ground truth and detector inputs of one frame.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub frame: usize,
    pub objects: Vec<WorldObject>,
}

/// Deterministic simulation of a scenario for one seed.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    seed: u64,
    frames: Vec<SimFrame>,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, seed: u64) -> Self {
        let frames = generate_truth(scenario, seed);
        Simulation { scenario, seed, frames }
    }

    pub fn frames(&self) -> &[SimFrame] {
        &self.frames
    }

    pub fn raw_detections(&self, frame: usize) -> Vec<RawDetection> {
        let mut rng = substream(self.seed, frame as u64, 0, Domain::Detector);
        render_raw_detections(&self.frames[frame].objects, &self.scenario.detector, self.scenario.image, &mut rng)
    }

    pub fn probability_map(&self, frame: usize) -> ProbabilityMap {
        let mut rng = substream(self.seed, frame as u64, 0, Domain::Render);
        render_probability_map(&self.frames[frame].objects, &self.scenario.detector, self.scenario.image, &mut rng)
    }
}

fn world_object(o: &ScenarioObject, b: [f64; 4]) -> WorldObject {
    WorldObject {
        id: o.id,
        bbox: BBox { cx: b[0], cy: b[1], w: b[2], h: b[3] },
        velocity: o.velocity.unwrap_or([0.0, 0.0]),
        ood: o.ood,
        c_bar: o.c_bar,
        jitter: o.jitter,
    }
}

fn generate_truth(s: &Scenario, seed: u64) -> Vec<SimFrame> {
    let mut live: Vec<WorldObject> = Vec::new();
    let mut gone = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(s.frames);
    for f in 0..s.frames {
        if f > 0 {
            let mut rng = substream(seed, f as u64, 0, Domain::World);
            let before: Vec<u64> = live.iter().map(|o| o.id).collect();
            live = step_world(&live, &s.motion_noise, s.image, s.margin, &mut rng);
            for id in before {
                if !live.iter().any(|o| o.id == id) {
                    gone.insert(id);
                }
            }
        }
        for o in &s.objects {
            if let Some(start) = o.start.filter(|_| o.first_frame == f && !gone.contains(&o.id)) {
                live.push(world_object(o, start));
            }
        }
        let mut present = Vec::new();
        live.retain(|w| {
            let spec = s.objects.iter().find(|o| o.id == w.id).unwrap();
            spec.last_frame.is_none_or(|l| f <= l)
        });
        for w in &live {
            present.push(w.clone());
        }
        for o in &s.objects {
            if let Some(t) = &o.trajectory {
                if f >= o.first_frame && f - o.first_frame < t.len() && o.last_frame.is_none_or(|l| f <= l) {
                    present.push(world_object(o, t[f - o.first_frame]));
                }
            }
        }
        present.sort_by_key(|o| o.id);
        out.push(SimFrame { frame: f, objects: present });
    }
    out
}
