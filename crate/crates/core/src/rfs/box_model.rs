//! Constant-velocity box objects observed as `(cx, cy, w, h)` boxes with
//! diagonal Gaussian noise.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::StandardNormal;

use super::ObjectModel;
use crate::geometry::{cmp_states, iou, BBox, StateVec};
use crate::rng::StreamRng;
use crate::sim::ImageSize;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxModelParams {
    /// Process noise stddevs for position, size and velocity.
    pub process_noise: [f64; 3],
    /// Measurement noise stddevs for `cx, cy, w, h`.
    pub meas_noise: [f64; 4],
    /// Stddevs of a newborn's state around its detection (zero velocity).
    pub birth_spread: [f64; 6],
    /// Mahalanobis gate in measurement space.
    pub gate: f64,
    /// A detection overlapping an object's box by more than this IoU, or
    /// inside its gate, births nothing.
    pub birth_iou: f64,
    pub image: ImageSize,
    /// Range of clutter box sides, used for the clutter density.
    pub clutter_size: [f64; 2],
}

impl Default for BoxModelParams {
    fn default() -> Self {
        BoxModelParams {
            process_noise: [1.0, 0.5, 0.5],
            meas_noise: [4.0; 4],
            birth_spread: [2.0, 2.0, 2.0, 2.0, 2.0, 2.0],
            gate: 3.0,
            birth_iou: 0.0,
            image: ImageSize::default(),
            clutter_size: [20.0, 100.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxModel {
    pub params: BoxModelParams,
    log_norm: f64,
    log_clutter: f64,
}

impl BoxModel {
    pub fn new(params: BoxModelParams) -> Self {
        let log_norm = -2.0 * (2.0 * std::f64::consts::PI).ln() - params.meas_noise.iter().map(|s| s.ln()).sum::<f64>();
        let span = (params.clutter_size[1] - params.clutter_size[0]).max(1.0);
        let volume = params.image.w * params.image.h * span * span;
        BoxModel { params, log_norm, log_clutter: -volume.ln() }
    }

    fn sq_dist(&self, z: &BBox, x: &StateVec) -> f64 {
        let d = [z.cx - x[0], z.cy - x[1], z.w - x[2], z.h - x[3]];
        d.iter().zip(&self.params.meas_noise).map(|(d, s)| (d / s) * (d / s)).sum()
    }
}

fn n(rng: &mut StreamRng, std: f64) -> f64 {
    if std > 0.0 {
        std * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    }
}

impl ObjectModel for BoxModel {
    type State = StateVec;
    type Measurement = BBox;

    fn propagate(&self, x: &StateVec, rng: &mut StreamRng) -> StateVec {
        let [pos, size, vel] = self.params.process_noise;
        StateVec::new(
            x[0] + x[4] + n(rng, pos),
            x[1] + x[5] + n(rng, pos),
            (x[2] + n(rng, size)).max(1.0),
            (x[3] + n(rng, size)).max(1.0),
            x[4] + n(rng, vel),
            x[5] + n(rng, vel),
        )
    }

    fn spawn(&self, z: &BBox, rng: &mut StreamRng) -> StateVec {
        let s = self.params.birth_spread;
        StateVec::new(
            z.cx + n(rng, s[0]),
            z.cy + n(rng, s[1]),
            (z.w + n(rng, s[2])).max(1.0),
            (z.h + n(rng, s[3])).max(1.0),
            n(rng, s[4]),
            n(rng, s[5]),
        )
    }

    fn log_likelihood(&self, z: &BBox, x: &StateVec) -> f64 {
        self.log_norm - 0.5 * self.sq_dist(z, x)
    }

    fn log_clutter_spatial(&self, _z: &BBox) -> f64 {
        self.log_clutter
    }

    fn gated(&self, z: &BBox, x: &StateVec) -> bool {
        self.sq_dist(z, x) <= self.params.gate * self.params.gate
    }

    fn blocks_birth(&self, z: &BBox, x: &StateVec) -> bool {
        self.gated(z, x) || iou(z, &BBox::from_state(x, 1.0)) > self.params.birth_iou
    }

    fn cmp_state(&self, a: &StateVec, b: &StateVec) -> Ordering {
        cmp_states(a, b)
    }

    fn cmp_measurement(&self, a: &BBox, b: &BBox) -> Ordering {
        a.to_array().iter().zip(b.to_array().iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    }
}
