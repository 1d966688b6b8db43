//! Image-plane boxes, cell rectangles and Gaussian helpers shared by every
//! tracker and by the metrics.
//!
//! Object states are 6-vectors `(cx, cy, w, h, vx, vy)` in pixels and
//! pixels/stage.

use nalgebra::{Cholesky, Matrix6, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVec = Vector6<f64>;
pub type StateCov = Matrix6<f64>;

/// Diagonal loading applied to every fitted covariance, in px².
pub const COV_EPSILON: f64 = 1e-6;

/// Axis-aligned box given by its center and size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { cx, cy, w, h };
        if !b.is_valid() {
            return Err(Error::invalid(format!("bounding box must be finite with positive size, got ({cx}, {cy}, {w}, {h})")));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    /// Box from the position part of a state vector. Sizes are floored at
    /// `min_size` so sampled states with collapsed extents stay usable.
    pub fn from_state(x: &StateVec, min_size: f64) -> Self {
        BBox { cx: x[0], cy: x[1], w: x[2].max(min_size), h: x[3].max(min_size) }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_rect(&self) -> Rect {
        Rect { x0: self.cx - 0.5 * self.w, y0: self.cy - 0.5 * self.h, x1: self.cx + 0.5 * self.w, y1: self.cy + 0.5 * self.h }
    }
}

/// Corner-form rectangle, used for grid cell footprints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]")));
        }
        Ok(Rect { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn to_bbox(&self) -> BBox {
        BBox { cx: 0.5 * (self.x0 + self.x1), cy: 0.5 * (self.y0 + self.y1), w: self.width(), h: self.height() }
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ra = a.to_rect();
    let rb = b.to_rect();
    let iw = (ra.x1.min(rb.x1) - ra.x0.max(rb.x0)).max(0.0);
    let ih = (ra.y1.min(rb.y1) - ra.y0.max(rb.y0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum Euclidean distance between any point of `a` and any point of `b`.
/// Zero when the rectangles intersect or touch.
pub fn set_distance(a: &Rect, b: &Rect) -> f64 {
    let dx = (a.x0 - b.x1).max(b.x0 - a.x1).max(0.0);
    let dy = (a.y0 - b.y1).max(b.y0 - a.y1).max(0.0);
    dx.hypot(dy)
}

/// Multivariate Gaussian over the 6D object state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: StateVec,
    pub cov: StateCov,
}

impl GaussianState {
    pub fn new(mean: StateVec, cov: StateCov) -> Result<Self> {
        let g = GaussianState { mean, cov };
        if !g.is_valid() {
            return Err(Error::invalid("covariance must be symmetric positive semi-definite"));
        }
        Ok(g)
    }

    /// Diagonal covariance from per-axis standard deviations.
    pub fn from_std(mean: StateVec, std: &[f64; 6]) -> Self {
        let cov = StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)));
        GaussianState { mean, cov }
    }

    /// Symmetric within 1e-9 and no eigenvalue below -1e-9.
    pub fn is_valid(&self) -> bool {
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return false;
        }
        if (self.cov - self.cov.transpose()).amax() > 1e-9 {
            return false;
        }
        let sym = 0.5 * (self.cov + self.cov.transpose());
        sym.symmetric_eigenvalues().iter().all(|&l| l >= -1e-9)
    }

    /// Copy with each marginal variance raised to at least `floor[i]²`.
    pub fn floored(&self, floor: &[f64; 6]) -> GaussianState {
        let mut g = self.clone();
        for (i, f) in floor.iter().enumerate() {
            g.cov[(i, i)] = g.cov[(i, i)].max(f * f);
        }
        g
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_state(&self.mean, 1.0)
    }

    /// Lower Cholesky factor, with ε-loading as a fallback for singular
    /// covariances.
    pub fn cholesky_l(&self) -> Result<StateCov> {
        regularized_cholesky(&self.cov).map(|c| c.l())
    }

    /// Draws one state using a precomputed Cholesky factor.
    pub fn sample_with<R: Rng + ?Sized>(&self, l: &StateCov, rng: &mut R) -> StateVec {
        let z = StateVec::from_fn(|_, _| rng.sample(StandardNormal));
        self.mean + l * z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StateVec> {
        let l = self.cholesky_l()?;
        Ok(self.sample_with(&l, rng))
    }
}

fn regularized_cholesky(cov: &StateCov) -> Result<Cholesky<f64, nalgebra::U6>> {
    let sym = 0.5 * (cov + cov.transpose());
    if let Some(c) = Cholesky::new(sym) {
        return Ok(c);
    }
    Cholesky::new(sym + StateCov::identity() * COV_EPSILON).ok_or(Error::SingularCovariance)
}

/// Weighted mean and (population) covariance of weighted states, loaded
/// with `COV_EPSILON * I`.
pub fn fit_gaussian(points: &[(StateVec, f64)]) -> Result<GaussianState> {
    if points.is_empty() {
        return Err(Error::invalid("cannot fit a Gaussian to zero points"));
    }
    if points.iter().any(|(p, w)| !(*w >= 0.0) || !w.is_finite() || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = points.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    let mut mean = StateVec::zeros();
    for (p, w) in points {
        mean += p * (w / total);
    }
    let mut cov = StateCov::zeros();
    for (p, w) in points {
        let d = p - mean;
        cov += (d * d.transpose()) * (w / total);
    }
    cov = 0.5 * (cov + cov.transpose()) + StateCov::identity() * COV_EPSILON;
    Ok(GaussianState { mean, cov })
}

/// Mahalanobis distance of `x` from `g`.
pub fn mahalanobis(x: &StateVec, g: &GaussianState) -> Result<f64> {
    let chol = regularized_cholesky(&g.cov)?;
    let d = x - g.mean;
    let y = chol.l().solve_lower_triangular(&d).ok_or(Error::SingularCovariance)?;
    Ok(y.norm())
}

/// Lexicographic total order on state vectors.
pub fn cmp_states(a: &StateVec, b: &StateVec) -> std::cmp::Ordering {
    a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}
