//! Gaussian mixture fitting by EM over 6D states.
//!
//! Covariances are loaded with `COV_EPSILON * I` in every M-step. That
//! M-step is the exact maximizer of the penalized log-likelihood
//! `Σ_i v_i ln Σ_k π_k N(x_i; μ_k, Σ_k) exp(-ε/2 tr Σ_k⁻¹)`, so this
//! objective never decreases across iterations.

use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GaussianState, StateCov, StateVec, COV_EPSILON};

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub gaussian: GaussianState,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gmm {
    pub components: Vec<GmmComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iters: 50, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Penalized log-likelihood before the first and after every M-step.
    pub log_likelihood: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Prepared {
    chol: Cholesky<f64, nalgebra::U6>,
    /// `ln π_k - ½(6 ln 2π + ln|Σ|) - ½ ε tr Σ⁻¹`
    offset: f64,
}

fn prepare(c: &GmmComponent) -> Result<Option<Prepared>> {
    if c.weight <= 0.0 {
        return Ok(None);
    }
    let chol = Cholesky::new(c.gaussian.cov).ok_or(Error::SingularCovariance)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace_inv = chol.inverse().trace();
    let offset = c.weight.ln() - 0.5 * (6.0 * LN_2PI + log_det) - 0.5 * COV_EPSILON * trace_inv;
    Ok(Some(Prepared { chol, offset }))
}

fn log_component(p: &Prepared, mean: &StateVec, x: &StateVec) -> f64 {
    let y = p.chol.l_dirty().solve_lower_triangular(&(x - mean)).expect("factor is non-singular");
    p.offset - 0.5 * y.norm_squared()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// E-step: responsibilities (row per point) and the objective.
fn e_step(points: &[StateVec], v: &[f64], gmm: &Gmm) -> Result<(Vec<Vec<f64>>, f64)> {
    let prepared = gmm.components.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let mut resp = Vec::with_capacity(points.len());
    let mut ll = 0.0;
    let mut row = vec![0.0; prepared.len()];
    for (x, vi) in points.iter().zip(v) {
        for (k, p) in prepared.iter().enumerate() {
            row[k] = match p {
                Some(p) => log_component(p, &gmm.components[k].gaussian.mean, x),
                None => f64::NEG_INFINITY,
            };
        }
        let lse = log_sum_exp(&row);
        ll += vi * lse;
        resp.push(row.iter().map(|l| (l - lse).exp()).collect());
    }
    Ok((resp, ll))
}

fn m_step(points: &[StateVec], v: &[f64], resp: &[Vec<f64>], prev: &Gmm) -> Gmm {
    let total: f64 = v.iter().sum();
    let components = (0..prev.components.len())
        .map(|k| {
            let nk: f64 = resp.iter().zip(v).map(|(r, vi)| vi * r[k]).sum();
            if nk <= 1e-300 {
                return GmmComponent { weight: 0.0, gaussian: prev.components[k].gaussian.clone() };
            }
            let mut mean = StateVec::zeros();
            for ((x, r), vi) in points.iter().zip(resp).zip(v) {
                mean += x * (vi * r[k] / nk);
            }
            let mut cov = StateCov::zeros();
            for ((x, r), vi) in points.iter().zip(resp).zip(v) {
                let d = x - mean;
                cov += (d * d.transpose()) * (vi * r[k] / nk);
            }
            cov = 0.5 * (cov + cov.transpose()) + StateCov::identity() * COV_EPSILON;
            GmmComponent { weight: nk / total, gaussian: GaussianState { mean, cov } }
        })
        .collect();
    Gmm { components }
}

/// k-means++ seeding on weighted points.
fn seed_means<R: Rng + ?Sized>(points: &[StateVec], v: &[f64], k: usize, rng: &mut R) -> Vec<StateVec> {
    let pick = |w: &[f64], rng: &mut R| -> Option<usize> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return Some(i);
            }
            u -= wi;
        }
        w.iter().rposition(|wi| *wi > 0.0)
    };
    let first = pick(v, rng).unwrap_or(0);
    let mut means = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|x| (x - points[first]).norm_squared()).collect();
    while means.len() < k {
        let w: Vec<f64> = d2.iter().zip(v).map(|(d, vi)| d * vi).collect();
        // all mass already covered: duplicate an existing point
        let next = pick(&w, rng).unwrap_or(means.len() % points.len());
        means.push(points[next]);
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min((x - points[next]).norm_squared());
        }
    }
    means
}

fn nearest(x: &StateVec, means: &[StateVec]) -> usize {
    let mut best = 0;
    for (j, m) in means.iter().enumerate().skip(1) {
        if (x - m).norm_squared() < (x - means[best]).norm_squared() {
            best = j;
        }
    }
    best
}

/// Lloyd iterations from the seeds, then one M-step on the hard partition.
/// Clusters left empty keep their seed with the pooled scatter.
fn initial_mixture(points: &[StateVec], v: &[f64], mut means: Vec<StateVec>) -> Gmm {
    let k = means.len();
    let mut assign: Vec<usize> = points.iter().map(|x| nearest(x, &means)).collect();
    for _ in 0..20 {
        let mut sums = vec![StateVec::zeros(); k];
        let mut mass = vec![0.0; k];
        for ((x, &a), vi) in points.iter().zip(&assign).zip(v) {
            sums[a] += x * *vi;
            mass[a] += vi;
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                means[j] = sums[j] / mass[j];
            }
        }
        let next: Vec<usize> = points.iter().map(|x| nearest(x, &means)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let resp: Vec<Vec<f64>> = assign.iter().map(|&a| (0..k).map(|j| if j == a { 1.0 } else { 0.0 }).collect()).collect();

    let vt: f64 = v.iter().sum();
    let centroid = points.iter().zip(v).fold(StateVec::zeros(), |acc, (x, vi)| acc + x * (vi / vt));
    let pooled = points.iter().zip(v).fold(StateCov::identity() * COV_EPSILON, |acc, (x, vi)| {
        let d = x - centroid;
        acc + (d * d.transpose()) * (vi / vt)
    });
    let prev = Gmm {
        components: means
            .into_iter()
            .map(|m| GmmComponent { weight: 1.0 / k as f64, gaussian: GaussianState { mean: m, cov: pooled } })
            .collect(),
    };
    m_step(points, v, &resp, &prev)
}

/// Fits `k` components (clamped to the point count) to weighted points.
pub fn fit_gmm_em_weighted<R: Rng + ?Sized>(
    points: &[StateVec],
    weights: &[f64],
    k: usize,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<EmFit> {
    if points.is_empty() {
        return Ok(EmFit { gmm: Gmm::default(), log_likelihood: Vec::new() });
    }
    if k == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if weights.len() != points.len() {
        return Err(Error::invalid("one weight per point is required"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || points.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(Error::invalid("points and weights must be finite, weights non-negative"));
    }
    let total: f64 = weights.iter().sum();
    let v: Vec<f64> = if total > 0.0 { weights.iter().map(|w| w * points.len() as f64 / total).collect() } else { vec![1.0; points.len()] };
    let k = k.min(points.len());

    let seeds = seed_means(points, &v, k, rng);
    let mut gmm = initial_mixture(points, &v, seeds);

    let mut trace = Vec::new();
    let (mut resp, mut ll) = e_step(points, &v, &gmm)?;
    trace.push(ll);
    for _ in 0..opts.max_iters {
        gmm = m_step(points, &v, &resp, &gmm);
        let (r, next) = e_step(points, &v, &gmm)?;
        resp = r;
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < opts.tol {
            break;
        }
    }
    Ok(EmFit { gmm, log_likelihood: trace })
}

/// Unit-weight EM fit with default options.
pub fn fit_gmm_em<R: Rng + ?Sized>(points: &[StateVec], k: usize, rng: &mut R) -> Result<Gmm> {
    let w = vec![1.0; points.len()];
    fit_gmm_em_weighted(points, &w, k, &EmOptions::default(), rng).map(|f| f.gmm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sv(a: [f64; 6]) -> StateVec {
        StateVec::from_row_slice(&a)
    }

    #[test]
    fn identical_points_collapse_to_point_mass() {
        let x = sv([10.0, 20.0, 30.0, 40.0, 1.0, -1.0]);
        let mut rng = substream(1, 0, 0, Domain::OutputFrame);
        let g = fit_gmm_em(&[x; 7], 1, &mut rng).unwrap();
        assert_eq!(g.components.len(), 1);
        let c = &g.components[0];
        assert!((c.weight - 1.0).abs() < 1e-12);
        assert!((c.gaussian.mean - x).amax() < 1e-12);
        assert!((c.gaussian.cov - StateCov::identity() * COV_EPSILON).amax() < 1e-15);
    }

    #[test]
    fn single_component_mean_is_centroid() {
        let mut rng = substream(2, 0, 0, Domain::OutputFrame);
        let pts: Vec<StateVec> = (0..30).map(|_| StateVec::from_fn(|_, _| 5.0 * rng.sample::<f64, _>(StandardNormal))).collect();
        let centroid = pts.iter().fold(StateVec::zeros(), |a, p| a + p) / 30.0;
        let g = fit_gmm_em(&pts, 1, &mut rng).unwrap();
        assert!((g.components[0].gaussian.mean - centroid).amax() < 1e-9);
    }

    #[test]
    fn planted_mixture_recovered() {
        let mut rng = substream(3, 0, 0, Domain::OutputFrame);
        let a = sv([100.0, 100.0, 40.0, 40.0, 0.0, 0.0]);
        let b = sv([400.0, 300.0, 60.0, 30.0, 2.0, 1.0]);
        let mut pts = Vec::new();
        for c in [a, b] {
            for _ in 0..100 {
                pts.push(c + StateVec::from_fn(|_, _| 2.0 * rng.sample::<f64, _>(StandardNormal)));
            }
        }
        let ca = pts[..100].iter().fold(StateVec::zeros(), |s, p| s + p) / 100.0;
        let cb = pts[100..].iter().fold(StateVec::zeros(), |s, p| s + p) / 100.0;
        let g = fit_gmm_em(&pts, 2, &mut rng).unwrap();
        assert_eq!(g.components.len(), 2);
        for c in &g.components {
            assert!((c.weight - 0.5).abs() < 0.05);
            let d = (c.gaussian.mean - ca).amax().min((c.gaussian.mean - cb).amax());
            assert!(d < 0.5, "mean off by {d}");
        }
    }

    #[test]
    fn edge_cases() {
        let mut rng = substream(4, 0, 0, Domain::OutputFrame);
        assert!(fit_gmm_em(&[], 3, &mut rng).unwrap().components.is_empty());
        assert!(fit_gmm_em(&[StateVec::zeros()], 0, &mut rng).is_err());
        let g = fit_gmm_em(&[StateVec::zeros(), StateVec::repeat(1.0)], 5, &mut rng).unwrap();
        assert_eq!(g.components.len(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn objective_never_decreases(seed in 0u64..1000, n in 2usize..40, k in 1usize..5, spread in 0.1f64..50.0) {
            let mut rng = substream(seed, 0, 0, Domain::OutputFrame);
            let pts: Vec<StateVec> = (0..n)
                .map(|i| StateVec::repeat((i % 3) as f64 * 30.0) + StateVec::from_fn(|_, _| spread * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let fit = fit_gmm_em_weighted(&pts, &w, k, &EmOptions::default(), &mut rng).unwrap();
            for pair in fit.log_likelihood.windows(2) {
                prop_assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0), "{} -> {}", pair[0], pair[1]);
            }
            let total: f64 = fit.gmm.components.iter().map(|c| c.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for c in &fit.gmm.components {
                prop_assert!(c.weight >= 0.0);
                prop_assert!(c.gaussian.is_valid());
            }
        }
    }
}
