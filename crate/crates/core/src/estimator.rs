//! Latency-aware Kalman predictor/corrector.
//!
//! A measurement taken at `τ_k` with method `ρ` only becomes available at `τ_k + Δ^ρ`, so the
//! correction is fused with the prediction over the latency: the gain is
//! `L = A_d(Δ) P Cᵀ (C P Cᵀ + R)⁻¹` and the covariance follows the Joseph form
//! `(A_d − L C) P (A_d − L C)ᵀ + L R Lᵀ + W_d(Δ)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DiscretizedDynamics, Transition};
use crate::error::{PlateError, Result};
use crate::linalg::{project_psd, right_solve_spd, Mat, Vector};
use crate::model::{method_by_id, PerceptionMethod};

/// Innovation covariances worse conditioned than this are rejected.
pub const MAX_INNOVATION_COND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub t: f64,
    pub xhat: Vector,
    pub phat: Mat,
}

impl BeliefState {
    pub fn new(t: f64, xhat: Vector, phat: Mat) -> Self {
        Self { t, xhat, phat }
    }
}

/// A processed detection of the state at epoch `k`, available at `produced_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub k: usize,
    pub z: Vector,
    pub produced_at: f64,
    pub method_id: usize,
    /// Online estimate of the detector noise; the method's nominal `R` is used when absent.
    pub r_actual: Option<Mat>,
}

/// Open-loop propagation: `x̂ ← A_d x̂`, `P̂ ← A_d P̂ A_dᵀ + W_d`.
pub fn predict(belief: &BeliefState, elapsed: f64, transition: &Transition) -> BeliefState {
    let phat = &transition.ad * &belief.phat * transition.ad.transpose() + &transition.wd;
    let mut phat = phat;
    crate::linalg::symmetrize(&mut phat);
    BeliefState { t: belief.t + elapsed, xhat: &transition.ad * &belief.xhat, phat }
}

/// Predictor gain `A_d P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p: &Mat, ad: &Mat, c: &Mat, r: &Mat) -> Result<Mat> {
    let pct = p * c.transpose();
    let s = c * &pct + r;
    right_solve_spd(&(ad * pct), &s, MAX_INNOVATION_COND)
}

/// Joseph-form covariance recursion for a fixed gain.
pub fn joseph(p: &Mat, ad: &Mat, c: &Mat, gain: &Mat, r: &Mat, wd: &Mat) -> Mat {
    let lambda = ad - gain * c;
    &lambda * p * lambda.transpose() + gain * r * gain.transpose() + wd
}

/// Covariance part of one latency-aware correction; shared by the filter, the graph
/// builder and the schedulers.
pub fn covariance_step(p: &Mat, transition: &Transition, c: &Mat, r: &Mat) -> Result<Mat> {
    let gain = kalman_gain(p, &transition.ad, c, r)?;
    project_psd(joseph(p, &transition.ad, c, &gain, r, &transition.wd))
}

/// Fuses a measurement taken at `belief.t` and advances the belief by the method's latency.
pub fn correct(
    belief: &BeliefState,
    meas: &Measurement,
    method: &PerceptionMethod,
    dynamics: &DiscretizedDynamics,
) -> Result<BeliefState> {
    let c = &dynamics.model().c;
    let r = meas.r_actual.as_ref().unwrap_or(&method.r);
    if r.shape() != (c.nrows(), c.nrows()) || meas.z.len() != c.nrows() {
        return Err(PlateError::Dimension("measurement does not match C".into()));
    }
    let tr = &dynamics.step(method.steps).transition;
    let gain = kalman_gain(&belief.phat, &tr.ad, c, r)?;
    let innovation = &meas.z - c * &belief.xhat;
    let xhat = &tr.ad * &belief.xhat + &gain * innovation;
    let phat = project_psd(joseph(&belief.phat, &tr.ad, c, &gain, r, &tr.wd))?;
    Ok(BeliefState { t: belief.t + method.latency(dynamics.dt_s()), xhat, phat })
}

/// One step of the fixed-gain switched filter: `Λ P Λᵀ + L R Lᵀ + W_d` with `Λ = A_d − L C`.
pub fn switched_step(
    p: &Mat,
    method_id: usize,
    gains: &[Mat],
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<Mat> {
    let method = method_by_id(methods, method_id)?;
    let gain = gains.get(method_id - 1).ok_or(PlateError::UnknownMethod(method_id))?;
    let tr = &dynamics.step(method.steps).transition;
    let mut out = joseph(p, &tr.ad, &dynamics.model().c, gain, &method.r, &tr.wd);
    crate::linalg::symmetrize(&mut out);
    Ok(out)
}

/// Iterates the covariance recursion of a single method to its fixed point.
pub fn steady_state_covariance(
    method: &PerceptionMethod,
    dynamics: &DiscretizedDynamics,
    tol: f64,
    max_iter: usize,
) -> Result<Mat> {
    let n = dynamics.model().nx();
    let tr = &dynamics.step(method.steps).transition;
    let c = &dynamics.model().c;
    let mut p = Mat::identity(n, n);
    for _ in 0..max_iter {
        let next = covariance_step(&p, tr, c, &method.r)?;
        let change = (&next - &p).norm();
        p = next;
        if change <= tol * p.norm().max(1e-300) {
            break;
        }
    }
    Ok(p)
}
