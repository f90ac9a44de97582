//! Perception schedules and the closed-form evaluation of the scheduling cost
//! `J = (1/T_f)(∫₀^{T_f} tr P̂(t) dt + λ_α Σ r^{p_k})`.

use serde::{Deserialize, Serialize};

use crate::dynamics::DiscretizedDynamics;
use crate::error::{PlateError, Result};
use crate::estimator::covariance_step;
use crate::linalg::{trace_of_product, Mat};
use crate::model::{method_by_id, to_ticks, PerceptionMethod};

/// Sequence of 1-based method ids, one per perception epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Schedule {
    pub methods: Vec<usize>,
}

impl Schedule {
    pub fn new(methods: Vec<usize>) -> Self {
        Self { methods }
    }

    /// Static schedule repeating `id` until `window_ticks` is covered.
    pub fn repeated(id: usize, methods: &[PerceptionMethod], window_ticks: u64) -> Result<Self> {
        let steps = method_by_id(methods, id)?.steps as u64;
        let n = window_ticks.div_ceil(steps).max(1);
        Ok(Self::new(vec![id; n as usize]))
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    /// Total duration in sampling periods.
    pub fn duration_ticks(&self, methods: &[PerceptionMethod]) -> Result<u64> {
        self.methods
            .iter()
            .map(|&id| method_by_id(methods, id).map(|m| m.steps as u64))
            .sum()
    }

    /// Epoch start times `τ_k` in sampling periods (length `len() + 1`, last is the end).
    pub fn epochs(&self, methods: &[PerceptionMethod]) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(self.methods.len() + 1);
        let mut t = 0u64;
        out.push(0);
        for &id in &self.methods {
            t += method_by_id(methods, id)?.steps as u64;
            out.push(t);
        }
        Ok(out)
    }

    /// Covers the window and stops as soon as it does.
    pub fn is_minimal_cover(&self, methods: &[PerceptionMethod], window_ticks: u64) -> Result<bool> {
        let epochs = self.epochs(methods)?;
        let n = epochs.len();
        Ok(n >= 2 && epochs[n - 1] >= window_ticks && epochs[n - 2] < window_ticks)
    }

    /// Number of processed measurements produced inside `(0, window]`.
    pub fn attention(&self, methods: &[PerceptionMethod], window_ticks: u64) -> Result<usize> {
        Ok(self.epochs(methods)?[1..].iter().filter(|&&t| t <= window_ticks).count())
    }

    /// `(1/T_f) Σ f^{p_k}·d_k` with stage durations truncated at the window end.
    pub fn cpu_load(&self, methods: &[PerceptionMethod], window_ticks: u64) -> Result<f64> {
        if window_ticks == 0 {
            return Ok(0.0);
        }
        let mut t = 0u64;
        let mut busy = 0.0;
        for &id in &self.methods {
            if t >= window_ticks {
                break;
            }
            let m = method_by_id(methods, id)?;
            let d = (t + m.steps as u64).min(window_ticks) - t;
            busy += m.cpu * d as f64;
            t += m.steps as u64;
        }
        Ok(busy / window_ticks as f64)
    }
}

/// Cost split into its estimation-quality and penalty parts (both already divided by `T_f`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub covariance: f64,
    pub penalty: f64,
}

/// Cost of one stage: `(1/T_f)[λ_α r + c(d) + tr(P·M(d))]`.
pub fn stage_cost(
    p: &Mat,
    method: &PerceptionMethod,
    stage_ticks: u32,
    window_ticks: u64,
    lambda: f64,
    dynamics: &DiscretizedDynamics,
) -> (f64, f64) {
    let tf = window_ticks as f64 * dynamics.dt_s();
    let g = &dynamics.step(stage_ticks).gram;
    let cov = (g.c + trace_of_product(p, &g.m)) / tf;
    let pen = lambda * method.penalty / tf;
    (cov, pen)
}

/// Window length in sampling periods, rejecting empty or off-grid windows.
pub fn window_ticks(tf: f64, dt_s: f64) -> Result<u64> {
    let t = to_ticks(tf, dt_s)?;
    if t == 0 {
        return Err(PlateError::OffGrid(tf));
    }
    Ok(t)
}

/// Exact cost of a schedule that minimally covers `[0, T_f]`, starting from `p0`.
pub fn evaluate_schedule(
    p0: &Mat,
    schedule: &Schedule,
    tf: f64,
    lambda: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<CostBreakdown> {
    let window = window_ticks(tf, dynamics.dt_s())?;
    let covered = schedule.duration_ticks(methods)?;
    if covered < window {
        return Err(PlateError::IncompleteSchedule { covered, window });
    }
    if !schedule.is_minimal_cover(methods, window)? {
        return Err(PlateError::Dimension(format!(
            "schedule of {} epochs keeps going after the {window}-tick window is covered",
            schedule.len()
        )));
    }
    let c = &dynamics.model().c;
    let mut p = p0.clone();
    let mut tau = 0u64;
    let mut out = CostBreakdown { total: 0.0, covariance: 0.0, penalty: 0.0 };
    for &id in &schedule.methods {
        let m = method_by_id(methods, id)?;
        let next = tau + m.steps as u64;
        let d = (next.min(window) - tau) as u32;
        let (cov, pen) = stage_cost(&p, m, d, window, lambda, dynamics);
        out.covariance += cov;
        out.penalty += pen;
        if next < window {
            p = covariance_step(&p, &dynamics.step(m.steps).transition, c, &m.r)?;
        }
        tau = next;
    }
    out.total = out.covariance + out.penalty;
    Ok(out)
}
