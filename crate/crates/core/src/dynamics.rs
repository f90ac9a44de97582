//! Exact discretization of the target SDE and the Gram integrals behind every stage cost.
//!
//! Over a stage of length `d` starting from covariance `P`, the integral of `tr(P̂(t))`
//! factors as `tr(P·M(d)) + c(d)` with `M(d) = ∫₀^d A_d(t)ᵀA_d(t) dt` and
//! `c(d) = ∫₀^d tr(W_d(t)) dt`, so schedulers never integrate inside their loops.

use crate::error::{PlateError, Result};
use crate::linalg::{all_finite, expm, symmetrize, Mat, GAUSS_LEGENDRE_8};
use crate::model::{ContinuousModel, PerceptionMethod};

/// State transition `A_d(d) = exp(A d)` and process covariance `W_d(d)` over one duration.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub ad: Mat,
    pub wd: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageGram {
    pub m: Mat,
    pub c: f64,
}

/// `(A_d, W_d)` for `duration` seconds via the Van Loan block exponential of
/// `[[-A, BWBᵀ], [0, Aᵀ]]·duration`.
pub fn discretize(model: &ContinuousModel, duration: f64) -> Result<Transition> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(PlateError::OffGrid(duration));
    }
    if !all_finite(&model.a) || !all_finite(&model.b) || !all_finite(&model.w) {
        return Err(PlateError::InvalidModel("A, B and W must be finite".into()));
    }
    let n = model.nx();
    if duration == 0.0 {
        return Ok(Transition { ad: Mat::identity(n, n), wd: Mat::zeros(n, n) });
    }
    let q = model.diffusion();
    let mut block = Mat::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-&model.a));
    block.view_mut((0, n), (n, n)).copy_from(&q);
    block.view_mut((n, n), (n, n)).copy_from(&model.a.transpose());
    let e = expm(&(block * duration));
    let ad = e.view((n, n), (n, n)).transpose();
    let mut wd = &ad * e.view((0, n), (n, n));
    symmetrize(&mut wd);
    Ok(Transition { ad, wd })
}

fn gram_integrand(model: &ContinuousModel, t: f64) -> Result<(Mat, f64)> {
    let tr = discretize(model, t)?;
    Ok((tr.ad.transpose() * &tr.ad, tr.wd.trace()))
}

fn gauss_legendre(model: &ContinuousModel, duration: f64, pieces: usize) -> Result<(Mat, f64)> {
    let n = model.nx();
    let h = duration / pieces as f64;
    let mut m = Mat::zeros(n, n);
    let mut c = 0.0;
    for k in 0..pieces {
        let mid = (k as f64 + 0.5) * h;
        for &(x, w) in GAUSS_LEGENDRE_8.iter() {
            let (gm, gc) = gram_integrand(model, mid + 0.5 * h * x)?;
            m += gm * (0.5 * h * w);
            c += gc * 0.5 * h * w;
        }
    }
    Ok((m, c))
}

const GRAM_ABS_TOL: f64 = 1e-10;
const GRAM_MAX_REFINEMENTS: usize = 6;

/// `M = ∫₀^d A_d(t)ᵀA_d(t) dt` and `c = ∫₀^d tr(W_d(t)) dt` by 8-point Gauss–Legendre on
/// pieces no longer than the sampling period, halved until successive estimates agree.
pub fn cost_gram(model: &ContinuousModel, duration: f64) -> Result<StageGram> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(PlateError::OffGrid(duration));
    }
    let n = model.nx();
    if duration == 0.0 {
        return Ok(StageGram { m: Mat::zeros(n, n), c: 0.0 });
    }
    let mut pieces = (duration / model.dt_s).ceil().max(1.0) as usize;
    let (mut m, mut c) = gauss_legendre(model, duration, pieces)?;
    for _ in 0..GRAM_MAX_REFINEMENTS {
        pieces *= 2;
        let (m2, c2) = gauss_legendre(model, duration, pieces)?;
        let change = (&m2 - &m).norm() + (c2 - c).abs();
        let scale = m2.norm() + c2.abs();
        m = m2;
        c = c2;
        if change <= GRAM_ABS_TOL.max(1e-14 * scale) {
            break;
        }
    }
    symmetrize(&mut m);
    Ok(StageGram { m, c })
}

/// Everything a scheduler needs for a stage lasting a whole number of sampling periods.
#[derive(Debug, Clone)]
pub struct StepDynamics {
    pub steps: u32,
    pub transition: Transition,
    pub gram: StageGram,
}

/// Read-only table of [`StepDynamics`] for `0..=max_steps` sampling periods.
#[derive(Debug, Clone)]
pub struct DiscretizedDynamics {
    model: ContinuousModel,
    table: Vec<StepDynamics>,
}

impl DiscretizedDynamics {
    pub fn new(model: &ContinuousModel, max_steps: u32) -> Result<Self> {
        let table = (0..=max_steps)
            .map(|j| {
                let d = j as f64 * model.dt_s;
                Ok(StepDynamics { steps: j, transition: discretize(model, d)?, gram: cost_gram(model, d)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model: model.clone(), table })
    }

    /// Table sized for the longest latency in `methods`.
    pub fn for_methods(model: &ContinuousModel, methods: &[PerceptionMethod]) -> Result<Self> {
        let max = methods.iter().map(|m| m.steps).max().unwrap_or(1);
        Self::new(model, max)
    }

    pub fn model(&self) -> &ContinuousModel {
        &self.model
    }

    pub fn dt_s(&self) -> f64 {
        self.model.dt_s
    }

    pub fn max_steps(&self) -> u32 {
        (self.table.len() - 1) as u32
    }

    /// Entry for `steps` sampling periods. Panics beyond the table size.
    pub fn step(&self, steps: u32) -> &StepDynamics {
        &self.table[steps as usize]
    }

    /// Transition for an arbitrary (possibly off-grid) elapsed time.
    pub fn transition_for(&self, elapsed: f64) -> Result<Transition> {
        let ratio = elapsed / self.model.dt_s;
        let j = ratio.round();
        if (ratio - j).abs() < 1e-9 && j >= 0.0 && (j as usize) < self.table.len() {
            return Ok(self.table[j as usize].transition.clone());
        }
        discretize(&self.model, elapsed)
    }
}
