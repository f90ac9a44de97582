//! Target model and perception-method descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{PlateError, Result};
use crate::linalg::{all_finite, is_symmetric, min_eigenvalue, Mat, Vector, SYM_TOL};

/// Linear SDE `dx = A x dt + B dw` with `cov(w(s), w(r)) = W min(s, r)`,
/// measured as `z = C x + v`, plus the sensor's minimum sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel {
    pub a: Mat,
    pub b: Mat,
    pub w: Mat,
    pub c: Mat,
    pub x0: Vector,
    pub p0: Mat,
    pub dt_s: f64,
}

fn check_psd(name: &str, m: &Mat) -> Result<()> {
    if !is_symmetric(m, SYM_TOL) {
        return Err(PlateError::InvalidModel(format!("{name} is not symmetric")));
    }
    let norm = m.norm();
    if norm > 0.0 && min_eigenvalue(m) < -1e-10 * norm {
        return Err(PlateError::InvalidModel(format!(
            "{name} is not positive semi-definite"
        )));
    }
    Ok(())
}

impl ContinuousModel {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nz(&self) -> usize {
        self.c.nrows()
    }

    /// `B W Bᵀ`, the diffusion rate of the state.
    pub fn diffusion(&self) -> Mat {
        &self.b * &self.w * self.b.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() || n == 0 {
            return Err(PlateError::InvalidModel("A must be square and non-empty".into()));
        }
        if self.b.nrows() != n {
            return Err(PlateError::Dimension(format!("B has {} rows, A is {n}x{n}", self.b.nrows())));
        }
        let nw = self.b.ncols();
        if self.w.shape() != (nw, nw) {
            return Err(PlateError::Dimension(format!(
                "W is {}x{}, expected {nw}x{nw}",
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            return Err(PlateError::Dimension(format!(
                "C is {}x{}, expected n_z x {n}",
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        if self.x0.len() != n {
            return Err(PlateError::Dimension(format!("x0 has length {}, expected {n}", self.x0.len())));
        }
        if self.p0.shape() != (n, n) {
            return Err(PlateError::Dimension(format!("P0 must be {n}x{n}")));
        }
        for (name, m) in [("A", &self.a), ("B", &self.b), ("W", &self.w), ("C", &self.c), ("P0", &self.p0)] {
            if !all_finite(m) {
                return Err(PlateError::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(PlateError::InvalidModel("x0 has non-finite entries".into()));
        }
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(PlateError::InvalidModel("sampling period must be positive".into()));
        }
        check_psd("W", &self.w)?;
        check_psd("P0", &self.p0)?;
        if !self.is_observable() {
            return Err(PlateError::InvalidModel("(A, C) is not observable".into()));
        }
        Ok(())
    }

    /// Rank test on the observability matrix with threshold `1e-9·σ_max`.
    pub fn is_observable(&self) -> bool {
        let n = self.nx();
        let nz = self.nz();
        let mut obs = Mat::zeros(n * nz, n);
        let mut block = self.c.clone();
        for k in 0..n {
            obs.view_mut((k * nz, 0), (nz, n)).copy_from(&block);
            block = &block * &self.a;
        }
        let sv = obs.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return false;
        }
        sv.iter().filter(|&&s| s > 1e-9 * max).count() == n
    }
}

/// One perception configuration: latency in sampling periods, nominal
/// measurement covariance, CPU fraction and per-use penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionMethod {
    pub id: usize,
    pub steps: u32,
    pub r: Mat,
    pub cpu: f64,
    pub penalty: f64,
}

impl PerceptionMethod {
    pub fn new(id: usize, steps: u32, r: Mat, cpu: f64, penalty: f64) -> Self {
        Self { id, steps, r, cpu, penalty }
    }

    /// Penalty `λ_load·f·Δ + λ_att`, trading CPU load against attention.
    pub fn load_attention_penalty(steps: u32, cpu: f64, dt_s: f64, lambda_load: f64, lambda_att: f64) -> f64 {
        lambda_load * cpu * steps as f64 * dt_s + lambda_att
    }

    pub fn latency(&self, dt_s: f64) -> f64 {
        self.steps as f64 * dt_s
    }

    pub fn validate(&self, nz: usize) -> Result<()> {
        let fail = |reason: &str| PlateError::InvalidMethod { id: self.id, reason: reason.to_string() };
        if self.steps == 0 {
            return Err(fail("latency must be at least one sampling period"));
        }
        if self.r.shape() != (nz, nz) {
            return Err(fail(&format!("R must be {nz}x{nz}")));
        }
        if !all_finite(&self.r) || !is_symmetric(&self.r, SYM_TOL) {
            return Err(fail("R must be finite and symmetric"));
        }
        let norm = self.r.norm();
        if norm > 0.0 && min_eigenvalue(&self.r) < -1e-10 * norm {
            return Err(fail("R must be positive semi-definite"));
        }
        if !(self.cpu > 0.0 && self.cpu <= 1.0) {
            return Err(fail("CPU fraction must lie in (0, 1]"));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(fail("penalty must be non-negative"));
        }
        Ok(())
    }
}

/// Checks that method ids are exactly `1..=D` in order and that each method is well formed.
pub fn validate_methods(methods: &[PerceptionMethod], nz: usize) -> Result<()> {
    for (i, m) in methods.iter().enumerate() {
        if m.id != i + 1 {
            return Err(PlateError::InvalidMethod {
                id: m.id,
                reason: format!("expected id {} at position {i}", i + 1),
            });
        }
        m.validate(nz)?;
    }
    Ok(())
}

/// Looks up a method by its 1-based id.
pub fn method_by_id(methods: &[PerceptionMethod], id: usize) -> Result<&PerceptionMethod> {
    id.checked_sub(1)
        .and_then(|i| methods.get(i))
        .ok_or(PlateError::UnknownMethod(id))
}

/// Converts seconds to whole sampling periods, rejecting values off the grid.
pub fn to_ticks(seconds: f64, dt_s: f64) -> Result<u64> {
    if !(seconds.is_finite() && seconds >= 0.0) {
        return Err(PlateError::OffGrid(seconds));
    }
    let ratio = seconds / dt_s;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-6 * rounded.max(1.0) {
        return Err(PlateError::OffGrid(seconds));
    }
    Ok(rounded as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;

    #[test]
    fn tracking_model_is_valid_and_observable() {
        let m = scenario::tracking_model();
        m.validate().unwrap();
        assert!(m.is_observable());
    }

    #[test]
    fn unobservable_model_is_rejected() {
        let mut m = scenario::tracking_model();
        // measure only x position: y block is unobservable
        m.c = Mat::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(m.validate(), Err(PlateError::InvalidModel(_))));
    }

    #[test]
    fn non_finite_and_mismatched_models_are_rejected() {
        let mut m = scenario::tracking_model();
        m.a[(0, 0)] = f64::NAN;
        assert!(matches!(m.validate(), Err(PlateError::InvalidModel(_))));
        let mut m = scenario::tracking_model();
        m.x0 = Vector::zeros(3);
        assert!(matches!(m.validate(), Err(PlateError::Dimension(_))));
    }

    #[test]
    fn method_ids_must_be_dense() {
        let mut methods = scenario::tracking_methods();
        validate_methods(&methods, 2).unwrap();
        methods[1].id = 5;
        assert!(validate_methods(&methods, 2).is_err());
    }

    #[test]
    fn load_attention_penalty_reduces_to_cpu_time() {
        let r = PerceptionMethod::load_attention_penalty(3, 0.5, 1.0 / 30.0, 1.0, 0.0);
        assert!((r - 0.05).abs() < 1e-15);
        let r = PerceptionMethod::load_attention_penalty(3, 0.5, 1.0 / 30.0, 0.0, 2.0);
        assert_eq!(r, 2.0);
    }

    #[test]
    fn ticks_round_trip_on_grid() {
        let dt = 1.0 / 30.0;
        assert_eq!(to_ticks(1.0, dt).unwrap(), 30);
        assert_eq!(to_ticks(10.0, dt).unwrap(), 300);
        assert!(to_ticks(1.01, dt).is_err());
        assert!(to_ticks(-1.0, dt).is_err());
    }
}
