//! Common-Lyapunov certificates for the switched latency-aware filter.
//!
//! A certificate `(Ω, Yᵢ, γ)` fixes gains `Lᵢ = Ω⁻¹Yᵢ`. If `ΛᵢᵀΩΛᵢ ⪯ γΩ` for every method,
//! with `Λᵢ = A_d(Δⁱ) − LᵢC`, then every covariance started inside `‖P‖_F ≤ B0` stays below
//! `B_s = √n (λmax(Ω)/λmin(Ω)) (B0 + Ḡ/(1−γ))` under any schedule.

use serde::{Deserialize, Serialize};

use crate::dynamics::DiscretizedDynamics;
use crate::error::{PlateError, Result};
use crate::estimator::{kalman_gain, steady_state_covariance};
use crate::linalg::{from_rows, is_symmetric, max_eigenvalue, min_eigenvalue, symmetrize, to_rows, Mat};
use crate::model::PerceptionMethod;

/// Relative slack on the smallest eigenvalue of `γΩ − ΛᵀΩΛ`.
pub const LMI_TOL: f64 = 1e-9;
pub const SYNTHESIS_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub omega: Mat,
    /// One `n_x × n_z` matrix per method, in id order.
    pub y: Vec<Mat>,
    pub gamma: f64,
}

impl LyapunovCertificate {
    pub fn new(omega: Mat, y: Vec<Mat>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(PlateError::MalformedCertificate(format!("gamma = {gamma} is outside (0, 1)")));
        }
        if !omega.is_square() || !is_symmetric(&omega, 1e-10) {
            return Err(PlateError::MalformedCertificate("Omega must be square and symmetric".into()));
        }
        if min_eigenvalue(&omega) <= 0.0 {
            return Err(PlateError::MalformedCertificate("Omega is not positive definite".into()));
        }
        if y.iter().any(|yi| yi.nrows() != omega.nrows() || yi.ncols() != y[0].ncols()) {
            return Err(PlateError::MalformedCertificate("Y blocks do not match Omega".into()));
        }
        Ok(Self { omega, y, gamma })
    }

    /// From gains, with `Yᵢ = Ω Lᵢ`.
    pub fn from_gains(omega: Mat, gains: &[Mat], gamma: f64) -> Result<Self> {
        let y = gains.iter().map(|l| &omega * l).collect();
        Self::new(omega, y, gamma)
    }

    pub fn gains(&self) -> Result<Vec<Mat>> {
        let chol = self
            .omega
            .clone()
            .cholesky()
            .ok_or_else(|| PlateError::MalformedCertificate("Omega is not positive definite".into()))?;
        Ok(self.y.iter().map(|yi| chol.solve(yi)).collect())
    }

    fn check_methods(&self, methods: &[PerceptionMethod], dynamics: &DiscretizedDynamics) -> Result<()> {
        let model = dynamics.model();
        if self.y.len() != methods.len() {
            return Err(PlateError::MalformedCertificate(format!(
                "{} Y blocks for {} methods",
                self.y.len(),
                methods.len()
            )));
        }
        if self.omega.nrows() != model.nx() || self.y.iter().any(|y| y.ncols() != model.nz()) {
            return Err(PlateError::MalformedCertificate("certificate does not match the model dimensions".into()));
        }
        Ok(())
    }
}

/// Certificate as stored on disk: matrices as nested row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub omega: Vec<Vec<f64>>,
    pub y: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
}

impl From<&LyapunovCertificate> for CertificateFile {
    fn from(c: &LyapunovCertificate) -> Self {
        Self { omega: to_rows(&c.omega), y: c.y.iter().map(to_rows).collect(), gamma: c.gamma }
    }
}

impl TryFrom<&CertificateFile> for LyapunovCertificate {
    type Error = PlateError;

    fn try_from(f: &CertificateFile) -> Result<Self> {
        let omega = from_rows(&f.omega)?;
        let y = f.y.iter().map(|r| from_rows(r)).collect::<Result<Vec<_>>>()?;
        LyapunovCertificate::new(omega, y, f.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiCheck {
    pub feasible: bool,
    /// Smallest eigenvalue of `γΩ − ΛᵢᵀΩΛᵢ` over all methods.
    pub margin: f64,
}

/// Closed-loop matrices `Λᵢ = A_d(Δⁱ) − Lᵢ C`.
pub fn closed_loop(gains: &[Mat], methods: &[PerceptionMethod], dynamics: &DiscretizedDynamics) -> Vec<Mat> {
    let c = &dynamics.model().c;
    methods
        .iter()
        .zip(gains)
        .map(|(m, l)| &dynamics.step(m.steps).transition.ad - l * c)
        .collect()
}

fn lmi_margins(omega: &Mat, gamma: f64, lambdas: &[Mat]) -> LmiCheck {
    let mut out = LmiCheck { feasible: true, margin: f64::INFINITY };
    for lam in lambdas {
        let mut s = omega * gamma - lam.transpose() * omega * lam;
        symmetrize(&mut s);
        let e = min_eigenvalue(&s);
        out.margin = out.margin.min(e);
        if e < -LMI_TOL * s.norm() {
            out.feasible = false;
        }
    }
    out
}

pub fn lmi_feasible(
    cert: &LyapunovCertificate,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<LmiCheck> {
    cert.check_methods(methods, dynamics)?;
    let lambdas = closed_loop(&cert.gains()?, methods, dynamics);
    Ok(lmi_margins(&cert.omega, cert.gamma, &lambdas))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bs: f64,
    /// `maxᵢ ‖Lᵢ Rᵢ Lᵢᵀ + W_d(Δⁱ)‖_F`
    pub gbar: f64,
    /// `λmax(Ω) / λmin(Ω)`
    pub condition: f64,
    pub margin: f64,
}

pub fn bound_bs(
    cert: &LyapunovCertificate,
    b0: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<BoundReport> {
    let check = lmi_feasible(cert, methods, dynamics)?;
    if !check.feasible {
        return Err(PlateError::InfeasibleCertificate(check.margin));
    }
    let gains = cert.gains()?;
    let gbar = methods
        .iter()
        .zip(&gains)
        .map(|(m, l)| (l * &m.r * l.transpose() + &dynamics.step(m.steps).transition.wd).norm())
        .fold(0.0, f64::max);
    let condition = max_eigenvalue(&cert.omega) / min_eigenvalue(&cert.omega);
    let n = cert.omega.nrows() as f64;
    let bs = n.sqrt() * condition * (b0 + gbar / (1.0 - cert.gamma));
    Ok(BoundReport { bs, gbar, condition, margin: check.margin })
}

/// Steady-state predictor gain of every method used on its own.
pub fn steady_state_gains(methods: &[PerceptionMethod], dynamics: &DiscretizedDynamics) -> Result<Vec<Mat>> {
    let c = &dynamics.model().c;
    methods
        .iter()
        .map(|m| {
            let p = steady_state_covariance(m, dynamics, 1e-13, 100_000)?;
            kalman_gain(&p, &dynamics.step(m.steps).transition.ad, c, &m.r)
        })
        .collect()
}

/// Best-effort search for a common `Ω` given steady-state gains. Returns `None` when the
/// iteration does not reach a feasible point.
pub fn synthesize_certificate(
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
    gamma: f64,
) -> Result<Option<LyapunovCertificate>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(PlateError::MalformedCertificate(format!("gamma = {gamma} is outside (0, 1)")));
    }
    let gains = steady_state_gains(methods, dynamics)?;
    let lambdas = closed_loop(&gains, methods, dynamics);
    let n = dynamics.model().nx();
    let id = Mat::identity(n, n);
    let mut omega = id.clone();
    for _ in 0..SYNTHESIS_ITERATIONS {
        if lmi_margins(&omega, gamma, &lambdas).feasible && min_eigenvalue(&omega) > 0.0 {
            let norm = omega.norm();
            return LyapunovCertificate::from_gains(omega / norm, &gains, gamma).map(Some);
        }
        let mut next = lambdas.iter().fold(id.clone(), |acc, l| acc + l.transpose() * &omega * l / gamma);
        symmetrize(&mut next);
        if !next.norm().is_finite() || next.norm() > 1e150 {
            break;
        }
        omega = next;
    }
    Ok(None)
}
