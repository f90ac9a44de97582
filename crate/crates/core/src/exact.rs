//! Exhaustive recursive scheduler. Exact, but the number of calls grows like
//! `D^{α_max}` with `α_max = ⌊T_f / min Δ^ρ⌋`, so a depth cap guards against blow-up.

use crate::dynamics::DiscretizedDynamics;
use crate::error::{PlateError, Result};
use crate::estimator::covariance_step;
use crate::linalg::Mat;
use crate::model::PerceptionMethod;
use crate::schedule::{stage_cost, window_ticks, Schedule};

pub const DEFAULT_DEPTH_CAP: u64 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub schedule: Schedule,
    pub cost: f64,
    /// Number of recursive invocations performed.
    pub calls: u64,
}

struct Search<'a> {
    methods: &'a [PerceptionMethod],
    dynamics: &'a DiscretizedDynamics,
    window: u64,
    lambda: f64,
    calls: u64,
}

impl Search<'_> {
    fn recurse(&mut self, tau: u64, p: &Mat) -> Result<(Vec<usize>, f64)> {
        self.calls += 1;
        let c = &self.dynamics.model().c;
        let mut best = f64::INFINITY;
        let mut best_tail: Vec<usize> = Vec::new();
        for m in self.methods {
            let next = tau + m.steps as u64;
            let d = (next.min(self.window) - tau) as u32;
            let (cov, pen) = stage_cost(p, m, d, self.window, self.lambda, self.dynamics);
            let mut cost = cov + pen;
            let mut tail = Vec::new();
            if next < self.window {
                let p_next = covariance_step(p, &self.dynamics.step(m.steps).transition, c, &m.r)?;
                let (sub, sub_cost) = self.recurse(next, &p_next)?;
                cost += sub_cost;
                tail = sub;
            }
            // strict comparison in ascending id order keeps the lowest id on ties
            if cost < best {
                best = cost;
                tail.insert(0, m.id);
                best_tail = tail;
            }
        }
        Ok((best_tail, best))
    }
}

/// Globally optimal schedule over all minimal covers of `[0, T_f]`.
pub fn dyn_prog_exact(
    p0: &Mat,
    tf: f64,
    lambda: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<ExactSolution> {
    dyn_prog_exact_capped(p0, tf, lambda, methods, dynamics, DEFAULT_DEPTH_CAP)
}

pub fn dyn_prog_exact_capped(
    p0: &Mat,
    tf: f64,
    lambda: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
    depth_cap: u64,
) -> Result<ExactSolution> {
    let window = window_ticks(tf, dynamics.dt_s())?;
    let min_steps = methods
        .iter()
        .map(|m| m.steps as u64)
        .min()
        .ok_or_else(|| PlateError::InvalidModel("no perception methods".into()))?;
    let depth = window / min_steps;
    if depth > depth_cap {
        return Err(PlateError::ExplosionGuard { depth, cap: depth_cap });
    }
    let mut search = Search { methods, dynamics, window, lambda, calls: 0 };
    let (ids, cost) = search.recurse(0, p0)?;
    Ok(ExactSolution { schedule: Schedule::new(ids), cost, calls: search.calls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::evaluate_schedule;
    use crate::scenario;

    fn setup() -> (Vec<PerceptionMethod>, DiscretizedDynamics) {
        let model = scenario::tracking_model();
        let methods = scenario::tracking_methods();
        let dyns = DiscretizedDynamics::for_methods(&model, &methods).unwrap();
        (methods, dyns)
    }

    #[test]
    fn single_method_has_one_schedule() {
        let (methods, dyns) = setup();
        let one = &methods[..1];
        let p0 = Mat::identity(4, 4) * 0.3;
        let sol = dyn_prog_exact(&p0, 1.0, 5.0, one, &dyns).unwrap();
        assert_eq!(sol.schedule, Schedule::repeated(1, one, 30).unwrap());
        let j = evaluate_schedule(&p0, &sol.schedule, 1.0, 5.0, one, &dyns).unwrap();
        assert!((j.total - sol.cost).abs() <= 1e-12 * j.total);
    }

    #[test]
    fn identical_methods_tie_to_lowest_id() {
        let (methods, dyns) = setup();
        let mut twin = methods[0].clone();
        twin.id = 2;
        let pair = vec![methods[0].clone(), twin];
        let p0 = Mat::identity(4, 4) * 0.5;
        let sol = dyn_prog_exact(&p0, 1.0, 5.0, &pair, &dyns).unwrap();
        assert!(sol.schedule.methods.iter().all(|&id| id == 1));
        let stat = evaluate_schedule(&p0, &Schedule::repeated(2, &pair, 30).unwrap(), 1.0, 5.0, &pair, &dyns).unwrap();
        assert!((stat.total - sol.cost).abs() <= 1e-12 * sol.cost);
    }

    #[test]
    fn huge_penalty_picks_cheapest_penalty_schedule() {
        let (methods, dyns) = setup();
        let p0 = Mat::identity(4, 4) * 0.5;
        // 10 uses of method 1 cost 0.5, any use of method 2 costs at least 0.24 + ...
        let sol = dyn_prog_exact(&p0, 1.0, 1e6, &methods, &dyns).unwrap();
        let penalty: f64 = sol.schedule.methods.iter().map(|&id| methods[id - 1].penalty).sum();
        // enumerate the penalty of every minimal cover and compare
        fn min_penalty(t: u64, methods: &[PerceptionMethod]) -> f64 {
            methods
                .iter()
                .map(|m| m.penalty + if t + (m.steps as u64) < 30 { min_penalty(t + m.steps as u64, methods) } else { 0.0 })
                .fold(f64::INFINITY, f64::min)
        }
        assert!((penalty - min_penalty(0, &methods)).abs() < 1e-12);
        assert_eq!(sol.schedule, Schedule::repeated(1, &methods, 30).unwrap());
    }

    #[test]
    fn call_count_within_worst_case() {
        let (methods, dyns) = setup();
        let sol = dyn_prog_exact(&Mat::identity(4, 4), 1.0, 5.0, &methods, &dyns).unwrap();
        assert!(sol.calls <= 2u64.pow(10));
    }

    #[test]
    fn depth_cap_guards_long_windows() {
        let (methods, dyns) = setup();
        let err = dyn_prog_exact(&Mat::identity(4, 4), 10.0, 5.0, &methods, &dyns);
        assert!(matches!(err, Err(PlateError::ExplosionGuard { depth: 100, cap: 24 })));
    }
}
