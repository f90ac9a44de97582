//! Dynamic programming over the staged expansion of a covariance graph.
//!
//! Stage `ℓ` is the state at time `ℓ·Δs`. An edge from `(q, ℓ)` under method `ρ` lands at
//! `(succ(q, ρ), min(ℓ + m_ρ, α_max))`, so the last column gathers every arrival that
//! covers the window. Work is `α_max · Q · D` relaxations regardless of the window length.

use serde::{Deserialize, Serialize};

use crate::covgraph::CovarianceGraph;
use crate::dynamics::DiscretizedDynamics;
use crate::error::{PlateError, Result};
use crate::linalg::trace_of_product;
use crate::model::{method_by_id, PerceptionMethod};
use crate::schedule::{window_ticks, Schedule};

/// Best cost-to-arrive tables; all indexed `[ℓ][q]`.
#[derive(Debug, Clone)]
pub struct DPTables {
    pub q0: usize,
    pub alpha_max: usize,
    pub nodes: usize,
    /// Best predecessor node.
    pub mq: Vec<usize>,
    /// Method id on the arriving edge (0 when unreached).
    pub mp: Vec<usize>,
    /// Stage the arriving edge left from.
    pub ms: Vec<usize>,
    /// Best cost-to-arrive, `∞` when unreached.
    pub mj: Vec<f64>,
    pub relaxations: u64,
}

impl DPTables {
    fn idx(&self, q: usize, l: usize) -> usize {
        l * self.nodes + q
    }

    pub fn cost(&self, q: usize, l: usize) -> f64 {
        self.mj[self.idx(q, l)]
    }

    pub fn predecessor(&self, q: usize, l: usize) -> (usize, usize, usize) {
        let i = self.idx(q, l);
        (self.mq[i], self.mp[i], self.ms[i])
    }

    /// Best terminal node (lowest index on ties) and its cost.
    pub fn best_terminal(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for q in 0..self.nodes {
            let j = self.cost(q, self.alpha_max);
            if j.is_finite() && best.is_none_or(|(_, b)| j < b) {
                best = Some((q, j));
            }
        }
        best
    }

    /// Method sequence and visited nodes from `(q0, 0)` to `(q, l)`.
    pub fn trace_back(&self, mut q: usize, mut l: usize) -> (Schedule, Vec<usize>) {
        let mut ids = Vec::new();
        let mut nodes = vec![q];
        while l > 0 {
            let (prev, id, src) = self.predecessor(q, l);
            ids.push(id);
            q = prev;
            l = src;
            nodes.push(q);
        }
        ids.reverse();
        nodes.reverse();
        (Schedule::new(ids), nodes)
    }
}

/// Per-node, per-duration stage costs `(1/T_f)[λ_α r + c(d) + tr(P_q M(d))]` without the
/// penalty, which depends only on the method.
struct StageTable {
    max_steps: usize,
    /// `[q * (max_steps + 1) + d]`
    cov: Vec<f64>,
    penalty: Vec<f64>,
    steps: Vec<usize>,
}

impl StageTable {
    fn new(graph: &CovarianceGraph, methods: &[PerceptionMethod], dynamics: &DiscretizedDynamics, window: u64, lambda: f64) -> Self {
        let tf = window as f64 * dynamics.dt_s();
        let max_steps = methods.iter().map(|m| m.steps as usize).max().unwrap_or(0);
        let mut cov = Vec::with_capacity(graph.len() * (max_steps + 1));
        for p in graph.representatives() {
            for d in 0..=max_steps {
                let g = &dynamics.step(d as u32).gram;
                cov.push((g.c + trace_of_product(p, &g.m)) / tf);
            }
        }
        Self {
            max_steps,
            cov,
            penalty: methods.iter().map(|m| lambda * m.penalty / tf).collect(),
            steps: methods.iter().map(|m| m.steps as usize).collect(),
        }
    }

    fn cost(&self, q: usize, method: usize, d: usize) -> f64 {
        self.cov[q * (self.max_steps + 1) + d] + self.penalty[method]
    }
}

fn check_inputs(graph: &CovarianceGraph, methods: &[PerceptionMethod], dynamics: &DiscretizedDynamics) -> Result<()> {
    if graph.is_empty() {
        return Err(PlateError::EmptyGraph);
    }
    if methods.is_empty() || !graph.is_closed(methods.len()) {
        return Err(PlateError::Dimension(format!(
            "graph is not closed under {} perception methods",
            methods.len()
        )));
    }
    if methods.iter().any(|m| m.steps > dynamics.max_steps()) {
        return Err(PlateError::Dimension("dynamics table shorter than the longest latency".into()));
    }
    Ok(())
}

/// Forward cost-to-arrive tables from `q0` over the window `[0, T_f]`.
pub fn qdp_matrices(
    q0: usize,
    tf: f64,
    lambda: f64,
    graph: &CovarianceGraph,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<DPTables> {
    check_inputs(graph, methods, dynamics)?;
    if q0 >= graph.len() {
        return Err(PlateError::UnknownNode(q0));
    }
    let alpha = window_ticks(tf, dynamics.dt_s())? as usize;
    let nodes = graph.len();
    let stages = StageTable::new(graph, methods, dynamics, alpha as u64, lambda);
    let cells = nodes * (alpha + 1);
    let mut t = DPTables {
        q0,
        alpha_max: alpha,
        nodes,
        mq: vec![0; cells],
        mp: vec![0; cells],
        ms: vec![0; cells],
        mj: vec![f64::INFINITY; cells],
        relaxations: 0,
    };
    t.mj[q0] = 0.0;
    for l in 0..alpha {
        for q in 0..nodes {
            let base = t.mj[l * nodes + q];
            for (mi, m) in methods.iter().enumerate() {
                t.relaxations += 1;
                if !base.is_finite() {
                    continue;
                }
                let target = (l + stages.steps[mi]).min(alpha);
                let cost = base + stages.cost(q, mi, target - l);
                let next = graph.successor(q, m.id);
                let cell = target * nodes + next;
                let old = t.mj[cell];
                // lower method id, then lower predecessor, on exact ties
                if cost < old || (cost == old && (m.id, q) < (t.mp[cell], t.mq[cell])) {
                    t.mj[cell] = cost;
                    t.mq[cell] = q;
                    t.mp[cell] = m.id;
                    t.ms[cell] = l;
                }
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdpSolution {
    pub schedule: Schedule,
    /// Cost along the quantized trajectory.
    pub cost: f64,
    /// Nodes visited at each epoch, starting with `q0`.
    pub nodes: Vec<usize>,
    pub relaxations: u64,
}

/// Approximately optimal schedule from node `q0`, recovered by trace-back.
pub fn qdp(
    q0: usize,
    tf: f64,
    lambda: f64,
    graph: &CovarianceGraph,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<QdpSolution> {
    let tables = qdp_matrices(q0, tf, lambda, graph, methods, dynamics)?;
    let (q, cost) = tables.best_terminal().ok_or(PlateError::Unreachable)?;
    let (schedule, nodes) = tables.trace_back(q, tables.alpha_max);
    Ok(QdpSolution { schedule, cost, nodes, relaxations: tables.relaxations })
}

/// Cost of `schedule` when the covariance is forced to follow the graph's edges from `q0`.
pub fn evaluate_on_graph(
    q0: usize,
    schedule: &Schedule,
    tf: f64,
    lambda: f64,
    graph: &CovarianceGraph,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<f64> {
    check_inputs(graph, methods, dynamics)?;
    let window = window_ticks(tf, dynamics.dt_s())?;
    let covered = schedule.duration_ticks(methods)?;
    if covered < window {
        return Err(PlateError::IncompleteSchedule { covered, window });
    }
    let tf = window as f64 * dynamics.dt_s();
    let mut q = q0;
    let mut tau = 0u64;
    let mut total = 0.0;
    for &id in &schedule.methods {
        let m = method_by_id(methods, id)?;
        let d = ((tau + m.steps as u64).min(window) - tau) as u32;
        let g = &dynamics.step(d).gram;
        total += (lambda * m.penalty + g.c + trace_of_product(graph.representative(q), &g.m)) / tf;
        q = graph.successor(q, id);
        tau += m.steps as u64;
    }
    Ok(total)
}

/// First decision of the optimal window schedule for every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub tf: f64,
    pub lambda: f64,
    /// Method id to apply from each node.
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn action(&self, q: usize) -> usize {
        self.actions[q]
    }

    /// Policy that always applies `id`.
    pub fn constant(id: usize, nodes: usize, tf: f64, lambda: f64) -> Self {
        Self { tf, lambda, actions: vec![id; nodes] }
    }
}

/// Optimal cost-to-go `V[ℓ][q]` over the staged graph, computed backwards once for all
/// start nodes; the policy at `q` is the minimizing method at stage 0.
pub fn precompute_policy(
    graph: &CovarianceGraph,
    tf: f64,
    lambda: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
) -> Result<Policy> {
    check_inputs(graph, methods, dynamics)?;
    let alpha = window_ticks(tf, dynamics.dt_s())? as usize;
    let nodes = graph.len();
    let stages = StageTable::new(graph, methods, dynamics, alpha as u64, lambda);
    let mut value = vec![0.0f64; nodes * (alpha + 1)];
    let mut actions = vec![methods[0].id; nodes];
    for l in (0..alpha).rev() {
        for q in 0..nodes {
            let mut best = f64::INFINITY;
            let mut best_id = methods[0].id;
            for (mi, m) in methods.iter().enumerate() {
                let target = (l + stages.steps[mi]).min(alpha);
                let cost = stages.cost(q, mi, target - l) + value[target * nodes + graph.successor(q, m.id)];
                if cost < best {
                    best = cost;
                    best_id = m.id;
                }
            }
            value[l * nodes + q] = best;
            if l == 0 {
                actions[q] = best_id;
            }
        }
    }
    Ok(Policy { tf, lambda, actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covgraph::{expand_graph, sample_region};
    use crate::linalg::Mat;
    use crate::scenario;

    fn setup() -> (Vec<PerceptionMethod>, DiscretizedDynamics) {
        let model = scenario::tracking_model();
        let methods = scenario::tracking_methods();
        let dyns = DiscretizedDynamics::for_methods(&model, &methods).unwrap();
        (methods, dyns)
    }

    #[test]
    fn single_node_single_method_is_a_single_path() {
        let (methods, dyns) = setup();
        let one = &methods[..1];
        let g = expand_graph(vec![Mat::identity(4, 4) * 0.2], 1.0, one, &dyns, Some(f64::INFINITY)).unwrap();
        assert_eq!(g.len(), 1);
        let t = qdp_matrices(0, 1.0, 5.0, &g, one, &dyns).unwrap();
        for l in 0..=30 {
            assert_eq!(t.cost(0, l).is_finite(), l % 3 == 0, "stage {l}");
        }
        let sol = qdp(0, 1.0, 5.0, &g, one, &dyns).unwrap();
        assert_eq!(sol.schedule, Schedule::repeated(1, one, 30).unwrap());
        let telescoped = evaluate_on_graph(0, &sol.schedule, 1.0, 5.0, &g, one, &dyns).unwrap();
        assert!((telescoped - sol.cost).abs() < 1e-12);
    }

    #[test]
    fn relaxation_count_is_exact() {
        let (methods, dyns) = setup();
        let g = expand_graph(sample_region(4, 1.0, 20, 1), 1.0, &methods, &dyns, None).unwrap();
        let t = qdp_matrices(3, 1.0, 5.0, &g, &methods, &dyns).unwrap();
        assert_eq!(t.relaxations, (30 * g.len() * 2) as u64);
    }

    #[test]
    fn traced_cost_is_reproducible() {
        let (methods, dyns) = setup();
        let g = expand_graph(sample_region(4, 1.0, 30, 4), 1.0, &methods, &dyns, None).unwrap();
        for q0 in [0, 7, 19] {
            let sol = qdp(q0, 1.0, 5.0, &g, &methods, &dyns).unwrap();
            assert!(sol.schedule.is_minimal_cover(&methods, 30).unwrap());
            let again = evaluate_on_graph(q0, &sol.schedule, 1.0, 5.0, &g, &methods, &dyns).unwrap();
            assert!((again - sol.cost).abs() <= 1e-10 * sol.cost);
        }
    }

    #[test]
    fn policy_matches_fresh_qdp_first_decision() {
        let (methods, dyns) = setup();
        let g = expand_graph(sample_region(4, 1.0, 40, 8), 1.0, &methods, &dyns, None).unwrap();
        let policy = precompute_policy(&g, 1.0, 5.0, &methods, &dyns).unwrap();
        assert_eq!(policy.actions.len(), g.len());
        for q in 0..g.len() {
            let sol = qdp(q, 1.0, 5.0, &g, &methods, &dyns).unwrap();
            assert_eq!(policy.action(q), sol.schedule.methods[0], "node {q}");
        }
    }

    #[test]
    fn open_graph_is_rejected() {
        let (methods, dyns) = setup();
        let g = crate::covgraph::CovarianceGraph::from_representatives(vec![Mat::identity(4, 4)], 1.0, 0.1).unwrap();
        assert!(qdp(0, 1.0, 5.0, &g, &methods, &dyns).is_err());
        let g = expand_graph(vec![Mat::identity(4, 4)], 1.0, &methods, &dyns, None).unwrap();
        assert!(matches!(qdp(5000, 1.0, 5.0, &g, &methods, &dyns), Err(PlateError::UnknownNode(5000))));
    }
}
