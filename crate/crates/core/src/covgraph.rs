//! Quantized covariance space and its transition graph.
//!
//! Representatives are sampled from the region `‖P‖_F ≤ B0`, every covariance is mapped to
//! its nearest representative in Frobenius norm, and the graph is closed under one filter
//! step per perception method by appending successors that land too far from every
//! existing representative.

use std::path::Path;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DiscretizedDynamics;
use crate::error::{PlateError, Result};
use crate::estimator::covariance_step;
use crate::linalg::{frobenius_distance_sq, symmetrize, Mat};
use crate::model::PerceptionMethod;
use crate::qdp::Policy;

/// Expansion aborts once the graph grows beyond this multiple of its initial size.
pub const EXPANSION_LIMIT_FACTOR: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceGraph {
    nx: usize,
    reps: Vec<Mat>,
    /// Row-major copy of every representative, for nearest-neighbour scans.
    flat: Vec<f64>,
    /// `succ[q][ρ-1]` is the node reached from `q` with method `ρ`.
    succ: Vec<Vec<usize>>,
    pub delta: f64,
    pub b0: f64,
    pub b: f64,
    pub admit_tol: f64,
    pub initial_count: usize,
}

fn row_major(m: &Mat) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Random symmetric PSD matrices with `‖P‖_F` uniform on `(0, B0]`: eigenvalues uniform on
/// the simplex, eigenvectors from the QR factor of a Gaussian matrix.
pub fn sample_region(nx: usize, b0: f64, count: usize, seed: u64) -> Vec<Mat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_psd(nx, b0, &mut rng)).collect()
}

pub(crate) fn sample_psd<R: Rng + ?Sized>(nx: usize, b0: f64, rng: &mut R) -> Mat {
    let g = Mat::from_fn(nx, nx, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..nx {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let raw: Vec<f64> = (0..nx).map(|_| Exp1.sample(rng)).collect();
    let norm = raw.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    // 1 - U lies in (0, 1]
    let target = b0 * (1.0 - rng.random::<f64>());
    let eig = nalgebra::DVector::from_iterator(nx, raw.iter().map(|v| v / norm * target));
    let mut p = &q * Mat::from_diagonal(&eig) * q.transpose();
    symmetrize(&mut p);
    p
}

fn nearest_in(flat: &[f64], stride: usize, x: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (q, rep) in flat.chunks_exact(stride).enumerate() {
        let d = frobenius_distance_sq(rep, x);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((q, d));
        }
    }
    best.map(|(q, d)| (q, d.sqrt()))
}

/// Largest distance from a sample to its nearest other sample; `√2·B0` (the diameter of
/// the PSD ball) for a single sample.
pub fn sample_spacing(reps: &[Mat], b0: f64) -> f64 {
    if reps.len() < 2 {
        return std::f64::consts::SQRT_2 * b0;
    }
    let stride = reps[0].len();
    let flat: Vec<f64> = reps.iter().flat_map(row_major).collect();
    let mut worst = 0.0f64;
    for (i, a) in flat.chunks_exact(stride).enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in flat.chunks_exact(stride).enumerate() {
            if i != j {
                best = best.min(frobenius_distance_sq(a, b));
            }
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

impl CovarianceGraph {
    /// Graph over `reps` with no edges yet.
    pub fn from_representatives(reps: Vec<Mat>, b0: f64, admit_tol: f64) -> Result<Self> {
        let nx = reps.first().ok_or(PlateError::EmptyGraph)?.nrows();
        if reps.iter().any(|r| r.shape() != (nx, nx)) {
            return Err(PlateError::Dimension("representatives differ in size".into()));
        }
        let flat = reps.iter().flat_map(row_major).collect();
        let b = reps.iter().map(|r| r.norm()).fold(0.0, f64::max);
        let n = reps.len();
        Ok(Self { nx, reps, flat, succ: vec![Vec::new(); n], delta: 0.0, b0, b, admit_tol, initial_count: n })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn representative(&self, q: usize) -> &Mat {
        &self.reps[q]
    }

    pub fn representatives(&self) -> &[Mat] {
        &self.reps
    }

    /// Number of methods with recorded edges.
    pub fn method_count(&self) -> usize {
        self.succ.first().map_or(0, |s| s.len())
    }

    /// Successor of `q` under method `id` (1-based).
    pub fn successor(&self, q: usize, id: usize) -> usize {
        self.succ[q][id - 1]
    }

    /// Every node has a successor for every method.
    pub fn is_closed(&self, methods: usize) -> bool {
        self.succ.iter().all(|s| s.len() == methods && s.iter().all(|&t| t < self.reps.len()))
    }

    /// Nearest representative to `x` (row-major), with its distance.
    fn nearest_flat(&self, x: &[f64]) -> (usize, f64) {
        nearest_in(&self.flat, self.nx * self.nx, x).expect("graph is non-empty")
    }

    fn push(&mut self, p: Mat) -> usize {
        self.flat.extend(row_major(&p));
        self.b = self.b.max(p.norm());
        self.reps.push(p);
        self.succ.push(Vec::new());
        self.reps.len() - 1
    }

    /// `(q, ρ, q')` triples in node order.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(q, s)| s.iter().enumerate().map(move |(i, &t)| (q, i + 1, t)))
            .collect()
    }
}

/// Nearest representative under the Frobenius norm, lowest index on ties.
pub fn quantize(p: &Mat, graph: &CovarianceGraph) -> Result<usize> {
    if graph.is_empty() {
        return Err(PlateError::EmptyGraph);
    }
    if p.shape() != (graph.nx, graph.nx) {
        return Err(PlateError::Dimension("covariance does not match graph".into()));
    }
    Ok(graph.nearest_flat(&row_major(p)).0)
}

/// Closes the graph under one filter step per method (nominal `R`). A successor farther
/// than `admit_tol` from every representative becomes a new node; `admit_tol` defaults to
/// the spacing of the initial samples. Records the achieved coarseness `delta` and the
/// bound `b = max ‖P_q‖_F`.
pub fn expand_graph(
    reps: Vec<Mat>,
    b0: f64,
    methods: &[PerceptionMethod],
    dynamics: &DiscretizedDynamics,
    admit_tol: Option<f64>,
) -> Result<CovarianceGraph> {
    let tol = match admit_tol {
        Some(t) => t,
        None => sample_spacing(&reps, b0),
    };
    let mut graph = CovarianceGraph::from_representatives(reps, b0, tol)?;
    if methods.is_empty() {
        return Ok(graph);
    }
    let limit = EXPANSION_LIMIT_FACTOR * graph.initial_count;
    let c = dynamics.model().c.clone();
    let mut delta = 0.0f64;
    let mut q = 0;
    while q < graph.len() {
        let mut out = Vec::with_capacity(methods.len());
        for m in methods {
            let next = covariance_step(&graph.reps[q], &dynamics.step(m.steps).transition, &c, &m.r)?;
            let (nn, dist) = graph.nearest_flat(&row_major(&next));
            let target = if dist > tol {
                if graph.len() >= limit {
                    return Err(PlateError::GraphExplosion { limit, initial: graph.initial_count });
                }
                graph.push(next)
            } else {
                delta = delta.max(dist);
                nn
            };
            out.push(target);
        }
        graph.succ[q] = out;
        q += 1;
    }
    graph.delta = delta;
    log::debug!("graph expanded {} -> {} nodes, delta {delta:.4}, B {:.4}", graph.initial_count, graph.len(), graph.b);
    Ok(graph)
}

pub const GRAPH_FILE_VERSION: u32 = 1;

/// On-disk container for a graph and, optionally, its precomputed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub version: u32,
    pub nx: usize,
    pub delta: f64,
    pub b0: f64,
    pub b: f64,
    pub admit_tol: f64,
    pub initial_count: usize,
    /// Representatives, each flattened row-major.
    pub reps: Vec<Vec<f64>>,
    /// `(q, method id, q')` with 0-based node indices.
    pub edges: Vec<(usize, usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
}

impl GraphFile {
    pub fn new(graph: &CovarianceGraph, policy: Option<Policy>) -> Self {
        Self {
            version: GRAPH_FILE_VERSION,
            nx: graph.nx,
            delta: graph.delta,
            b0: graph.b0,
            b: graph.b,
            admit_tol: graph.admit_tol,
            initial_count: graph.initial_count,
            reps: graph.reps.iter().map(row_major).collect(),
            edges: graph.edges(),
            policy,
        }
    }

    pub fn into_graph(self) -> Result<(CovarianceGraph, Option<Policy>)> {
        if self.version != GRAPH_FILE_VERSION {
            return Err(PlateError::Config {
                path: "version".into(),
                message: format!("unsupported graph file version {}", self.version),
            });
        }
        let nx = self.nx;
        let reps = self
            .reps
            .iter()
            .map(|r| {
                if r.len() != nx * nx {
                    return Err(PlateError::Dimension(format!("representative has {} entries, expected {}", r.len(), nx * nx)));
                }
                Ok(Mat::from_row_slice(nx, nx, r))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut graph = CovarianceGraph::from_representatives(reps, self.b0, self.admit_tol)?;
        graph.delta = self.delta;
        graph.b = self.b;
        graph.initial_count = self.initial_count;
        let n = graph.len();
        for (q, id, t) in self.edges {
            if q >= n || t >= n {
                return Err(PlateError::UnknownNode(q.max(t)));
            }
            if id == 0 {
                return Err(PlateError::UnknownMethod(id));
            }
            let s = &mut graph.succ[q];
            if s.len() < id {
                s.resize(id, usize::MAX);
            }
            s[id - 1] = t;
        }
        if graph.succ.iter().flatten().any(|&t| t == usize::MAX) {
            return Err(PlateError::Config { path: "edges".into(), message: "missing edge".into() });
        }
        if let Some(p) = &self.policy {
            if p.actions.len() != n {
                return Err(PlateError::Config { path: "policy.actions".into(), message: format!("expected {n} entries") });
            }
        }
        Ok((graph, self.policy))
    }
}

pub fn save_graph(path: &Path, graph: &CovarianceGraph, policy: Option<&Policy>) -> Result<()> {
    let file = GraphFile::new(graph, policy.cloned());
    let w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(w, &file)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<(CovarianceGraph, Option<Policy>)> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let file: GraphFile = serde_json::from_reader(r)?;
    file.into_graph()
}

/// Smallest eigenvalue of every representative (used by sanity checks).
pub fn min_representative_eigenvalue(graph: &CovarianceGraph) -> f64 {
    graph
        .reps
        .iter()
        .map(|r| SymmetricEigen::new(r.clone()).eigenvalues.min())
        .fold(f64::INFINITY, f64::min)
}
