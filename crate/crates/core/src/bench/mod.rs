//! Benchmark problems, bound curves, per-round metrics and experiment
//! drivers.

pub mod bounds;
pub mod experiment;
pub mod problem;

use ndarray::Array1;

use crate::dpga::{edge_consensus_norm, max_edge_disagreement};
use crate::dpga_w::kron_apply_norm;
use crate::objective::CompositeObjective;
use crate::simnet::{rel_subopt, ErgodicRow};
use crate::topology::Graph;

pub use bounds::{BoundCurve, BoundKind, TauNeighborhood};
pub use experiment::{run_experiment, AlgorithmConfig, ExperimentConfig, ExperimentSummary, GammaRule, StepMode};
pub use problem::{generate_problem, Problem, ProblemSpec};

/// Metrics of one round's iterates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundMetrics {
    /// `|Fᵏ − F*|/|F*|` with `Fᵏ = Σᵢ Φᵢ(xᵢᵏ)`.
    pub rel_subopt: f64,
    /// `Vᵏ = max_E ‖xᵢᵏ − xⱼᵏ‖/√n`.
    pub consensus: f64,
}

pub fn round_metrics<O: CompositeObjective + ?Sized>(
    graph: &Graph,
    objectives: &[std::sync::Arc<O>],
    x: &[Array1<f64>],
    f_star: f64,
) -> RoundMetrics {
    let f: f64 = objectives.iter().zip(x).map(|(o, xi)| o.value(xi.view())).sum();
    let n = x.first().map_or(1, |v| v.len()) as f64;
    RoundMetrics {
        rel_subopt: rel_subopt(f, f_star),
        consensus: max_edge_disagreement(graph, x) / n.sqrt(),
    }
}

pub fn metrics<O: CompositeObjective + ?Sized>(
    graph: &Graph,
    objectives: &[std::sync::Arc<O>],
    trace: &[Vec<Array1<f64>>],
    f_star: f64,
) -> Vec<RoundMetrics> {
    trace.iter().map(|x| round_metrics(graph, objectives, x, f_star)).collect()
}

/// `(Σ_E ‖xᵢ − xⱼ‖²)^{1/2}`.
pub fn edge_aggregate(graph: &Graph, x: &[Array1<f64>]) -> f64 {
    edge_consensus_norm(graph, x)
}

/// `‖(Ω ⊗ Iₙ)x‖`.
pub fn laplacian_aggregate(graph: &Graph, x: &[Array1<f64>]) -> f64 {
    kron_apply_norm(&graph.laplacian(), x)
}

/// Ergodic rows at which the measured gap or consensus aggregate exceeds
/// `curve`. DPGA and SDPGA use the edge aggregate, DPGA-W uses `‖(W ⊗ I)x̄‖`.
pub fn bound_violations(curve: &BoundCurve, rows: &[ErgodicRow]) -> Vec<usize> {
    rows.iter()
        .filter(|r| r.round > 0)
        .filter(|r| {
            let (sub, cons) = curve.eval(r.round);
            let gap = r.abs_gap.unwrap_or(0.0);
            let agg = match curve.kind {
                BoundKind::DpgaW => r.w_consensus.unwrap_or(f64::INFINITY),
                _ => r.edge_consensus,
            };
            gap > sub || agg > cons
        })
        .map(|r| r.round)
        .collect()
}
