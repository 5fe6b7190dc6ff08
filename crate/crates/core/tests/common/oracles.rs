//! Side-by-side runs of the node programs against their explicit
//! formulations. Each returns the worst entrywise discrepancy seen.

use std::sync::Arc;

use decopt::baselines::{admm_init, FullProx};
use decopt::dpga::{dpga_init, edge_consensus_y, edge_formulation, edge_multipliers, DpgaConfig};
use decopt::dpga_w::{dpgaw_init, w_formulation, CommunicationMatrix};
use decopt::engine::{pgadmm_step, primal_dual_step, spgadmm_step, Block, BlockProblem, Coupling, EngineState, StepPlan, StepRule};
use decopt::objective::SharedObjective;
use decopt::simnet::node_oracles;
use decopt::topology::{Graph, TopologyKind};
use ndarray::{Array1, Array2};
use rand::Rng;

use super::*;

pub fn random_gammas(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed ^ 0xabc);
    (0..n).map(|_| r.gen_range(0.5..2.0)).collect()
}

/// Weighted Laplacian with edge weights drawn from `[0.3, 2]`.
pub fn random_w(graph: &Graph, seed: u64) -> CommunicationMatrix {
    let mut r = rng(seed ^ 0x5eed);
    let n = graph.node_count();
    let mut w = Array2::zeros((n, n));
    for &(i, j) in graph.edges() {
        let v: f64 = r.gen_range(0.3..2.0);
        w[[i, j]] = -v;
        w[[j, i]] = -v;
        w[[i, i]] += v;
        w[[j, j]] += v;
    }
    CommunicationMatrix::new(graph, w).unwrap()
}

/// DPGA against PG-ADMM on the edge formulation: `x`, `α + β = 0`, the
/// weighted-average `y` and `p = Σ` incident multipliers.
pub fn edge_formulation_gap(seed: u64, kind: TopologyKind, nodes: usize, rounds: usize, rule: StepRule, sigma: f64) -> f64 {
    let inst = small_instance(seed, kind, nodes, 4);
    let gammas = random_gammas(seed, nodes);
    let shared = inst.shared();
    let cfg = DpgaConfig::stochastic(rule, sigma, seed);
    let mut dp = dpga_init(&inst.graph, &shared, &gammas, &inst.x0, cfg).unwrap();
    setup_nodes(&inst.graph, &mut dp);

    let prob = edge_formulation(&inst.graph, &shared, &gammas).unwrap();
    let curv: Vec<f64> = (0..nodes).map(|i| gammas[i] * inst.graph.degree(i) as f64).collect();
    let mut worst: f64 = 0.0;
    for (a, b) in prob.penalty_curvature().iter().zip(&curv) {
        worst = worst.max((a - b).abs());
    }
    let plan = StepPlan::new(rule, prob.lipschitz(), curv).unwrap();
    let y0 = edge_consensus_y(&inst.graph, &gammas, &inst.x0);
    let mut st = EngineState::new(&prob, &plan, inst.x0.clone(), y0).unwrap();
    let mut oracles = node_oracles(sigma, seed, nodes).unwrap();
    let n = inst.x0[0].len();
    for round in 1..=rounds {
        run_round(&inst.graph, &mut dp, round);
        if sigma > 0.0 {
            spgadmm_step(&mut st, &prob, &plan, &mut oracles).unwrap();
        } else {
            pgadmm_step(&mut st, &prob, &plan).unwrap();
        }
        worst = worst.max(max_abs_diff_all(&iterates(&dp), &st.x));
        let (alpha, beta) = edge_multipliers(&inst.graph, &st.lambda, n);
        for (a, b) in alpha.iter().zip(&beta) {
            worst = worst.max(max_abs_diff(a, &-b));
        }
        let y = edge_consensus_y(&inst.graph, &gammas, &st.x);
        worst = worst.max(max_abs_diff(&y, &st.y));
        for (i, node) in dp.iter().enumerate() {
            let mut p = Array1::zeros(n);
            for slot in 0..inst.graph.degree(i) {
                p += &st.lambda[i].slice(ndarray::s![slot * n..(slot + 1) * n]);
            }
            worst = worst.max(max_abs_diff(&node.p, &p));
        }
    }
    worst
}

/// DPGA-W against PG-ADMM on the W-formulation: `x` and `λᵢⱼ = pᵢ`.
pub fn w_formulation_gap(seed: u64, kind: TopologyKind, nodes: usize, rounds: usize, rule: StepRule, sigma: f64, nonzero_p0: bool) -> f64 {
    let inst = small_instance(seed, kind, nodes, 3);
    let w = random_w(&inst.graph, seed);
    let gammas = random_gammas(seed, nodes);
    let shared = inst.shared();
    let p0: Option<Vec<Array1<f64>>> = nonzero_p0.then(|| {
        let mut r = rng(seed + 100);
        (0..nodes).map(|_| gaussian_vec(&mut r, 3, 0.5)).collect()
    });
    let cfg = DpgaConfig::stochastic(rule, sigma, seed);
    let mut dw = dpgaw_init(&inst.graph, &w, &shared, &gammas, &inst.x0, p0.as_deref(), cfg).unwrap();

    let wf = w_formulation(&w, &shared, &gammas).unwrap();
    let curv: Vec<f64> = (0..nodes).map(|i| gammas[i] * w.omega_norm_sq(i)).collect();
    let mut worst: f64 = 0.0;
    for (a, b) in wf.problem.penalty_curvature().iter().zip(&curv) {
        worst = worst.max((a - b).abs());
    }
    let plan = StepPlan::new(rule, wf.problem.lipschitz(), curv).unwrap();
    let mut st = EngineState::new(&wf.problem, &plan, inst.x0.clone(), wf.initial_y(&w, &inst.x0)).unwrap();
    if let Some(p0) = &p0 {
        st.lambda = wf.initial_lambda(&w, p0);
    }
    let mut oracles = node_oracles(sigma, seed, nodes).unwrap();
    for round in 1..=rounds {
        run_round(&inst.graph, &mut dw, round);
        if sigma > 0.0 {
            spgadmm_step(&mut st, &wf.problem, &plan, &mut oracles).unwrap();
        } else {
            pgadmm_step(&mut st, &wf.problem, &plan).unwrap();
        }
        worst = worst.max(max_abs_diff_all(&iterates(&dw), &st.x));
        for i in 0..nodes {
            for &j in w.closed_neighborhood(i) {
                let lam = wf.multiplier(&w, &st.lambda, i, j).unwrap();
                worst = worst.max(max_abs_diff(&lam, &dw[i].p));
            }
        }
    }
    worst
}

/// One block `min Φ(x) + g(y)` s.t. `Ax − y = 0` with random `A`.
pub fn pd_problem(seed: u64, coupling: Coupling) -> (BlockProblem, Array1<f64>) {
    let mut r = rng(seed);
    let (m, n) = (5, 4);
    let obj = random_objective(&mut r, 3, n, 2, 0.2, 0.8) as SharedObjective;
    let a = gaussian_mat(&mut r, m, n, 1.0);
    let blk = Block::dense(a, -Array2::eye(m), Array1::zeros(m), obj, 1.7);
    (BlockProblem::new(vec![blk], m, coupling).unwrap(), gaussian_vec(&mut r, n, 1.0))
}

/// PG-ADMM against the primal-dual recursion; also returns the multipliers.
pub fn primal_dual_gap(prob: &BlockProblem, x0: Array1<f64>, iters: usize) -> (f64, Vec<Array1<f64>>) {
    let plan = StepPlan::for_problem(prob, StepRule::constant()).unwrap();
    let c = plan.base()[0];
    let gamma = prob.blocks()[0].gamma;
    let y0 = decopt::linalg::sparse_mul(&prob.blocks()[0].a, x0.view());
    let mut st = EngineState::new(prob, &plan, vec![x0.clone()], y0).unwrap();
    let (mut x, mut lam) = (x0, Array1::zeros(prob.y_dim()));
    let mut lam_prev = lam.clone();
    let mut worst: f64 = 0.0;
    let mut lambdas = Vec::new();
    for _ in 0..iters {
        pgadmm_step(&mut st, prob, &plan).unwrap();
        let (xn, ln) = primal_dual_step(x.view(), lam.view(), lam_prev.view(), prob, c, gamma).unwrap();
        lam_prev = lam;
        x = xn;
        lam = ln;
        worst = worst.max(max_abs_diff(&st.x[0], &x)).max(max_abs_diff(&st.lambda[0], &lam));
        lambdas.push(lam.clone());
    }
    (worst, lambdas)
}

/// ADMM against DPGA-W with `ξᵢ ← Φᵢ`, `fᵢ ← 0` and a common penalty.
pub fn admm_gap(seed: u64, kind: TopologyKind, nodes: usize, rounds: usize) -> f64 {
    let inst = small_instance(seed, kind, nodes, 3);
    let w = CommunicationMatrix::laplacian(&inst.graph).unwrap();
    let gamma = 0.9;
    let shared = inst.shared();
    let full: Vec<SharedObjective> = shared.iter().map(|o| Arc::new(FullProx::new(o.clone())) as SharedObjective).collect();
    let cfg = DpgaConfig::stochastic(StepRule::Constant { safety: 1.0 }, 0.0, 0);
    let mut dw = dpgaw_init(&inst.graph, &w, &full, &vec![gamma; nodes], &inst.x0, None, cfg).unwrap();
    let mut admm = admm_init(&inst.graph, &w, &shared, gamma, &inst.x0).unwrap();
    let mut worst: f64 = 0.0;
    for round in 1..=rounds {
        run_round(&inst.graph, &mut dw, round);
        run_round(&inst.graph, &mut admm, round);
        worst = worst.max(max_abs_diff_all(&iterates(&dw), &iterates(&admm)));
    }
    worst
}

/// SDPGA and SDPGA-W with `σ = 0` and constant steps against the
/// deterministic programs.
pub fn zero_noise_gap(seed: u64, nodes: usize, rounds: usize) -> f64 {
    let inst = small_instance(seed, TopologyKind::SmallWorld, nodes, 4);
    let gammas = random_gammas(seed, nodes);
    let shared = inst.shared();
    let noisy = DpgaConfig::stochastic(StepRule::constant(), 0.0, seed + 777);
    let mut a = dpga_init(&inst.graph, &shared, &gammas, &inst.x0, DpgaConfig::default()).unwrap();
    let mut b = dpga_init(&inst.graph, &shared, &gammas, &inst.x0, noisy).unwrap();
    setup_nodes(&inst.graph, &mut a);
    setup_nodes(&inst.graph, &mut b);
    let w = random_w(&inst.graph, seed);
    let mut aw = dpgaw_init(&inst.graph, &w, &shared, &gammas, &inst.x0, None, DpgaConfig::default()).unwrap();
    let mut bw = dpgaw_init(&inst.graph, &w, &shared, &gammas, &inst.x0, None, noisy).unwrap();
    let mut worst: f64 = 0.0;
    for round in 1..=rounds {
        run_round(&inst.graph, &mut a, round);
        run_round(&inst.graph, &mut b, round);
        run_round(&inst.graph, &mut aw, round);
        run_round(&inst.graph, &mut bw, round);
        worst = worst
            .max(max_abs_diff_all(&iterates(&a), &iterates(&b)))
            .max(max_abs_diff_all(&iterates(&aw), &iterates(&bw)));
    }
    worst
}
