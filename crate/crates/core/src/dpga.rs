//! DPGA and its stochastic variant SDPGA: node-level linearized ADMM on the
//! edge formulation `xᵢ = y_ij = xⱼ`, with the edge duals eliminated into
//! the per-node pair `(s, p)`.

use ndarray::{Array1, Array2, ArrayView1};
use sprs::TriMat;

use crate::engine::{Block, BlockProblem, Coupling, StepPlan, StepRule};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::objective::{dist_sq, CompositeObjective, NoisyOracle, SharedObjective};
use crate::simnet::{check_inbox, Message, NodeProgram};
use crate::topology::Graph;

/// Backtracking gives up after this many trial estimates.
pub const BACKTRACK_CAP: usize = 60;

/// Default constant of the penalty rule `γ = √(c·N/(|E|·d_min))`.
pub const GAMMA_HEURISTIC_C: f64 = 2.6;

/// The weighted Laplacian `Γ` with `Γᵢⱼ = −γᵢγⱼ/(γᵢ+γⱼ)` on edges.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaMatrix {
    diag: Vec<f64>,
    offdiag: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
}

impl GammaMatrix {
    pub fn new(graph: &Graph, gammas: &[f64]) -> Result<Self> {
        check_gammas(graph, gammas)?;
        let n = graph.node_count();
        let mut diag = vec![0.0; n];
        let mut offdiag = Vec::with_capacity(n);
        for (i, d) in diag.iter_mut().enumerate() {
            let row: Vec<f64> = graph
                .neighbors(i)
                .iter()
                .map(|&j| -gammas[i] * gammas[j] / (gammas[i] + gammas[j]))
                .collect();
            *d = -row.iter().sum::<f64>();
            offdiag.push(row);
        }
        Ok(GammaMatrix {
            diag,
            offdiag,
            neighbors: (0..n).map(|i| graph.neighbors(i).to_vec()).collect(),
        })
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Off-diagonal entries of row `i`, aligned with the sorted neighbor list.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.offdiag[i]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.diag.len();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            m[[i, i]] = self.diag[i];
            for (&j, &v) in self.neighbors[i].iter().zip(&self.offdiag[i]) {
                m[[i, j]] = v;
            }
        }
        m
    }
}

fn check_gammas(graph: &Graph, gammas: &[f64]) -> Result<()> {
    if gammas.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            context: "penalties",
            expected: graph.node_count(),
            got: gammas.len(),
        });
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(invalid(format!("penalties must be positive and finite, got {g}")));
    }
    Ok(())
}

/// `γ = √(c·N/(|E|·d_min))`.
pub fn gamma_heuristic(graph: &Graph, c_factor: f64) -> Result<f64> {
    if !(c_factor > 0.0) || !c_factor.is_finite() {
        return Err(invalid(format!("penalty factor must be positive, got {c_factor}")));
    }
    if graph.edge_count() == 0 {
        return Err(invalid("penalty heuristic needs at least one edge"));
    }
    let n = graph.node_count() as f64;
    let e = graph.edge_count() as f64;
    Ok((c_factor * n / (e * graph.min_degree() as f64)).sqrt())
}

/// `γ* = (2/‖x⁰ − x*‖)·√((Σκᵢ²/σ_min(Ω) + 1)/|E|)`, the minimizer of the
/// equal-penalty bound.
pub fn optimal_gamma(graph: &Graph, kappas: &[f64], psi_min_pos: f64, dist_x0_xstar: f64) -> Result<f64> {
    if !(dist_x0_xstar > 0.0) || !(psi_min_pos > 0.0) || graph.edge_count() == 0 {
        return Err(invalid("optimal penalty needs x⁰ ≠ x*, a connected graph and at least one edge"));
    }
    let sk: f64 = kappas.iter().map(|k| k * k).sum();
    Ok(2.0 / dist_x0_xstar * ((sk / psi_min_pos + 1.0) / graph.edge_count() as f64).sqrt())
}

#[derive(Clone, Debug)]
pub struct Backtrack {
    pub x: Array1<f64>,
    pub lipschitz: f64,
    pub step: f64,
    pub trials: usize,
}

/// Descent-lemma backtracking. Trial estimates are `L_prev·υ^{ℓ−1}` for
/// `ℓ = ℓ₀, ℓ₀+1, …` with `ℓ₀ = 1` on the very first iteration (so the
/// initial estimate is tried as is) and `ℓ₀ = 0` afterwards. The step is
/// `c = 1/(L + penalty_curvature)` and the proposal is
/// `prox_{cξ}(x − c(∇f(x) + coupling_grad))`. Any trial with `L ≥ Lᵢ` is
/// accepted, so the estimate never exceeds `υ·Lᵢ`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_backtrack(
    objective: &dyn CompositeObjective,
    x: ArrayView1<f64>,
    f_x: f64,
    grad: ArrayView1<f64>,
    coupling_grad: ArrayView1<f64>,
    l_prev: f64,
    penalty_curvature: f64,
    upsilon: f64,
    first: bool,
) -> Result<Backtrack> {
    if !(upsilon > 1.0) {
        return Err(invalid(format!("backtracking factor must exceed 1, got {upsilon}")));
    }
    let direction = &grad + &coupling_grad;
    let start = if first { 1 } else { 0 };
    for trial in 0..BACKTRACK_CAP {
        let l = l_prev * upsilon.powi(start + trial as i32 - 1);
        let c = 1.0 / (l + penalty_curvature);
        let v = &x - &(&direction * c);
        let x_new = objective.prox(v.view(), c)?;
        let delta = &x_new - &x;
        let model = f_x + grad.dot(&delta) + 0.5 * l * delta.dot(&delta);
        // Once `l` reaches the global constant the check holds in exact
        // arithmetic; testing it anyway lets rounding inflate `l` near a fixed point.
        if l >= objective.lipschitz() || objective.smooth_value(x_new.view()) <= model {
            return Ok(Backtrack {
                x: x_new,
                lipschitz: l,
                step: c,
                trials: trial + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "step backtracking",
        iterations: BACKTRACK_CAP,
        residual: f64::NAN,
    })
}

/// Options shared by DPGA and SDPGA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpgaConfig {
    pub rule: StepRule,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DpgaConfig {
    fn default() -> Self {
        DpgaConfig {
            rule: StepRule::constant(),
            sigma: 0.0,
            seed: 0,
        }
    }
}

impl DpgaConfig {
    pub fn stochastic(rule: StepRule, sigma: f64, seed: u64) -> Self {
        DpgaConfig { rule, sigma, seed }
    }
}

#[derive(Clone, Debug)]
pub struct DpgaNode {
    id: usize,
    neighbors: Vec<usize>,
    gamma_row: Vec<f64>,
    gamma_diag: f64,
    objective: SharedObjective,
    rule: StepRule,
    base_step: f64,
    penalty_curvature: f64,
    pub x: Array1<f64>,
    pub s: Array1<f64>,
    pub p: Array1<f64>,
    pub c: f64,
    pub gamma: f64,
    pub l_running: f64,
    pub last_trials: usize,
    oracle: NoisyOracle,
    iterations: usize,
}

/// Builds DPGA (σ = 0) or SDPGA nodes. The setup exchange of `x⁰` that
/// forms `s⁰ = Σⱼ Γᵢⱼxⱼ⁰` happens in the simulator's round 0.
pub fn dpga_init(
    graph: &Graph,
    objectives: &[SharedObjective],
    gammas: &[f64],
    x0: &[Array1<f64>],
    cfg: DpgaConfig,
) -> Result<Vec<DpgaNode>> {
    let n = graph.node_count();
    check_lengths(n, objectives.len(), x0.len())?;
    let gm = GammaMatrix::new(graph, gammas)?;
    let lips: Vec<f64> = objectives.iter().map(|o| o.lipschitz()).collect();
    let curv: Vec<f64> = (0..n).map(|i| gammas[i] * graph.degree(i) as f64).collect();
    let plan = StepPlan::new(cfg.rule, lips, curv.clone())?;
    plan.check_noise(cfg.sigma)?;
    (0..n)
        .map(|i| {
            if x0[i].len() != objectives[i].dim() {
                return Err(Error::DimensionMismatch {
                    context: "initial iterate",
                    expected: objectives[i].dim(),
                    got: x0[i].len(),
                });
            }
            let dim = x0[i].len();
            Ok(DpgaNode {
                id: i,
                neighbors: graph.neighbors(i).to_vec(),
                gamma_row: gm.row(i).to_vec(),
                gamma_diag: gm.diag(i),
                objective: objectives[i].clone(),
                rule: cfg.rule,
                base_step: plan.base()[i],
                penalty_curvature: curv[i],
                x: x0[i].clone(),
                s: Array1::zeros(dim),
                p: Array1::zeros(dim),
                c: plan.step(i, 0),
                gamma: gammas[i],
                l_running: plan.initial_lipschitz(i),
                last_trials: 0,
                oracle: NoisyOracle::new(cfg.sigma, cfg.seed, i as u64)?,
                iterations: 0,
            })
        })
        .collect()
}

pub(crate) fn check_lengths(n: usize, objectives: usize, x0: usize) -> Result<()> {
    if objectives != n || x0 != n {
        return Err(Error::DimensionMismatch {
            context: "per-node inputs",
            expected: n,
            got: if objectives != n { objectives } else { x0 },
        });
    }
    Ok(())
}

impl DpgaNode {
    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    fn mix(&self, inbox: &[Message]) -> Array1<f64> {
        let mut s = &self.x * self.gamma_diag;
        for (m, &w) in inbox.iter().zip(&self.gamma_row) {
            s.scaled_add(w, &*m.payload);
        }
        s
    }

    fn update_x(&mut self) -> Result<()> {
        let k = self.iterations;
        let extra = &self.p + &self.s;
        match self.rule {
            StepRule::AdaptiveBacktrack { upsilon, .. } => {
                let f_x = self.objective.smooth_value(self.x.view());
                let grad = self.objective.smooth_grad(self.x.view());
                let out = adaptive_backtrack(
                    self.objective.as_ref(),
                    self.x.view(),
                    f_x,
                    grad.view(),
                    extra.view(),
                    self.l_running,
                    self.penalty_curvature,
                    upsilon,
                    k == 0,
                )?;
                self.l_running = out.lipschitz;
                self.c = out.step;
                self.last_trials = out.trials;
                self.x = out.x;
            }
            _ => {
                let c = step_size(self.rule, self.base_step, k);
                let mut g = self.oracle.perturb(self.objective.smooth_grad(self.x.view()));
                g += &extra;
                let v = &self.x - &(g * c);
                self.x = self.objective.prox(v.view(), c)?;
                self.c = c;
            }
        }
        self.iterations += 1;
        Ok(())
    }
}

pub(crate) fn step_size(rule: StepRule, base: f64, k: usize) -> f64 {
    match rule {
        StepRule::Constant { .. } | StepRule::AdaptiveBacktrack { .. } => base,
        StepRule::Diminishing => 1.0 / (1.0 / base + (k as f64).sqrt()),
        StepRule::HorizonConstant { horizon } => 1.0 / (1.0 / base + (horizon as f64).sqrt()),
    }
}

impl NodeProgram for DpgaNode {
    fn id(&self) -> usize {
        self.id
    }

    fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    fn setup_phases(&self) -> usize {
        1
    }

    fn phases(&self) -> usize {
        1
    }

    fn emit(&mut self, round: usize, _phase: usize) -> Result<Array1<f64>> {
        if round > 0 {
            self.update_x()?;
        }
        Ok(self.x.clone())
    }

    fn absorb(&mut self, round: usize, phase: usize, inbox: &[Message]) -> Result<()> {
        check_inbox(self.id, &self.neighbors, round, phase, self.x.len(), inbox)?;
        self.s = self.mix(inbox);
        if round > 0 {
            self.p += &self.s;
        }
        Ok(())
    }

    fn iterate(&self) -> ArrayView1<'_, f64> {
        self.x.view()
    }

    fn stored_vectors(&self) -> usize {
        [&self.x, &self.s, &self.p].iter().filter(|v| v.len() == self.x.len()).count()
    }
}

/// The explicit edge formulation: block `i` has one constraint
/// `xᵢ − y_e = 0` per incident edge (ordered like the neighbor list) and
/// `y` stacks the edge variables in edge order.
pub fn edge_formulation(graph: &Graph, objectives: &[SharedObjective], gammas: &[f64]) -> Result<BlockProblem> {
    check_gammas(graph, gammas)?;
    if objectives.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            context: "objectives",
            expected: graph.node_count(),
            got: objectives.len(),
        });
    }
    let n = objectives[0].dim();
    let y_dim = n * graph.edge_count();
    let mut blocks = Vec::with_capacity(graph.node_count());
    for (i, obj) in objectives.iter().enumerate() {
        if obj.dim() != n {
            return Err(invalid("all objectives must share one dimension"));
        }
        let d = graph.degree(i);
        let mut a = TriMat::new((n * d, n));
        let mut b = TriMat::new((n * d, y_dim));
        for (slot, &j) in graph.neighbors(i).iter().enumerate() {
            let e = graph.edge_index(i, j).expect("neighbor edge");
            for r in 0..n {
                a.add_triplet(slot * n + r, r, 1.0);
                b.add_triplet(slot * n + r, e * n + r, -1.0);
            }
        }
        blocks.push(Block {
            a: a.to_csr(),
            b: b.to_csr(),
            rhs: Array1::zeros(n * d),
            objective: obj.clone(),
            gamma: gammas[i],
        });
    }
    BlockProblem::new(blocks, y_dim, Coupling::Free)
}

/// `y_ij⁰ = (γᵢxᵢ⁰ + γⱼxⱼ⁰)/(γᵢ + γⱼ)`, stacked in edge order.
pub fn edge_consensus_y(graph: &Graph, gammas: &[f64], x: &[Array1<f64>]) -> Array1<f64> {
    let n = x[0].len();
    let mut y = Array1::zeros(n * graph.edge_count());
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let v = (&x[i] * gammas[i] + &x[j] * gammas[j]) / (gammas[i] + gammas[j]);
        y.slice_mut(ndarray::s![e * n..(e + 1) * n]).assign(&v);
    }
    y
}

/// Splits engine multipliers into `(α_e, β_e)` per edge: α belongs to the
/// tail's constraint `xᵢ − y_e = 0`, β to the head's `xⱼ − y_e = 0`.
pub fn edge_multipliers(graph: &Graph, lambda: &[Array1<f64>], n: usize) -> (Vec<Array1<f64>>, Vec<Array1<f64>>) {
    let m = graph.edge_count();
    let mut alpha = vec![Array1::zeros(n); m];
    let mut beta = vec![Array1::zeros(n); m];
    for (i, lam) in lambda.iter().enumerate() {
        for (slot, &j) in graph.neighbors(i).iter().enumerate() {
            let e = graph.edge_index(i, j).expect("neighbor edge");
            let part = lam.slice(ndarray::s![slot * n..(slot + 1) * n]).to_owned();
            if i < j {
                alpha[e] = part;
            } else {
                beta[e] = part;
            }
        }
    }
    (alpha, beta)
}

/// `(Σ_{(i,j)∈E} ‖xᵢ − xⱼ‖²)^{1/2}`.
pub fn edge_consensus_norm(graph: &Graph, x: &[Array1<f64>]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| dist_sq(x[i].view(), x[j].view()))
        .sum::<f64>()
        .sqrt()
}

/// `max_{(i,j)∈E} ‖xᵢ − xⱼ‖`.
pub fn max_edge_disagreement(graph: &Graph, x: &[Array1<f64>]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| linalg::dist(x[i].view(), x[j].view()))
        .fold(0.0, f64::max)
}
