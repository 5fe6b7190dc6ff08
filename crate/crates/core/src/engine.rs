//! Linearized (proximal-gradient) ADMM for
//! `min g(y) + Σᵢ Φᵢ(xᵢ)  s.t.  Aᵢxᵢ + Bᵢy = bᵢ`,
//! its stochastic-gradient variant, and the equivalent primal-dual iteration.
//!
//! Only couplings with a closed-form y-minimization are supported: `g ≡ 0`
//! and indicators of "zero-sum" subspaces (sums over disjoint index groups
//! vanish; singleton groups pin a coordinate to zero).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::dpga::adaptive_backtrack;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, sparse_mul};
use crate::objective::{NoisyOracle, SharedObjective, LIPSCHITZ_TOL};

/// Largest y-dimension for which a non-diagonal `Σγᵢ BᵢᵀBᵢ` is factored densely.
const DENSE_Y_LIMIT: usize = 4000;

#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    /// `g ≡ 0`.
    Free,
    /// Indicator of `{y : Σ_{r∈G} y_r = 0 for every group G}`.
    ZeroSum(Vec<Vec<usize>>),
}

impl Coupling {
    /// Euclidean projection onto dom g (identity for `Free`).
    pub fn project(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let mut out = v.to_owned();
        if let Coupling::ZeroSum(groups) = self {
            for g in groups {
                let mean = g.iter().map(|&r| v[r]).sum::<f64>() / g.len() as f64;
                for &r in g {
                    out[r] -= mean;
                }
            }
        }
        out
    }

    /// `prox_{γ g*}(v) = v − γ·prox_{g/γ}(v/γ)`; for the supported g the
    /// inner prox is the projection, so this is `v − P(v)`.
    pub fn conjugate_prox(&self, v: ArrayView1<f64>, gamma: f64) -> Array1<f64> {
        let scaled = v.mapv(|e| e / gamma);
        let p = self.project(scaled.view());
        &v - &(p * gamma)
    }

    /// Largest constraint violation of `y`.
    pub fn infeasibility(&self, y: ArrayView1<f64>) -> f64 {
        match self {
            Coupling::Free => 0.0,
            Coupling::ZeroSum(groups) => groups
                .iter()
                .map(|g| g.iter().map(|&r| y[r]).sum::<f64>().abs())
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub a: CsMat<f64>,
    pub b: CsMat<f64>,
    pub rhs: Array1<f64>,
    pub objective: SharedObjective,
    pub gamma: f64,
}

impl Block {
    pub fn dense(a: Array2<f64>, b: Array2<f64>, rhs: Array1<f64>, objective: SharedObjective, gamma: f64) -> Self {
        Block {
            a: linalg::dense_to_sparse(a.view()),
            b: linalg::dense_to_sparse(b.view()),
            rhs,
            objective,
            gamma,
        }
    }
}

#[derive(Clone, Debug)]
enum YSolver {
    Diagonal(Array1<f64>),
    Dense(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct BlockProblem {
    blocks: Vec<Block>,
    a_t: Vec<CsMat<f64>>,
    b_t: Vec<CsMat<f64>>,
    a_norm_sq: Vec<f64>,
    y_dim: usize,
    coupling: Coupling,
    solver: YSolver,
}

impl BlockProblem {
    pub fn new(blocks: Vec<Block>, y_dim: usize, coupling: Coupling) -> Result<Self> {
        if blocks.is_empty() {
            return Err(invalid("block problem needs at least one block"));
        }
        for (i, blk) in blocks.iter().enumerate() {
            let m = blk.rhs.len();
            if blk.a.rows() != m || blk.b.rows() != m {
                return Err(invalid(format!("block {i}: A, B and b must have the same number of rows")));
            }
            if blk.a.cols() != blk.objective.dim() {
                return Err(Error::DimensionMismatch {
                    context: "block A columns vs objective",
                    expected: blk.objective.dim(),
                    got: blk.a.cols(),
                });
            }
            if blk.b.cols() != y_dim {
                return Err(Error::DimensionMismatch {
                    context: "block B columns vs y",
                    expected: y_dim,
                    got: blk.b.cols(),
                });
            }
            if !(blk.gamma > 0.0) || !blk.gamma.is_finite() {
                return Err(invalid(format!("block {i}: penalty must be positive, got {}", blk.gamma)));
            }
        }
        if let Coupling::ZeroSum(groups) = &coupling {
            let mut seen = vec![false; y_dim];
            for g in groups {
                if g.is_empty() {
                    return Err(invalid("empty zero-sum group"));
                }
                for &r in g {
                    if r >= y_dim || seen[r] {
                        return Err(invalid(format!("zero-sum groups invalid at index {r}")));
                    }
                    seen[r] = true;
                }
            }
        }

        let blocks_csr: Vec<Block> = blocks
            .into_iter()
            .map(|mut b| {
                b.a = b.a.to_csr();
                b.b = b.b.to_csr();
                b
            })
            .collect();
        let a_t = blocks_csr.iter().map(|b| b.a.transpose_view().to_csr()).collect();
        let b_t = blocks_csr.iter().map(|b| b.b.transpose_view().to_csr()).collect();
        let a_norm_sq = blocks_csr
            .iter()
            .map(|b| linalg::sparse_spectral_norm_sq(&b.a, LIPSCHITZ_TOL))
            .collect::<Result<Vec<_>>>()?;

        // H = Σ γᵢ BᵢᵀBᵢ, accumulated row by row
        let mut h: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for blk in &blocks_csr {
            for row in blk.b.outer_iterator() {
                for (c1, &v1) in row.iter() {
                    for (c2, &v2) in row.iter() {
                        *h.entry((c1, c2)).or_insert(0.0) += blk.gamma * v1 * v2;
                    }
                }
            }
        }
        let diagonal = h.iter().all(|(&(r, c), &v)| r == c || v == 0.0);
        let solver = if diagonal {
            let mut d = Array1::zeros(y_dim);
            for (&(r, c), &v) in &h {
                if r == c {
                    d[r] = v;
                }
            }
            if let Some(r) = d.iter().position(|&v| !(v > 0.0)) {
                return Err(invalid(format!("y coordinate {r} is not determined by any constraint")));
            }
            YSolver::Diagonal(d)
        } else {
            if !matches!(coupling, Coupling::Free) {
                return Err(invalid("zero-sum coupling requires a diagonal Σγᵢ BᵢᵀBᵢ"));
            }
            if y_dim > DENSE_Y_LIMIT {
                return Err(invalid(format!("non-diagonal y-system of size {y_dim} is too large")));
            }
            let mut m = DMatrix::zeros(y_dim, y_dim);
            for (&(r, c), &v) in &h {
                m[(r, c)] = v;
            }
            if m.clone().cholesky().is_none() {
                return Err(invalid("Σγᵢ BᵢᵀBᵢ is singular; y-step is not unique"));
            }
            YSolver::Dense(m)
        };

        Ok(BlockProblem {
            blocks: blocks_csr,
            a_t,
            b_t,
            a_norm_sq,
            y_dim,
            coupling,
            solver,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// `‖Aᵢ‖²` per block.
    pub fn a_norm_sq(&self) -> &[f64] {
        &self.a_norm_sq
    }

    pub fn lipschitz(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.objective.lipschitz()).collect()
    }

    /// `γᵢ‖Aᵢ‖²` per block, the penalty part of the step bound.
    pub fn penalty_curvature(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .zip(&self.a_norm_sq)
            .map(|(b, n)| b.gamma * n)
            .collect()
    }

    /// `Aᵢxᵢ + Bᵢy − bᵢ`.
    pub fn residual(&self, i: usize, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Array1<f64> {
        let blk = &self.blocks[i];
        let mut r = sparse_mul(&blk.a, x);
        r += &sparse_mul(&blk.b, y);
        r -= &blk.rhs;
        r
    }

    /// `Σᵢ Φᵢ(xᵢ)`; `g` vanishes on its domain.
    pub fn objective_value(&self, x: &[Array1<f64>]) -> f64 {
        self.blocks
            .iter()
            .zip(x)
            .map(|(b, xi)| b.objective.value(xi.view()))
            .sum()
    }

    /// `‖v‖²_H` with `H = Σγᵢ BᵢᵀBᵢ`.
    pub fn h_norm_sq(&self, v: ArrayView1<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let bv = sparse_mul(&b.b, v);
                b.gamma * bv.dot(&bv)
            })
            .sum()
    }

    /// `‖v‖²_{Qᵢ}` with `Qᵢ = I − γᵢcᵢAᵢᵀAᵢ`.
    pub fn q_norm_sq(&self, i: usize, c: f64, v: ArrayView1<f64>) -> f64 {
        let av = sparse_mul(&self.blocks[i].a, v);
        v.dot(&v) - self.blocks[i].gamma * c * av.dot(&av)
    }

    /// Exact minimizer of `g(y) + Σ γᵢ/2 ‖Aᵢxᵢ + Bᵢy − bᵢ + λᵢ/γᵢ‖²`.
    pub fn y_argmin(&self, x: &[Array1<f64>], lambda: &[Array1<f64>]) -> Array1<f64> {
        let mut r = Array1::<f64>::zeros(self.y_dim);
        for (i, blk) in self.blocks.iter().enumerate() {
            let mut v = sparse_mul(&blk.a, x[i].view());
            v -= &blk.rhs;
            v *= -blk.gamma;
            v -= &lambda[i];
            r += &sparse_mul(&self.b_t[i], v.view());
        }
        match &self.solver {
            YSolver::Diagonal(h) => {
                let mut y = &r / h;
                if let Coupling::ZeroSum(groups) = &self.coupling {
                    for g in groups {
                        let num: f64 = g.iter().map(|&k| y[k]).sum();
                        let den: f64 = g.iter().map(|&k| 1.0 / h[k]).sum();
                        let mu = num / den;
                        for &k in g {
                            y[k] -= mu / h[k];
                        }
                    }
                }
                y
            }
            YSolver::Dense(m) => {
                let chol = m.clone().cholesky().expect("checked at construction");
                let sol = chol.solve(&DVector::from_iterator(self.y_dim, r.iter().copied()));
                Array1::from_iter(sol.iter().copied())
            }
        }
    }

    /// Norm of the y-optimality residual `Σ Bᵢᵀ(λᵢ + γᵢ rᵢ)` after removing
    /// its component in the normal cone of dom g.
    pub fn y_optimality_residual(&self, x: &[Array1<f64>], y: ArrayView1<f64>, lambda: &[Array1<f64>]) -> f64 {
        let mut s = Array1::<f64>::zeros(self.y_dim);
        for (i, blk) in self.blocks.iter().enumerate() {
            let mut u = self.residual(i, x[i].view(), y);
            u *= blk.gamma;
            u += &lambda[i];
            s += &sparse_mul(&self.b_t[i], u.view());
        }
        let p = self.coupling.project(s.view());
        linalg::norm(p.view())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// `cᵢ = safety/(Lᵢ + γᵢ‖Aᵢ‖²)` with `safety ∈ (0, 1]`.
    Constant { safety: f64 },
    /// `1/cᵢᵏ = 1/cᵢ + √k`, `cᵢ = 1/(Lᵢ + γᵢ‖Aᵢ‖² + 1)`.
    Diminishing,
    /// `1/cᵢᵏ = 1/cᵢ + √t` for a fixed horizon `t`.
    HorizonConstant { horizon: usize },
    /// Descent-lemma backtracking on a running Lipschitz estimate.
    AdaptiveBacktrack {
        upsilon: f64,
        #[serde(default)]
        optimistic: bool,
    },
}

impl StepRule {
    pub const DEFAULT_SAFETY: f64 = 0.999;

    pub fn constant() -> Self {
        StepRule::Constant {
            safety: Self::DEFAULT_SAFETY,
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, StepRule::Diminishing | StepRule::HorizonConstant { .. })
    }
}

/// Per-node stepsizes. `penalty_curvature[i]` is the coupling part of the
/// step bound: `γᵢ‖Aᵢ‖²` in general, `γᵢdᵢ` for DPGA, `γᵢ‖ωᵢ‖²` for DPGA-W.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    rule: StepRule,
    lipschitz: Vec<f64>,
    penalty_curvature: Vec<f64>,
    base: Vec<f64>,
}

impl StepPlan {
    pub fn new(rule: StepRule, lipschitz: Vec<f64>, penalty_curvature: Vec<f64>) -> Result<Self> {
        if lipschitz.len() != penalty_curvature.len() {
            return Err(Error::DimensionMismatch {
                context: "step plan",
                expected: lipschitz.len(),
                got: penalty_curvature.len(),
            });
        }
        let base = match rule {
            StepRule::Constant { safety } => {
                if !(safety > 0.0 && safety <= 1.0) {
                    return Err(invalid(format!("step safety factor must lie in (0, 1], got {safety}")));
                }
                lipschitz
                    .iter()
                    .zip(&penalty_curvature)
                    .map(|(l, p)| safety / (l + p))
                    .collect()
            }
            StepRule::Diminishing | StepRule::HorizonConstant { .. } => lipschitz
                .iter()
                .zip(&penalty_curvature)
                .map(|(l, p)| 1.0 / (l + p + 1.0))
                .collect(),
            StepRule::AdaptiveBacktrack { upsilon, .. } => {
                if !(upsilon > 1.0) || !upsilon.is_finite() {
                    return Err(invalid(format!("backtracking factor must exceed 1, got {upsilon}")));
                }
                lipschitz
                    .iter()
                    .zip(&penalty_curvature)
                    .map(|(l, p)| 1.0 / (l + p))
                    .collect()
            }
        };
        if let StepRule::HorizonConstant { horizon } = rule {
            if horizon == 0 {
                return Err(invalid("horizon must be at least 1"));
            }
        }
        let plan = StepPlan {
            rule,
            lipschitz,
            penalty_curvature,
            base,
        };
        if plan.base.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("stepsizes must be finite and positive (is every Lᵢ + γᵢ‖Aᵢ‖² > 0?)"));
        }
        Ok(plan)
    }

    /// Constant plan with explicit stepsizes, each checked against `1/(Lᵢ + γᵢ‖Aᵢ‖²)`.
    pub fn with_constant_steps(steps: Vec<f64>, lipschitz: Vec<f64>, penalty_curvature: Vec<f64>) -> Result<Self> {
        let mut plan = StepPlan::new(StepRule::Constant { safety: 1.0 }, lipschitz, penalty_curvature)?;
        if steps.len() != plan.base.len() {
            return Err(Error::DimensionMismatch {
                context: "explicit stepsizes",
                expected: plan.base.len(),
                got: steps.len(),
            });
        }
        for (i, (&c, &cmax)) in steps.iter().zip(&plan.base).enumerate() {
            if !(c > 0.0) || c > cmax {
                return Err(invalid(format!("stepsize {c} at node {i} exceeds the bound {cmax}")));
            }
        }
        plan.base = steps;
        Ok(plan)
    }

    pub fn for_problem(prob: &BlockProblem, rule: StepRule) -> Result<Self> {
        StepPlan::new(rule, prob.lipschitz(), prob.penalty_curvature())
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    pub fn penalty_curvature(&self) -> &[f64] {
        &self.penalty_curvature
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Stepsize `cᵢᵏ` used to produce iterate `k+1` (k counts from 0).
    /// For adaptive plans this is the initial step only.
    pub fn step(&self, i: usize, k: usize) -> f64 {
        match self.rule {
            StepRule::Constant { .. } | StepRule::AdaptiveBacktrack { .. } => self.base[i],
            StepRule::Diminishing => 1.0 / (1.0 / self.base[i] + (k as f64).sqrt()),
            StepRule::HorizonConstant { horizon } => 1.0 / (1.0 / self.base[i] + (horizon as f64).sqrt()),
        }
    }

    /// Starting Lipschitz estimate for adaptive plans.
    pub fn initial_lipschitz(&self, i: usize) -> f64 {
        match self.rule {
            StepRule::AdaptiveBacktrack { upsilon, optimistic: true } => self.lipschitz[i] / upsilon.powi(4),
            _ => self.lipschitz[i],
        }
    }

    /// Rejects plans whose stepsizes are not valid under gradient noise.
    pub fn check_noise(&self, sigma: f64) -> Result<()> {
        if sigma > 0.0 && !self.rule.is_stochastic() {
            return Err(invalid(
                "noisy gradients need diminishing or horizon-constant stepsizes",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EngineState {
    pub x: Vec<Array1<f64>>,
    pub y: Array1<f64>,
    pub lambda: Vec<Array1<f64>>,
    pub k: usize,
    pub ergodic_x: Vec<Array1<f64>>,
    pub ergodic_y: Array1<f64>,
    pub lipschitz_running: Vec<f64>,
}

impl EngineState {
    /// Starts from `(x⁰, y⁰)` with `λ⁰ = 0`. `y⁰` only enters the first
    /// x-step, so it need not lie in dom g.
    pub fn new(prob: &BlockProblem, plan: &StepPlan, x0: Vec<Array1<f64>>, y0: Array1<f64>) -> Result<Self> {
        if x0.len() != prob.block_count() || plan.len() != prob.block_count() {
            return Err(Error::DimensionMismatch {
                context: "initial blocks",
                expected: prob.block_count(),
                got: x0.len(),
            });
        }
        for (xi, blk) in x0.iter().zip(prob.blocks()) {
            if xi.len() != blk.objective.dim() {
                return Err(Error::DimensionMismatch {
                    context: "initial block iterate",
                    expected: blk.objective.dim(),
                    got: xi.len(),
                });
            }
        }
        if y0.len() != prob.y_dim() {
            return Err(Error::DimensionMismatch {
                context: "initial y",
                expected: prob.y_dim(),
                got: y0.len(),
            });
        }
        let lambda = prob.blocks().iter().map(|b| Array1::zeros(b.rhs.len())).collect();
        let ergodic_x = x0.iter().map(|v| Array1::zeros(v.len())).collect();
        let lipschitz_running = (0..plan.len()).map(|i| plan.initial_lipschitz(i)).collect();
        Ok(EngineState {
            ergodic_y: Array1::zeros(y0.len()),
            x: x0,
            y: y0,
            lambda,
            k: 0,
            ergodic_x,
            lipschitz_running,
        })
    }

    pub fn average_x(&self) -> Vec<Array1<f64>> {
        let t = self.k.max(1) as f64;
        self.ergodic_x.iter().map(|s| s / t).collect()
    }

    pub fn average_y(&self) -> Array1<f64> {
        &self.ergodic_y / self.k.max(1) as f64
    }
}

/// One deterministic PG-ADMM iteration.
pub fn pgadmm_step(state: &mut EngineState, prob: &BlockProblem, plan: &StepPlan) -> Result<()> {
    step_impl(state, prob, plan, None)
}

/// One SPG-ADMM iteration with per-block noisy gradient oracles.
pub fn spgadmm_step(state: &mut EngineState, prob: &BlockProblem, plan: &StepPlan, oracles: &mut [NoisyOracle]) -> Result<()> {
    if oracles.len() != prob.block_count() {
        return Err(Error::DimensionMismatch {
            context: "oracles",
            expected: prob.block_count(),
            got: oracles.len(),
        });
    }
    for o in oracles.iter() {
        plan.check_noise(o.sigma())?;
    }
    step_impl(state, prob, plan, Some(oracles))
}

fn step_impl(
    state: &mut EngineState,
    prob: &BlockProblem,
    plan: &StepPlan,
    mut oracles: Option<&mut [NoisyOracle]>,
) -> Result<()> {
    let k = state.k;
    let mut x_new = Vec::with_capacity(prob.block_count());
    for (i, blk) in prob.blocks().iter().enumerate() {
        let xi = state.x[i].view();
        let mut u = prob.residual(i, xi, state.y.view());
        u *= blk.gamma;
        u += &state.lambda[i];
        let coupling_grad = sparse_mul(&prob.a_t[i], u.view());
        let next = match plan.rule() {
            StepRule::AdaptiveBacktrack { upsilon, .. } => {
                let f_x = blk.objective.smooth_value(xi);
                let grad = blk.objective.smooth_grad(xi);
                let out = adaptive_backtrack(
                    blk.objective.as_ref(),
                    xi,
                    f_x,
                    grad.view(),
                    coupling_grad.view(),
                    state.lipschitz_running[i],
                    plan.penalty_curvature()[i],
                    upsilon,
                    k == 0,
                )?;
                state.lipschitz_running[i] = out.lipschitz;
                out.x
            }
            _ => {
                let mut grad = blk.objective.smooth_grad(xi);
                if let Some(os) = oracles.as_deref_mut() {
                    grad = os[i].perturb(grad);
                }
                grad += &coupling_grad;
                let c = plan.step(i, k);
                let v = &xi - &(grad * c);
                blk.objective.prox(v.view(), c)?
            }
        };
        x_new.push(next);
    }
    let y_new = prob.y_argmin(&x_new, &state.lambda);
    for (i, blk) in prob.blocks().iter().enumerate() {
        let mut r = prob.residual(i, x_new[i].view(), y_new.view());
        r *= blk.gamma;
        state.lambda[i] += &r;
    }
    for (s, xi) in state.ergodic_x.iter_mut().zip(&x_new) {
        *s += xi;
    }
    state.ergodic_y += &y_new;
    state.x = x_new;
    state.y = y_new;
    state.k += 1;
    Ok(())
}

/// Primal-dual form of PG-ADMM on `min Φ(x) + g(y) s.t. Ax − y = 0`:
/// `x' = prox_{cξ}(x − c[∇f(x) + Aᵀ(2λ − λ⁻)])`, `λ' = prox_{γg*}(λ + γAx')`.
pub fn primal_dual_step(
    x: ArrayView1<f64>,
    lambda: ArrayView1<f64>,
    lambda_prev: ArrayView1<f64>,
    prob: &BlockProblem,
    c: f64,
    gamma: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if prob.block_count() != 1 {
        return Err(invalid("primal-dual form needs a single block"));
    }
    let blk = &prob.blocks()[0];
    let m = blk.rhs.len();
    let minus_identity = blk.b.rows() == m
        && blk.b.cols() == m
        && blk.b.nnz() == m
        && blk.b.iter().all(|(&v, (r, col))| r == col && v == -1.0);
    if !minus_identity || blk.rhs.iter().any(|&v| v != 0.0) {
        return Err(invalid("primal-dual form needs B = −I and b = 0"));
    }
    let mut dual = lambda.to_owned() * 2.0;
    dual -= &lambda_prev;
    let mut grad = blk.objective.smooth_grad(x);
    grad += &sparse_mul(&prob.a_t[0], dual.view());
    let v = &x - &(grad * c);
    let x_new = blk.objective.prox(v.view(), c)?;
    let mut w = sparse_mul(&blk.a, x_new.view());
    w *= gamma;
    w += &lambda;
    let lambda_new = prob.coupling().conjugate_prox(w.view(), gamma);
    Ok((x_new, lambda_new))
}

/// A primal-dual reference point `(x*, y*, λ*)` for bound calculators.
#[derive(Clone, Debug)]
pub struct SaddlePoint {
    pub x: Vec<Array1<f64>>,
    pub y: Array1<f64>,
    pub lambda: Vec<Array1<f64>>,
}

/// Right-hand side of the ergodic key inequality evaluated at multiplier
/// `lambda`, horizon `t`, and (for stochastic plans) noise `sigma` and
/// diameter `d_bar`.
#[allow(clippy::too_many_arguments)]
pub fn key_inequality_rhs(
    prob: &BlockProblem,
    plan: &StepPlan,
    x0: &[Array1<f64>],
    y0: ArrayView1<f64>,
    lambda0: &[Array1<f64>],
    lambda: &[Array1<f64>],
    x_star: &[Array1<f64>],
    y_star: ArrayView1<f64>,
    t: usize,
    sigma: f64,
    d_bar: f64,
) -> f64 {
    let t = t as f64;
    let mut sum = 0.0;
    for (i, blk) in prob.blocks().iter().enumerate() {
        let c = plan.base()[i];
        let dl = &lambda[i] - &lambda0[i];
        let dx = &x_star[i] - &x0[i];
        sum += dl.dot(&dl) / blk.gamma + prob.q_norm_sq(i, c, dx.view()) / c;
    }
    let dy = &y_star - &y0;
    sum += prob.h_norm_sq(dy.view());
    let mut rhs = sum / (2.0 * t);
    if plan.rule().is_stochastic() {
        rhs += prob.block_count() as f64 * (d_bar * d_bar + 2.0 * sigma * sigma) / (2.0 * t.sqrt());
    }
    rhs
}

/// The constant `C(c₁,…,c_N)` bounding both `|F(ūᵗ) − F*|` and
/// `Σ‖λᵢ*‖‖Aᵢx̄ᵢ + Bᵢȳ − bᵢ‖` by `C/t`.
pub fn ergodic_constant(
    prob: &BlockProblem,
    plan: &StepPlan,
    x0: &[Array1<f64>],
    y0: ArrayView1<f64>,
    lambda0: &[Array1<f64>],
    star: &SaddlePoint,
) -> f64 {
    let mut c_total = 0.0;
    for (i, blk) in prob.blocks().iter().enumerate() {
        let c = plan.base()[i];
        let dx = &star.x[i] - &x0[i];
        c_total += (4.0 * star.lambda[i].dot(&star.lambda[i]) + lambda0[i].dot(&lambda0[i])) / blk.gamma
            + prob.q_norm_sq(i, c, dx.view()) / (2.0 * c);
    }
    let dy = &star.y - &y0;
    c_total + 0.5 * prob.h_norm_sq(dy.view())
}

/// Lyapunov quantity `aᵏ = Σᵢ[(1/cᵢ)‖xᵢᵏ − xᵢ*‖²_{Qᵢ} + γᵢ‖Bᵢ(yᵏ − y*)‖² + ‖λᵢᵏ − λᵢ*‖²/γᵢ]`.
pub fn lyapunov(prob: &BlockProblem, plan: &StepPlan, state: &EngineState, star: &SaddlePoint) -> f64 {
    let dy = &state.y - &star.y;
    let mut a = prob.h_norm_sq(dy.view());
    for (i, blk) in prob.blocks().iter().enumerate() {
        let c = plan.base()[i];
        let dx = &state.x[i] - &star.x[i];
        let dl = &state.lambda[i] - &star.lambda[i];
        a += prob.q_norm_sq(i, c, dx.view()) / c + dl.dot(&dl) / blk.gamma;
    }
    a
}
