//! Comparison methods: PG-EXTRA with a shared stepsize and mixing pair
//! `(W, W̃)`, and the distributed ADMM that takes exact prox steps on the
//! whole `Φᵢ` through an inner solver.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};

use crate::dpga::check_lengths;
use crate::dpga_w::CommunicationMatrix;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::objective::{CompositeObjective, SharedObjective};
use crate::simnet::{check_inbox, Message, NodeProgram};
use crate::topology::{Graph, MixingPair};

/// Inner-solver tolerance on the gradient-mapping norm.
pub const INNER_TOL: f64 = 1e-10;
pub const INNER_MAX_ITER: usize = 200_000;

/// Safety factor on the PG-EXTRA step bound `2λ_min(W̃)/L_max`.
pub const PG_EXTRA_SAFETY: f64 = 0.99;

/// `c = 0.99·2λ_min(W̃)/L_max`. The maximum over nodes stands in for the
/// max-consensus the method needs.
pub fn pg_extra_default_step(mixing: &MixingPair, objectives: &[SharedObjective]) -> Result<f64> {
    let l_max = objectives.iter().map(|o| o.lipschitz()).fold(0.0, f64::max);
    if !(l_max > 0.0) {
        return Err(invalid("PG-EXTRA stepsize needs a positive L_max"));
    }
    Ok(PG_EXTRA_SAFETY * 2.0 * mixing.lambda_min_w_tilde / l_max)
}

#[derive(Clone, Debug)]
pub struct PgExtraNode {
    id: usize,
    neighbors: Vec<usize>,
    w_row: Vec<f64>,
    w_tilde_row: Vec<f64>,
    w_own: f64,
    w_tilde_own: f64,
    objective: SharedObjective,
    c: f64,
    /// `x^{k+1}`.
    pub x_curr: Array1<f64>,
    /// `x^k`.
    pub x_prev: Array1<f64>,
    /// `x^{k+1/2}`, overwritten in place while `x^{k+3/2}` is assembled.
    pub x_half: Array1<f64>,
    /// `∇fᵢ(x^k)`.
    pub grad_prev: Array1<f64>,
}

/// Builds PG-EXTRA nodes. Step 0 (`x^{1/2} = Σ Wᵢⱼxⱼ⁰ − c∇fᵢ(xᵢ⁰)`) runs in
/// the simulator's setup exchange of `x⁰`.
pub fn pg_extra_init(
    graph: &Graph,
    mixing: &MixingPair,
    objectives: &[SharedObjective],
    x0: &[Array1<f64>],
    c: f64,
) -> Result<Vec<PgExtraNode>> {
    let n = graph.node_count();
    check_lengths(n, objectives.len(), x0.len())?;
    if mixing.w.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "mixing matrix",
            expected: n,
            got: mixing.w.nrows(),
        });
    }
    let l_max = objectives.iter().map(|o| o.lipschitz()).fold(0.0, f64::max);
    let bound = 2.0 * mixing.lambda_min_w_tilde / l_max;
    if !(c > 0.0) || !(c < bound) {
        return Err(invalid(format!("PG-EXTRA stepsize {c} outside (0, {bound})")));
    }
    Ok((0..n)
        .map(|i| {
            let nb = graph.neighbors(i).to_vec();
            PgExtraNode {
                id: i,
                w_row: nb.iter().map(|&j| mixing.w[[i, j]]).collect(),
                w_tilde_row: nb.iter().map(|&j| mixing.w_tilde[[i, j]]).collect(),
                w_own: mixing.w[[i, i]],
                w_tilde_own: mixing.w_tilde[[i, i]],
                neighbors: nb,
                objective: objectives[i].clone(),
                c,
                x_curr: x0[i].clone(),
                x_prev: x0[i].clone(),
                x_half: Array1::zeros(x0[i].len()),
                grad_prev: Array1::zeros(x0[i].len()),
            }
        })
        .collect())
}

fn mix(own_weight: f64, own: &Array1<f64>, weights: &[f64], inbox: &[Message]) -> Array1<f64> {
    let mut acc = own * own_weight;
    for (m, &w) in inbox.iter().zip(weights) {
        acc.scaled_add(w, &*m.payload);
    }
    acc
}

impl PgExtraNode {
    pub fn step(&self) -> f64 {
        self.c
    }
}

impl NodeProgram for PgExtraNode {
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
        2
    }

    fn emit(&mut self, _round: usize, phase: usize) -> Result<Array1<f64>> {
        Ok(if phase == 0 { self.x_curr.clone() } else { self.x_prev.clone() })
    }

    fn absorb(&mut self, round: usize, phase: usize, inbox: &[Message]) -> Result<()> {
        check_inbox(self.id, &self.neighbors, round, phase, self.x_curr.len(), inbox)?;
        if round == 0 {
            let g = self.objective.smooth_grad(self.x_curr.view());
            let mut half = mix(self.w_own, &self.x_curr, &self.w_row, inbox);
            half.scaled_add(-self.c, &g);
            self.x_prev = self.x_curr.clone();
            self.x_curr = self.objective.prox(half.view(), self.c)?;
            self.x_half = half;
            self.grad_prev = g;
            return Ok(());
        }
        if phase == 0 {
            let g = self.objective.smooth_grad(self.x_curr.view());
            self.x_half += &mix(self.w_own, &self.x_curr, &self.w_row, inbox);
            let dg = &g - &self.grad_prev;
            self.x_half.scaled_add(-self.c, &dg);
            self.grad_prev = g;
        } else {
            let tilde = mix(self.w_tilde_own, &self.x_prev, &self.w_tilde_row, inbox);
            self.x_half -= &tilde;
            self.x_prev = self.x_curr.clone();
            self.x_curr = self.objective.prox(self.x_half.view(), self.c)?;
        }
        Ok(())
    }

    fn iterate(&self) -> ArrayView1<'_, f64> {
        self.x_curr.view()
    }

    fn stored_vectors(&self) -> usize {
        4
    }

    fn diagnostic(&self) -> Option<ArrayView1<'_, f64>> {
        Some(self.x_half.view())
    }
}

/// Iterates `x^k` (k = 0..=T) and half iterates `x^{k+1/2}` (k = 0..T) of a
/// PG-EXTRA run, retained only for residual diagnostics.
#[derive(Clone, Debug, Default)]
pub struct PgExtraTrace {
    pub x: Vec<Vec<Array1<f64>>>,
    pub x_half: Vec<Vec<Array1<f64>>>,
}

/// Runs PG-EXTRA centrally for `rounds` iterations and keeps the trace.
pub fn pg_extra_trace(
    graph: &Graph,
    mixing: &MixingPair,
    objectives: &[SharedObjective],
    x0: &[Array1<f64>],
    c: f64,
    rounds: usize,
) -> Result<PgExtraTrace> {
    let nodes = pg_extra_init(graph, mixing, objectives, x0, c)?;
    let programs: Vec<Box<dyn NodeProgram>> = nodes.into_iter().map(|n| Box::new(n) as Box<dyn NodeProgram>).collect();
    let mut net = crate::simnet::Network::new(graph.clone(), programs, false)?;
    let mut trace = PgExtraTrace {
        x: vec![x0.to_vec()],
        x_half: Vec::new(),
    };
    let half = |net: &crate::simnet::Network| -> Vec<Array1<f64>> {
        net.nodes()
            .iter()
            .map(|n| n.diagnostic().expect("PG-EXTRA half iterate").to_owned())
            .collect()
    };
    trace.x_half.push(half(&net));
    trace.x.push(net.iterates());
    for _ in 0..rounds {
        net.step()?;
        trace.x_half.push(half(&net));
        trace.x.push(net.iterates());
    }
    Ok(trace)
}

/// Running averages, for `t = 1..`, of the squared KKT residual
/// `‖(U⊗I)qᵏ + c(∇f(xᵏ) + gᵏ⁺¹)‖²_{W̃}` and the squared consensus residual
/// `‖(U⊗I)xᵏ‖²`, summed over `k = 0..=t` and divided by `t`. Here
/// `U = (W̃ − W)^{1/2}`, `qᵏ = Σ_{s≤k}(U⊗I)xˢ` and
/// `gᵏ⁺¹ = (x^{k+1/2} − xᵏ⁺¹)/c ∈ ∂ξ(xᵏ⁺¹)`.
pub fn pg_extra_kkt_residuals(
    trace: &PgExtraTrace,
    mixing: &MixingPair,
    objectives: &[SharedObjective],
    c: f64,
) -> Result<Vec<(f64, f64)>> {
    let u = linalg::psd_sqrt((&mixing.w_tilde - &mixing.w).view(), 1e-12)?;
    let steps = trace.x_half.len().min(trace.x.len().saturating_sub(1));
    let nn = objectives.len();
    let mut q: Vec<Array1<f64>> = trace.x.first().map(|x| x.iter().map(|v| Array1::zeros(v.len())).collect()).unwrap_or_default();
    let mut sum_kkt = 0.0;
    let mut sum_cons = 0.0;
    let mut out = Vec::new();
    for k in 0..steps {
        let xk = &trace.x[k];
        let ux = kron_apply(&u, xk);
        for (qi, uxi) in q.iter_mut().zip(&ux) {
            *qi += uxi;
        }
        let uq = kron_apply(&u, &q);
        let resid: Vec<Array1<f64>> = (0..nn)
            .map(|i| {
                let g = (&trace.x_half[k][i] - &trace.x[k + 1][i]) / c;
                let mut r = objectives[i].smooth_grad(xk[i].view());
                r += &g;
                r *= c;
                r += &uq[i];
                r
            })
            .collect();
        let wr = kron_apply(&mixing.w_tilde, &resid);
        sum_kkt += resid.iter().zip(&wr).map(|(a, b)| a.dot(b)).sum::<f64>();
        sum_cons += ux.iter().map(|v| v.dot(v)).sum::<f64>();
        if k >= 1 {
            out.push((sum_kkt / k as f64, sum_cons / k as f64));
        }
    }
    Ok(out)
}

/// `(M ⊗ Iₙ)x` for stacked blocks.
pub fn kron_apply(m: &Array2<f64>, x: &[Array1<f64>]) -> Vec<Array1<f64>> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = Array1::<f64>::zeros(x[i].len());
            for (j, xj) in x.iter().enumerate() {
                let v = m[[i, j]];
                if v != 0.0 {
                    acc.scaled_add(v, xj);
                }
            }
            acc
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct InnerSolve {
    pub x: Array1<f64>,
    pub iterations: usize,
    /// Gradient-mapping norm that triggered acceptance.
    pub residual: f64,
}

/// `prox_{t(ξ+f)}(v)` by accelerated proximal gradient on
/// `f(y) + ‖y − v‖²/(2t)` with exact `ξ`-prox steps. The smooth part is
/// `1/t`-strongly convex, so constant momentum `(1−√q)/(1+√q)` applies.
pub fn prox_composite(obj: &dyn CompositeObjective, v: ArrayView1<f64>, t: f64, tol: f64, max_iter: usize) -> Result<InnerSolve> {
    if !(t > 0.0) || !(tol > 0.0) {
        return Err(invalid("inner prox needs t > 0 and tol > 0"));
    }
    let l_h = obj.lipschitz() + 1.0 / t;
    let eta = 1.0 / l_h;
    let q = (1.0 / t) / l_h;
    let beta = (1.0 - q.sqrt()) / (1.0 + q.sqrt());
    let mut y = v.to_owned();
    let mut z = v.to_owned();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let mut grad = obj.smooth_grad(z.view());
        grad.scaled_add(1.0 / t, &(&z - &v));
        let trial = &z - &(grad * eta);
        let y_new = obj.prox(trial.view(), eta)?;
        residual = linalg::dist(z.view(), y_new.view()) / eta;
        if residual <= tol {
            return Ok(InnerSolve {
                x: y_new,
                iterations: it,
                residual,
            });
        }
        z = &y_new + &((&y_new - &y) * beta);
        y = y_new;
    }
    Err(Error::NonConvergence {
        what: "inner prox solver",
        iterations: max_iter,
        residual,
    })
}

/// `Φ` viewed as a purely nonsmooth function: `f ← 0`, `ξ ← ξ + f`, with the
/// prox evaluated by [`prox_composite`].
pub struct FullProx {
    inner: SharedObjective,
    tol: f64,
    max_iter: usize,
}

impl FullProx {
    pub fn new(inner: SharedObjective) -> Self {
        FullProx {
            inner,
            tol: INNER_TOL,
            max_iter: INNER_MAX_ITER,
        }
    }
}

impl fmt::Debug for FullProx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FullProx").field("inner", &self.inner).field("tol", &self.tol).finish()
    }
}

impl CompositeObjective for FullProx {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn smooth_value(&self, _x: ArrayView1<f64>) -> f64 {
        0.0
    }

    fn smooth_grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::zeros(x.len())
    }

    fn nonsmooth_value(&self, x: ArrayView1<f64>) -> f64 {
        self.inner.value(x)
    }

    fn prox(&self, v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        prox_composite(self.inner.as_ref(), v, t, self.tol, self.max_iter).map(|s| s.x)
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct AdmmNode {
    id: usize,
    neighbors: Vec<usize>,
    w_row: Vec<f64>,
    own_slot: usize,
    objective: SharedObjective,
    pub x: Array1<f64>,
    pub s: Array1<f64>,
    pub p: Array1<f64>,
    pub c: f64,
    pub gamma: f64,
    degree: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub last_inner_iterations: usize,
    pub total_inner_iterations: usize,
    pub worst_inner_residual: f64,
}

pub fn admm_init(
    graph: &Graph,
    w: &CommunicationMatrix,
    objectives: &[SharedObjective],
    gamma: f64,
    x0: &[Array1<f64>],
) -> Result<Vec<AdmmNode>> {
    let n = graph.node_count();
    check_lengths(n, objectives.len(), x0.len())?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid(format!("ADMM penalty must be positive, got {gamma}")));
    }
    Ok((0..n)
        .map(|i| {
            let closed = w.closed_neighborhood(i);
            AdmmNode {
                id: i,
                neighbors: graph.neighbors(i).to_vec(),
                w_row: closed.iter().map(|&j| w.matrix()[[i, j]]).collect(),
                own_slot: closed.iter().position(|&j| j == i).expect("closed neighborhood"),
                objective: objectives[i].clone(),
                x: x0[i].clone(),
                s: Array1::zeros(x0[i].len()),
                p: Array1::zeros(x0[i].len()),
                c: 1.0 / (gamma * w.omega_norm_sq(i)),
                gamma,
                degree: graph.degree(i),
                inner_tol: INNER_TOL,
                inner_max_iter: INNER_MAX_ITER,
                last_inner_iterations: 0,
                total_inner_iterations: 0,
                worst_inner_residual: 0.0,
            }
        })
        .collect())
}

impl AdmmNode {
    fn weighted_sum(&self, own: &Array1<f64>, inbox: &[Message]) -> Array1<f64> {
        let mut acc = own * self.w_row[self.own_slot];
        let others = self.w_row.iter().enumerate().filter(|(k, _)| *k != self.own_slot);
        for (m, (_, &wij)) in inbox.iter().zip(others) {
            acc.scaled_add(wij, &*m.payload);
        }
        acc
    }
}

impl NodeProgram for AdmmNode {
    fn id(&self) -> usize {
        self.id
    }

    fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    fn phases(&self) -> usize {
        2
    }

    fn emit(&mut self, _round: usize, phase: usize) -> Result<Array1<f64>> {
        Ok(if phase == 0 { &self.p + &self.s } else { self.x.clone() })
    }

    fn absorb(&mut self, round: usize, phase: usize, inbox: &[Message]) -> Result<()> {
        check_inbox(self.id, &self.neighbors, round, phase, self.x.len(), inbox)?;
        if phase == 0 {
            let own = &self.p + &self.s;
            let coupling = self.weighted_sum(&own, inbox);
            let v = &self.x - &(coupling * self.c);
            let sol = prox_composite(self.objective.as_ref(), v.view(), self.c, self.inner_tol, self.inner_max_iter)?;
            self.last_inner_iterations = sol.iterations;
            self.total_inner_iterations += sol.iterations;
            self.worst_inner_residual = self.worst_inner_residual.max(sol.residual);
            self.x = sol.x;
        } else {
            let x = self.x.clone();
            self.s = self.weighted_sum(&x, inbox) * (self.gamma / (self.degree as f64 + 1.0));
            self.p += &self.s;
        }
        Ok(())
    }

    fn iterate(&self) -> ArrayView1<'_, f64> {
        self.x.view()
    }

    fn stored_vectors(&self) -> usize {
        3
    }

    fn inner_iterations(&self) -> Option<usize> {
        Some(self.total_inner_iterations)
    }
}
