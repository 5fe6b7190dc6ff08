//! DPGA-W and SDPGA-W for networks described by a communication matrix `W`.
//!
//! Each round has two exchanges: phase 0 broadcasts `pᵢ + sᵢ` and performs
//! the prox-gradient step, phase 1 broadcasts the new `xᵢ` and refreshes
//! `sᵢ` and `pᵢ`.

use ndarray::{Array1, Array2, ArrayView1};
use sprs::TriMat;

use crate::dpga::{check_lengths, step_size, DpgaConfig};
use crate::engine::{Block, BlockProblem, Coupling, StepPlan, StepRule};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::objective::{NoisyOracle, SharedObjective};
use crate::simnet::{check_inbox, Message, NodeProgram};
use crate::topology::{Graph, ZERO_EIG_REL_TOL};

#[derive(Clone, Debug)]
pub struct CommunicationMatrix {
    w: Array2<f64>,
    /// Sorted `𝒩ᵢ ∪ {i}`.
    closed: Vec<Vec<usize>>,
    omega: Vec<Vec<f64>>,
    omega_norm_sq: Vec<f64>,
    sigma_min: f64,
}

impl CommunicationMatrix {
    /// Validates `W` against the graph: zero off the closed neighborhoods,
    /// negative on edges, zero row sums, symmetric, PSD with rank `N − 1`.
    pub fn new(graph: &Graph, w: Array2<f64>) -> Result<Self> {
        let n = graph.node_count();
        if w.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "communication matrix",
                expected: n,
                got: w.nrows(),
            });
        }
        let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let tol = 1e-12 * scale;
        for i in 0..n {
            for j in 0..n {
                let v = w[[i, j]];
                if !v.is_finite() {
                    return Err(invalid("communication matrix has a non-finite entry"));
                }
                if (v - w[[j, i]]).abs() > tol {
                    return Err(invalid(format!("communication matrix is not symmetric at ({i},{j})")));
                }
                if i != j {
                    if graph.has_edge(i, j) && !(v < 0.0) {
                        return Err(invalid(format!("W[{i},{j}] must be negative on an edge, got {v}")));
                    }
                    if !graph.has_edge(i, j) && v != 0.0 {
                        return Err(invalid(format!("W[{i},{j}] must vanish off the graph, got {v}")));
                    }
                }
            }
            let row_sum: f64 = w.row(i).sum();
            if row_sum.abs() > tol * n as f64 {
                return Err(invalid(format!("row {i} of W sums to {row_sum:e}, not 0")));
            }
        }
        let eig = linalg::symmetric_eigenvalues(w.view())?;
        let top = *eig.last().expect("nonempty");
        let zero_tol = ZERO_EIG_REL_TOL * top.max(f64::MIN_POSITIVE);
        if eig[0] < -zero_tol {
            return Err(invalid(format!("communication matrix is not PSD (eigenvalue {:e})", eig[0])));
        }
        let zeros = eig.iter().filter(|v| v.abs() <= zero_tol).count();
        if zeros != 1 {
            return Err(invalid(format!("communication matrix must have rank N−1, found {zeros} zero eigenvalues")));
        }
        let closed: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut c = graph.neighbors(i).to_vec();
                c.push(i);
                c.sort_unstable();
                c
            })
            .collect();
        let omega: Vec<Vec<f64>> = (0..n)
            .map(|i| closed[i].iter().map(|&j| w[[j, i]]).collect())
            .collect();
        let omega_norm_sq = omega.iter().map(|o| o.iter().map(|v| v * v).sum()).collect();
        Ok(CommunicationMatrix {
            w,
            closed,
            omega,
            omega_norm_sq,
            sigma_min: eig[1],
        })
    }

    /// `W = Ω`, the graph Laplacian.
    pub fn laplacian(graph: &Graph) -> Result<Self> {
        CommunicationMatrix::new(graph, graph.laplacian())
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn node_count(&self) -> usize {
        self.closed.len()
    }

    /// Sorted closed neighborhood `𝒩ᵢ ∪ {i}`.
    pub fn closed_neighborhood(&self, i: usize) -> &[usize] {
        &self.closed[i]
    }

    /// Nonzeros of column `i`, ordered like the closed neighborhood.
    pub fn omega(&self, i: usize) -> &[f64] {
        &self.omega[i]
    }

    pub fn omega_norm_sq(&self, i: usize) -> f64 {
        self.omega_norm_sq[i]
    }

    /// Smallest positive eigenvalue of `W`.
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// `‖(W ⊗ Iₙ)x‖` for a stacked iterate.
    pub fn apply_norm(&self, x: &[Array1<f64>]) -> f64 {
        kron_apply_norm(&self.w, x)
    }
}

/// `‖(M ⊗ Iₙ)x‖` for an `N×N` matrix `M` and stacked blocks `x`.
pub fn kron_apply_norm(m: &Array2<f64>, x: &[Array1<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..m.nrows() {
        let mut acc = Array1::<f64>::zeros(x[i].len());
        for (j, xj) in x.iter().enumerate() {
            let v = m[[i, j]];
            if v != 0.0 {
                acc.scaled_add(v, xj);
            }
        }
        total += acc.dot(&acc);
    }
    total.sqrt()
}

/// `Σ_{j∈𝒩ᵢ∪{i}} 1/γⱼ` per node, the dual-recursion denominator.
pub fn tau_closed(w: &CommunicationMatrix, gammas: &[f64]) -> Vec<f64> {
    (0..w.node_count())
        .map(|i| w.closed_neighborhood(i).iter().map(|&j| 1.0 / gammas[j]).sum())
        .collect()
}

/// `Σ_{j∈𝒩ᵢ} 1/γⱼ` per node (open neighborhood).
pub fn tau_open(graph: &Graph, gammas: &[f64]) -> Vec<f64> {
    (0..graph.node_count())
        .map(|i| graph.neighbors(i).iter().map(|&j| 1.0 / gammas[j]).sum())
        .collect()
}

#[derive(Clone, Debug)]
pub struct DpgaWNode {
    id: usize,
    neighbors: Vec<usize>,
    /// `Wᵢⱼ` for `j` in the closed neighborhood, sorted.
    w_row: Vec<f64>,
    own_slot: usize,
    objective: SharedObjective,
    rule: StepRule,
    base_step: f64,
    pub x: Array1<f64>,
    pub s: Array1<f64>,
    pub p: Array1<f64>,
    pub c: f64,
    pub gamma: f64,
    pub tau_inv: f64,
    oracle: NoisyOracle,
    iterations: usize,
}

/// Builds DPGA-W (σ = 0) or SDPGA-W nodes. `p0` defaults to zero.
pub fn dpgaw_init(
    graph: &Graph,
    w: &CommunicationMatrix,
    objectives: &[SharedObjective],
    gammas: &[f64],
    x0: &[Array1<f64>],
    p0: Option<&[Array1<f64>]>,
    cfg: DpgaConfig,
) -> Result<Vec<DpgaWNode>> {
    let n = graph.node_count();
    check_lengths(n, objectives.len(), x0.len())?;
    if w.node_count() != n {
        return Err(Error::DimensionMismatch {
            context: "communication matrix",
            expected: n,
            got: w.node_count(),
        });
    }
    if gammas.len() != n || gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(invalid("need one positive, finite penalty per node"));
    }
    if matches!(cfg.rule, StepRule::AdaptiveBacktrack { .. }) {
        return Err(invalid("DPGA-W supports constant, diminishing and horizon-constant steps"));
    }
    let lips: Vec<f64> = objectives.iter().map(|o| o.lipschitz()).collect();
    let curv: Vec<f64> = (0..n).map(|i| gammas[i] * w.omega_norm_sq(i)).collect();
    let plan = StepPlan::new(cfg.rule, lips, curv)?;
    plan.check_noise(cfg.sigma)?;
    let tau = tau_closed(w, gammas);
    (0..n)
        .map(|i| {
            let dim = objectives[i].dim();
            if x0[i].len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "initial iterate",
                    expected: dim,
                    got: x0[i].len(),
                });
            }
            let p = match p0 {
                Some(p0) => {
                    if p0.len() != n || p0[i].len() != dim {
                        return Err(invalid("initial multipliers must match the iterates"));
                    }
                    p0[i].clone()
                }
                None => Array1::zeros(dim),
            };
            let closed = w.closed_neighborhood(i);
            Ok(DpgaWNode {
                id: i,
                neighbors: graph.neighbors(i).to_vec(),
                w_row: closed.iter().map(|&j| w.matrix()[[i, j]]).collect(),
                own_slot: closed.iter().position(|&j| j == i).expect("closed neighborhood"),
                objective: objectives[i].clone(),
                rule: cfg.rule,
                base_step: plan.base()[i],
                x: x0[i].clone(),
                s: Array1::zeros(dim),
                p,
                c: plan.step(i, 0),
                gamma: gammas[i],
                tau_inv: 1.0 / tau[i],
                oracle: NoisyOracle::new(cfg.sigma, cfg.seed, i as u64)?,
                iterations: 0,
            })
        })
        .collect()
}

impl DpgaWNode {
    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    /// `Σ_{j∈𝒩ᵢ∪{i}} Wᵢⱼ vⱼ` with the own term taken from `own`.
    fn weighted_sum(&self, own: &Array1<f64>, inbox: &[Message]) -> Array1<f64> {
        let mut acc = own * self.w_row[self.own_slot];
        let others = self.w_row.iter().enumerate().filter(|(k, _)| *k != self.own_slot);
        for (m, (_, &wij)) in inbox.iter().zip(others) {
            acc.scaled_add(wij, &*m.payload);
        }
        acc
    }
}

impl NodeProgram for DpgaWNode {
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
            let c = step_size(self.rule, self.base_step, self.iterations);
            let mut g = self.oracle.perturb(self.objective.smooth_grad(self.x.view()));
            g += &coupling;
            let v = &self.x - &(g * c);
            self.x = self.objective.prox(v.view(), c)?;
            self.c = c;
            self.iterations += 1;
        } else {
            let x = self.x.clone();
            self.s = self.weighted_sum(&x, inbox) * self.tau_inv;
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
}

/// Layout of the explicit W-formulation: `y` stacks `yᵢ = [y_ij]_{j∈𝒩ᵢ∪{i}}`
/// node by node. Block `j` owns the constraints `Wᵢⱼxⱼ − y_ij = 0` for
/// `i ∈ 𝒩ⱼ ∪ {j}` with penalty `γⱼ`.
#[derive(Clone, Debug)]
pub struct WFormulation {
    pub problem: BlockProblem,
    /// Start of `y_ij` inside `y`, indexed `[i][slot of j]`.
    pub y_offsets: Vec<Vec<usize>>,
    dim: usize,
}

pub fn w_formulation(w: &CommunicationMatrix, objectives: &[SharedObjective], gammas: &[f64]) -> Result<WFormulation> {
    let nn = w.node_count();
    if objectives.len() != nn || gammas.len() != nn {
        return Err(invalid("need one objective and one penalty per node"));
    }
    let n = objectives[0].dim();
    let mut y_offsets = Vec::with_capacity(nn);
    let mut next = 0;
    for i in 0..nn {
        let offs: Vec<usize> = (0..w.closed_neighborhood(i).len()).map(|k| next + k * n).collect();
        next += w.closed_neighborhood(i).len() * n;
        y_offsets.push(offs);
    }
    let y_dim = next;
    let mut blocks = Vec::with_capacity(nn);
    for j in 0..nn {
        if objectives[j].dim() != n {
            return Err(invalid("all objectives must share one dimension"));
        }
        let rows = w.closed_neighborhood(j);
        let mut a = TriMat::new((n * rows.len(), n));
        let mut b = TriMat::new((n * rows.len(), y_dim));
        for (slot, &i) in rows.iter().enumerate() {
            let pos = w.closed_neighborhood(i).iter().position(|&q| q == j).expect("symmetric pattern");
            let off = y_offsets[i][pos];
            for r in 0..n {
                a.add_triplet(slot * n + r, r, w.matrix()[[i, j]]);
                b.add_triplet(slot * n + r, off + r, -1.0);
            }
        }
        blocks.push(Block {
            a: a.to_csr(),
            b: b.to_csr(),
            rhs: Array1::zeros(n * rows.len()),
            objective: objectives[j].clone(),
            gamma: gammas[j],
        });
    }
    let groups: Vec<Vec<usize>> = (0..nn)
        .flat_map(|i| {
            let offs = y_offsets[i].clone();
            (0..n).map(move |r| offs.iter().map(|o| o + r).collect())
        })
        .collect();
    let problem = BlockProblem::new(blocks, y_dim, Coupling::ZeroSum(groups))?;
    Ok(WFormulation { problem, y_offsets, dim: n })
}

impl WFormulation {
    /// `y_ij⁰ = Wᵢⱼxⱼ⁰`.
    pub fn initial_y(&self, w: &CommunicationMatrix, x0: &[Array1<f64>]) -> Array1<f64> {
        let n = self.dim;
        let mut y = Array1::zeros(self.problem.y_dim());
        for (i, offs) in self.y_offsets.iter().enumerate() {
            for (&j, &off) in w.closed_neighborhood(i).iter().zip(offs) {
                y.slice_mut(ndarray::s![off..off + n]).assign(&(&x0[j] * w.matrix()[[i, j]]));
            }
        }
        y
    }

    /// `λ⁰` with `λ_ij⁰ = pᵢ⁰`, in block layout.
    pub fn initial_lambda(&self, w: &CommunicationMatrix, p0: &[Array1<f64>]) -> Vec<Array1<f64>> {
        let n = self.dim;
        (0..w.node_count())
            .map(|j| {
                let rows = w.closed_neighborhood(j);
                let mut l = Array1::zeros(rows.len() * n);
                for (slot, &i) in rows.iter().enumerate() {
                    l.slice_mut(ndarray::s![slot * n..(slot + 1) * n]).assign(&p0[i]);
                }
                l
            })
            .collect()
    }

    /// `λ_ij` for the constraint owned by block `j` at row `i`.
    pub fn multiplier(&self, w: &CommunicationMatrix, lambda: &[Array1<f64>], i: usize, j: usize) -> Option<Array1<f64>> {
        let n = self.dim;
        let slot = w.closed_neighborhood(j).iter().position(|&q| q == i)?;
        Some(lambda[j].slice(ndarray::s![slot * n..(slot + 1) * n]).to_owned())
    }
}
