//! Ground truth: centralized solves for `x*` and `F*`, an independent
//! iterative prox for the sparse-group penalty, and subgradient bounds `κᵢ`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::objective::{prox_sparse_group_unchecked, CompositeObjective, GroupPartition, NodeObjective, LIPSCHITZ_TOL};

/// Default relative certificate for reference solves.
pub const REFERENCE_TOL: f64 = 1e-10;
pub const REFERENCE_MAX_ITER: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Prox-gradient mapping norm (shared penalty) or splitting fixed-point
    /// residual (node-specific penalties) at `x_star`.
    pub certificate: f64,
    pub kappas: Vec<f64>,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn x(&self) -> Array1<f64> {
        Array1::from(self.x_star.clone())
    }
}

/// `Σᵢ Φᵢ(x)`.
pub fn central_value(objectives: &[Arc<NodeObjective>], x: ArrayView1<f64>) -> f64 {
    objectives.iter().map(|o| o.value(x)).sum()
}

fn central_grad(objectives: &[Arc<NodeObjective>], x: ArrayView1<f64>) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    for o in objectives {
        g += &o.smooth_grad(x);
    }
    g
}

/// The common `(β₁, β₂, partition)` if every node uses the same penalty.
fn shared_penalty(objectives: &[Arc<NodeObjective>]) -> Option<(f64, f64, GroupPartition)> {
    let first = objectives.first()?;
    objectives
        .iter()
        .all(|o| o.beta1() == first.beta1() && o.beta2() == first.beta2() && o.partition() == first.partition())
        .then(|| (first.beta1(), first.beta2(), first.partition().clone()))
}

/// `λ_max(Σ AᵢᵀAᵢ)`, the Lipschitz constant of `Σ∇fᵢ`.
fn central_lipschitz(objectives: &[Arc<NodeObjective>]) -> Result<f64> {
    let n = objectives[0].dim();
    linalg::power_iteration(n, LIPSCHITZ_TOL, |v| {
        let mut out = Array1::zeros(n);
        for o in objectives {
            out += &o.a().t().dot(&o.a().dot(v));
        }
        out
    })
    .map(|l| l * (1.0 + 1e-8))
}

fn check_objectives(objectives: &[Arc<NodeObjective>]) -> Result<usize> {
    let n = objectives.first().ok_or_else(|| invalid("no objectives"))?.dim();
    if objectives.iter().any(|o| o.dim() != n) {
        return Err(invalid("objectives must share one dimension"));
    }
    Ok(n)
}

/// Minimizes `Σ Φᵢ` from `x = 0`.
pub fn fista_solve(objectives: &[Arc<NodeObjective>], tol: f64, max_iter: usize) -> Result<ReferenceSolution> {
    let n = check_objectives(objectives)?;
    fista_solve_from(objectives, Array1::zeros(n).view(), tol, max_iter)
}

/// Minimizes `Σ Φᵢ` from `x_init`. With a shared penalty this is FISTA with
/// adaptive restart on `Σfᵢ + N·ξ`; with node-specific penalties it is
/// three-operator splitting on `Σ fᵢ(xᵢ) + Σ ξᵢ(xᵢ) + ι{x₁ = … = x_N}`.
/// Stops when the certificate is at most `tol·max(1, |F|)`.
pub fn fista_solve_from(objectives: &[Arc<NodeObjective>], x_init: ArrayView1<f64>, tol: f64, max_iter: usize) -> Result<ReferenceSolution> {
    let n = check_objectives(objectives)?;
    if x_init.len() != n {
        return Err(Error::DimensionMismatch {
            context: "reference start",
            expected: n,
            got: x_init.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(invalid("reference tolerance must be positive"));
    }
    let (x, certificate, iterations) = match shared_penalty(objectives) {
        Some((b1, b2, part)) => fista_shared(objectives, x_init, b1, b2, &part, tol, max_iter)?,
        None => three_operator(objectives, x_init, tol, max_iter)?,
    };
    let f_star = central_value(objectives, x.view());
    let kappas = compute_kappas(objectives, x.view());
    Ok(ReferenceSolution {
        x_star: x.to_vec(),
        f_star,
        certificate,
        kappas,
        iterations,
    })
}

fn fista_shared(
    objectives: &[Arc<NodeObjective>],
    x_init: ArrayView1<f64>,
    b1: f64,
    b2: f64,
    part: &GroupPartition,
    tol: f64,
    max_iter: usize,
) -> Result<(Array1<f64>, f64, usize)> {
    let nn = objectives.len() as f64;
    let l = central_lipschitz(objectives)?;
    if !(l > 0.0) {
        // purely nonsmooth: a single prox step from anywhere is exact
        let x = prox_sparse_group_unchecked(x_init, 1.0, nn * b1, nn * b2, part);
        return Ok((x, 0.0, 1));
    }
    let prox_step = |v: ArrayView1<f64>| prox_sparse_group_unchecked(v, 1.0 / l, nn * b1, nn * b2, part);
    let mapping = |x: &Array1<f64>| -> f64 {
        let g = central_grad(objectives, x.view());
        let p = prox_step((x - &(g / l)).view());
        l * linalg::dist(x.view(), p.view())
    };
    let mut x = x_init.to_owned();
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut cert = f64::INFINITY;
    for it in 1..=max_iter {
        let g = central_grad(objectives, y.view());
        let x_new = prox_step((&y - &(g / l)).view());
        let restart = (&y - &x_new).dot(&(&x_new - &x)) > 0.0;
        if restart {
            theta = 1.0;
            y = x_new.clone();
        } else {
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            y = &x_new + &((&x_new - &x) * ((theta - 1.0) / theta_new));
            theta = theta_new;
        }
        x = x_new;
        if it % 10 == 0 {
            cert = mapping(&x);
            let scale = central_value(objectives, x.view()).abs().max(1.0);
            if cert <= tol * scale {
                return Ok((x, cert, it));
            }
        }
    }
    Err(Error::NonConvergence {
        what: "reference FISTA",
        iterations: max_iter,
        residual: cert,
    })
}

fn three_operator(objectives: &[Arc<NodeObjective>], x_init: ArrayView1<f64>, tol: f64, max_iter: usize) -> Result<(Array1<f64>, f64, usize)> {
    let l_max = objectives.iter().map(|o| o.lipschitz()).fold(0.0, f64::max);
    let eta = if l_max > 0.0 { 1.0 / l_max } else { 1.0 };
    let nn = objectives.len();
    let mut z: Vec<Array1<f64>> = vec![x_init.to_owned(); nn];
    let mut resid = f64::INFINITY;
    for it in 1..=max_iter {
        let mean = z.iter().fold(Array1::<f64>::zeros(x_init.len()), |acc, v| acc + v) / nn as f64;
        let mut sq = 0.0;
        for (zi, o) in z.iter_mut().zip(objectives) {
            let g = o.smooth_grad(mean.view());
            let v = &mean * 2.0 - &*zi - &(g * eta);
            let xg = prox_sparse_group_unchecked(v.view(), eta, o.beta1(), o.beta2(), o.partition());
            let d = &xg - &mean;
            sq += d.dot(&d);
            *zi += &d;
        }
        resid = sq.sqrt() / eta;
        if it % 10 == 0 || resid == 0.0 {
            let scale = central_value(objectives, mean.view()).abs().max(1.0);
            if resid <= tol * scale {
                return Ok((mean, resid, it));
            }
        }
    }
    Err(Error::NonConvergence {
        what: "reference splitting",
        iterations: max_iter,
        residual: resid,
    })
}

/// `κᵢ = ‖∇fᵢ(x*)‖ + β₁√n + β₂√K`.
pub fn compute_kappas(objectives: &[Arc<NodeObjective>], x_star: ArrayView1<f64>) -> Vec<f64> {
    objectives
        .iter()
        .map(|o| {
            let g = o.smooth_grad(x_star);
            linalg::norm(g.view()) + o.beta1() * (o.dim() as f64).sqrt() + o.beta2() * (o.partition().len() as f64).sqrt()
        })
        .collect()
}

/// Iterative prox of `β₁‖·‖₁ + β₂‖·‖_G` by block-coordinate ascent on the
/// dual `max ⟨s, x̄⟩ − (t/2)‖s‖²` over `s = u + w`, `‖u‖_∞ ≤ β₁`, `‖w_g‖ ≤ β₂`,
/// stopped when the summed duality gap is at most `tol`.
pub fn prox_bruteforce(xbar: ArrayView1<f64>, t: f64, beta1: f64, beta2: f64, partition: &GroupPartition, tol: f64) -> Result<Array1<f64>> {
    if xbar.len() != partition.dim() {
        return Err(Error::DimensionMismatch {
            context: "prox argument",
            expected: partition.dim(),
            got: xbar.len(),
        });
    }
    if !(t > 0.0) || !(beta1 >= 0.0) || !(beta2 >= 0.0) || !(tol > 0.0) {
        return Err(invalid("prox oracle needs t > 0, β ≥ 0 and tol > 0"));
    }
    let mut y = Array1::zeros(xbar.len());
    let group_tol = tol / partition.len() as f64;
    for g in partition.groups() {
        let v: Array1<f64> = g.iter().map(|&j| xbar[j]).collect();
        let yg = prox_group_dual(v.view(), t, beta1, beta2, group_tol);
        for (k, &j) in g.iter().enumerate() {
            y[j] = yg[k];
        }
    }
    Ok(y)
}

fn prox_group_dual(v: ArrayView1<f64>, t: f64, b1: f64, b2: f64, tol: f64) -> Array1<f64> {
    const MAX_SWEEPS: usize = 1_000_000;
    let target = v.mapv(|e| e / t);
    let mut u = target.mapv(|e| e.clamp(-b1, b1));
    let mut w = Array1::zeros(v.len());
    let primal = |y: &Array1<f64>| {
        let d = y - &v;
        b1 * y.iter().map(|e| e.abs()).sum::<f64>() + b2 * linalg::norm(y.view()) + d.dot(&d) / (2.0 * t)
    };
    let mut y = &v - &(&(&u + &w) * t);
    for _ in 0..MAX_SWEEPS {
        let r = &target - &u;
        let nr = linalg::norm(r.view());
        let w_new = if nr <= b2 { r } else { r * (b2 / nr) };
        let u_new = (&target - &w_new).mapv(|e| e.clamp(-b1, b1));
        let stalled = u_new == u && w_new == w;
        u = u_new;
        w = w_new;
        let s = &u + &w;
        y = &v - &(&s * t);
        let dual = s.dot(&v) - 0.5 * t * s.dot(&s);
        if stalled || primal(&y) - dual <= tol {
            break;
        }
    }
    y
}

/// On-disk cache of reference solutions, one JSON file per key.
#[derive(Clone, Debug)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        ReferenceCache {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<ReferenceSolution>> {
        let p = self.path(key);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(p)?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn store(&self, key: &str, sol: &ReferenceSolution) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path(key), serde_json::to_string(sol)?)?;
        Ok(())
    }

    pub fn load_or_solve<F>(&self, key: &str, solve: F) -> Result<ReferenceSolution>
    where
        F: FnOnce() -> Result<ReferenceSolution>,
    {
        if let Some(sol) = self.load(key)? {
            return Ok(sol);
        }
        let sol = solve()?;
        self.store(key, &sol)?;
        Ok(sol)
    }
}
