//! Per-node composite objectives `Φ = ξ + f` with `ξ` the sparse-group
//! penalty and `f(x) = h_δ(Ax − b)` a Huber data term.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Tolerance of the power iteration behind Lipschitz constants.
pub const LIPSCHITZ_TOL: f64 = 1e-10;

/// A composite function split into a smooth part with Lipschitz gradient and
/// a prox-friendly part. Algorithms only see objectives through this trait.
pub trait CompositeObjective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn smooth_value(&self, x: ArrayView1<f64>) -> f64;
    fn smooth_grad(&self, x: ArrayView1<f64>) -> Array1<f64>;
    fn nonsmooth_value(&self, x: ArrayView1<f64>) -> f64;
    /// `argmin_y ξ(y) + ‖y − v‖²/(2t)`.
    fn prox(&self, v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>>;
    /// Lipschitz constant of the smooth gradient.
    fn lipschitz(&self) -> f64;

    fn value(&self, x: ArrayView1<f64>) -> f64 {
        self.smooth_value(x) + self.nonsmooth_value(x)
    }
}

pub type SharedObjective = Arc<dyn CompositeObjective>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    dim: usize,
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn new(dim: usize, mut groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(invalid("empty group partition"));
        }
        let mut seen = vec![false; dim];
        for g in &mut groups {
            if g.is_empty() {
                return Err(invalid("partition contains an empty group"));
            }
            g.sort_unstable();
            for &j in g.iter() {
                if j >= dim {
                    return Err(invalid(format!("group index {j} out of range for n = {dim}")));
                }
                if seen[j] {
                    return Err(invalid(format!("index {j} appears in two groups")));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("index {j} is not covered by the partition")));
        }
        Ok(GroupPartition { dim, groups })
    }

    /// `k` contiguous groups of (nearly) equal size.
    pub fn contiguous(dim: usize, k: usize) -> Result<Self> {
        if k == 0 || k > dim {
            return Err(invalid(format!("cannot split {dim} indices into {k} groups")));
        }
        let groups = (0..k)
            .map(|g| (g * dim / k..(g + 1) * dim / k).collect())
            .collect();
        GroupPartition::new(dim, groups)
    }

    /// `k` groups of size `group_size` over a random permutation of the indices.
    pub fn random<R: Rng + ?Sized>(k: usize, group_size: usize, rng: &mut R) -> Result<Self> {
        let dim = k * group_size;
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.shuffle(rng);
        let groups = perm.chunks(group_size.max(1)).map(<[usize]>::to_vec).collect();
        GroupPartition::new(dim, groups)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

fn check_finite(v: ArrayView1<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite entry in {what}")))
    }
}

fn huber_value_unchecked(y: ArrayView1<f64>, delta: f64) -> f64 {
    y.iter()
        .map(|&v| {
            let a = v.abs();
            if a <= delta {
                0.5 * v * v
            } else {
                delta * a - 0.5 * delta * delta
            }
        })
        .sum()
}

fn huber_grad_unchecked(y: ArrayView1<f64>, delta: f64) -> Array1<f64> {
    y.mapv(|v| v.clamp(-delta, delta))
}

/// Huber value `Σ ½y²` (|y| ≤ δ) or `δ|y| − ½δ²`, and its gradient `clamp(y, −δ, δ)`.
pub fn huber_value_grad(y: ArrayView1<f64>, delta: f64) -> Result<(f64, Array1<f64>)> {
    if !(delta > 0.0) {
        return Err(invalid(format!("Huber threshold must be positive, got {delta}")));
    }
    check_finite(y, "Huber argument")?;
    Ok((huber_value_unchecked(y, delta), huber_grad_unchecked(y, delta)))
}

/// `β₁‖x‖₁ + β₂ Σ_k ‖x_{g(k)}‖₂`.
pub fn sparse_group_value(x: ArrayView1<f64>, beta1: f64, beta2: f64, partition: &GroupPartition) -> f64 {
    let l1 = if beta1 != 0.0 {
        beta1 * x.iter().map(|v| v.abs()).sum::<f64>()
    } else {
        0.0
    };
    let grp = if beta2 != 0.0 {
        beta2
            * partition
                .groups()
                .iter()
                .map(|g| g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt())
                .sum::<f64>()
    } else {
        0.0
    };
    l1 + grp
}

/// Closed-form prox of the sparse-group penalty: soft-threshold by `tβ₁`,
/// then shrink each group by `max(1 − tβ₂/‖η_g‖, 0)`.
pub fn prox_sparse_group(
    xbar: ArrayView1<f64>,
    t: f64,
    beta1: f64,
    beta2: f64,
    partition: &GroupPartition,
) -> Result<Array1<f64>> {
    if partition.is_empty() {
        return Err(invalid("empty partition"));
    }
    if !(t > 0.0) || !(beta1 >= 0.0) || !(beta2 >= 0.0) {
        return Err(invalid(format!(
            "prox needs t > 0 and β ≥ 0 (t = {t}, β₁ = {beta1}, β₂ = {beta2})"
        )));
    }
    if xbar.len() != partition.dim() {
        return Err(Error::DimensionMismatch {
            context: "prox argument",
            expected: partition.dim(),
            got: xbar.len(),
        });
    }
    Ok(prox_sparse_group_unchecked(xbar, t, beta1, beta2, partition))
}

pub(crate) fn prox_sparse_group_unchecked(
    xbar: ArrayView1<f64>,
    t: f64,
    beta1: f64,
    beta2: f64,
    partition: &GroupPartition,
) -> Array1<f64> {
    let thr = t * beta1;
    let mut eta = xbar.mapv(|v| v.signum() * (v.abs() - thr).max(0.0));
    if beta2 == 0.0 {
        return eta;
    }
    let gthr = t * beta2;
    for g in partition.groups() {
        let norm = g.iter().map(|&j| eta[j] * eta[j]).sum::<f64>().sqrt();
        if norm <= gthr {
            for &j in g {
                eta[j] = 0.0;
            }
        } else {
            let scale = 1.0 - gthr / norm;
            for &j in g {
                eta[j] *= scale;
            }
        }
    }
    eta
}

#[derive(Clone, Debug)]
pub struct NodeEval {
    pub phi: f64,
    pub f: f64,
    pub grad_f: Array1<f64>,
}

/// One agent's `h_δ(Ax − b) + β₁‖x‖₁ + β₂‖x‖_G`.
#[derive(Clone, Debug)]
pub struct NodeObjective {
    a: Array2<f64>,
    b: Array1<f64>,
    delta: f64,
    beta1: f64,
    beta2: f64,
    partition: GroupPartition,
    lipschitz: f64,
}

impl NodeObjective {
    /// `delta = f64::INFINITY` gives the least-squares term `½‖Ax − b‖²`.
    pub fn new(
        a: Array2<f64>,
        b: Array1<f64>,
        delta: f64,
        beta1: f64,
        beta2: f64,
        partition: GroupPartition,
    ) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "rows of A vs b",
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if a.ncols() != partition.dim() {
            return Err(Error::DimensionMismatch {
                context: "columns of A vs partition",
                expected: partition.dim(),
                got: a.ncols(),
            });
        }
        if !(delta > 0.0) {
            return Err(invalid(format!("Huber threshold must be positive, got {delta}")));
        }
        if !(beta1 >= 0.0 && beta2 >= 0.0 && beta1.is_finite() && beta2.is_finite()) {
            return Err(invalid("regularization weights must be finite and nonnegative"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite data in A or b".into()));
        }
        let lipschitz = linalg::spectral_norm_sq(a.view(), LIPSCHITZ_TOL)?;
        Ok(NodeObjective {
            a,
            b,
            delta,
            beta1,
            beta2,
            partition,
            lipschitz,
        })
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    fn residual(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut r = self.a.dot(&x);
        r -= &self.b;
        r
    }

    pub fn eval(&self, x: ArrayView1<f64>) -> Result<NodeEval> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "node objective argument",
                expected: self.dim(),
                got: x.len(),
            });
        }
        check_finite(x, "node objective argument")?;
        let r = self.residual(x);
        let f = huber_value_unchecked(r.view(), self.delta);
        let grad_f = self.a.t().dot(&huber_grad_unchecked(r.view(), self.delta));
        let phi = f + self.nonsmooth_value(x);
        Ok(NodeEval { phi, f, grad_f })
    }

    /// Plain-text dump: dimensions, row-major `A`, `b`, parameters and groups.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dims {} {}", self.a.nrows(), self.a.ncols());
        let _ = writeln!(s, "delta {}", self.delta);
        let _ = writeln!(s, "beta1 {}", self.beta1);
        let _ = writeln!(s, "beta2 {}", self.beta2);
        for row in self.a.rows() {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "A {}", line.join(" "));
        }
        let line: Vec<String> = self.b.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "b {}", line.join(" "));
        for g in self.partition.groups() {
            let line: Vec<String> = g.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "group {}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("line {line}: {msg}"));
        let (mut m, mut n) = (None, None);
        let (mut delta, mut beta1, mut beta2) = (None, None, None);
        let mut rows: Vec<f64> = Vec::new();
        let mut nrows = 0;
        let mut b = None;
        let mut groups = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            let floats = || -> Result<Vec<f64>> {
                rest.iter()
                    .map(|t| t.parse::<f64>().map_err(|e| bad(lineno, &e.to_string())))
                    .collect()
            };
            match key {
                "dims" => {
                    let d: Vec<usize> = rest
                        .iter()
                        .map(|t| t.parse().map_err(|_| bad(lineno, "bad dimension")))
                        .collect::<Result<_>>()?;
                    if d.len() != 2 {
                        return Err(bad(lineno, "dims needs two integers"));
                    }
                    m = Some(d[0]);
                    n = Some(d[1]);
                }
                "delta" => delta = floats()?.first().copied(),
                "beta1" => beta1 = floats()?.first().copied(),
                "beta2" => beta2 = floats()?.first().copied(),
                "A" => {
                    rows.extend(floats()?);
                    nrows += 1;
                }
                "b" => b = Some(Array1::from(floats()?)),
                "group" => groups.push(
                    rest.iter()
                        .map(|t| t.parse().map_err(|_| bad(lineno, "bad group index")))
                        .collect::<Result<Vec<usize>>>()?,
                ),
                other => return Err(bad(lineno, &format!("unknown key '{other}'"))),
            }
        }
        let missing = |what: &str| Error::Config(format!("missing '{what}'"));
        let (m, n) = (m.ok_or_else(|| missing("dims"))?, n.ok_or_else(|| missing("dims"))?);
        if nrows != m || rows.len() != m * n {
            return Err(Error::Config(format!("expected {m} rows of {n} values for A")));
        }
        let a = Array2::from_shape_vec((m, n), rows).map_err(|e| Error::Config(e.to_string()))?;
        NodeObjective::new(
            a,
            b.ok_or_else(|| missing("b"))?,
            delta.ok_or_else(|| missing("delta"))?,
            beta1.ok_or_else(|| missing("beta1"))?,
            beta2.ok_or_else(|| missing("beta2"))?,
            GroupPartition::new(n, groups)?,
        )
    }
}

impl CompositeObjective for NodeObjective {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn smooth_value(&self, x: ArrayView1<f64>) -> f64 {
        huber_value_unchecked(self.residual(x).view(), self.delta)
    }

    fn smooth_grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let r = self.residual(x);
        self.a.t().dot(&huber_grad_unchecked(r.view(), self.delta))
    }

    fn nonsmooth_value(&self, x: ArrayView1<f64>) -> f64 {
        sparse_group_value(x, self.beta1, self.beta2, &self.partition)
    }

    fn prox(&self, v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        prox_sparse_group(v, t, self.beta1, self.beta2, &self.partition)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Stochastic first-order oracle: exact gradient plus isotropic Gaussian
/// noise with per-coordinate variance `σ²/n`, so `E‖ε‖² = σ²`.
#[derive(Clone, Debug)]
pub struct NoisyOracle {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl NoisyOracle {
    /// `stream` separates independent per-node sequences under one seed.
    pub fn new(sigma: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("noise level must be finite and ≥ 0, got {sigma}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(NoisyOracle { sigma, rng })
    }

    pub fn exact() -> Self {
        NoisyOracle {
            sigma: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Adds a fresh noise draw to `grad`. With σ = 0 the input is returned untouched.
    pub fn perturb(&mut self, mut grad: Array1<f64>) -> Array1<f64> {
        if self.sigma == 0.0 || grad.is_empty() {
            return grad;
        }
        let sd = self.sigma / (grad.len() as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("finite positive sd");
        grad.mapv_inplace(|g| g + normal.sample(&mut self.rng));
        grad
    }
}

pub fn oracle_grad(obj: &dyn CompositeObjective, oracle: &mut NoisyOracle, x: ArrayView1<f64>) -> Array1<f64> {
    oracle.perturb(obj.smooth_grad(x))
}

/// `‖x − y‖²` without allocating.
pub(crate) fn dist_sq(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    Zip::from(x).and(y).fold(0.0, |acc, a, b| acc + (a - b) * (a - b))
}
