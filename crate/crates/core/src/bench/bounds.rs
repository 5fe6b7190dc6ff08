//! Ergodic error-bound curves for DPGA, DPGA-W and SDPGA.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dpga_w::{tau_closed, tau_open, CommunicationMatrix};
use crate::error::{invalid, Result};
use crate::objective::dist_sq;
use crate::topology::{spectral_summary, Graph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// DPGA, constant steps.
    Dpga,
    /// DPGA-W, constant steps.
    DpgaW,
    /// SDPGA with horizon-constant steps and `D̄ = D*(x⁰)`.
    Sdpga,
}

/// `t ↦ (suboptimality bound, consensus bound)`:
///
/// * DPGA: `(2‖Q‖Σκ²/σ_min(Ω) + I)/t` and `(‖Q‖(Σκ²/σ_min(Ω) + 1) + I)/t`;
/// * DPGA-W: `(2τ_maxΣκ²/σ²_min(W) + I)/t` and `(τ_max(Σκ²/σ²_min(W) + 1) + I)/t`;
/// * SDPGA: the DPGA terms plus `N(D̄² + 2σ²)/(2√t)`;
///
/// with `I = Σᵢ ‖x* − xᵢ⁰‖²/(2cᵢ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub sum_kappa_sq: f64,
    /// `σ_min(Ω)` for DPGA/SDPGA, `σ²_min(W)` for DPGA-W.
    pub spectral: f64,
    /// `‖Q‖` for DPGA/SDPGA, `τ_max` for DPGA-W.
    pub coupling: f64,
    pub init_term: f64,
    pub nodes: usize,
    pub d_bar: f64,
    pub sigma: f64,
}

impl BoundCurve {
    pub fn eval(&self, t: usize) -> (f64, f64) {
        let ratio = self.sum_kappa_sq / self.spectral;
        let sub = 2.0 * self.coupling * ratio + self.init_term;
        let cons = self.coupling * (ratio + 1.0) + self.init_term;
        let noise = self.noise_term(t);
        let t = t.max(1) as f64;
        (sub / t + noise, cons / t + noise)
    }

    /// Upper bound on `F(x̄ᵗ) − F*` alone (the one-sided half of the
    /// suboptimality bound).
    pub fn upper_gap(&self, t: usize) -> f64 {
        self.init_term / t.max(1) as f64 + self.noise_term(t)
    }

    /// `N(D̄² + 2σ²)/(2√t)` for SDPGA, zero otherwise.
    pub fn noise_term(&self, t: usize) -> f64 {
        match self.kind {
            BoundKind::Sdpga => {
                self.nodes as f64 * (self.d_bar * self.d_bar + 2.0 * self.sigma * self.sigma) / (2.0 * (t.max(1) as f64).sqrt())
            }
            _ => 0.0,
        }
    }
}

/// `‖Q‖ = max_{(i,j)∈E} (1/γᵢ + 1/γⱼ)`.
pub fn q_norm(graph: &Graph, gammas: &[f64]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| 1.0 / gammas[i] + 1.0 / gammas[j])
        .fold(0.0, f64::max)
}

/// `Σᵢ ‖x* − xᵢ⁰‖²/(2cᵢ)`.
pub fn init_term(steps: &[f64], x0: &[Array1<f64>], x_star: &Array1<f64>) -> f64 {
    steps
        .iter()
        .zip(x0)
        .map(|(c, xi)| dist_sq(x_star.view(), xi.view()) / (2.0 * c))
        .sum()
}

/// `D*(x⁰) = maxᵢ ‖x* − xᵢ⁰‖`.
pub fn d_star(x0: &[Array1<f64>], x_star: &Array1<f64>) -> f64 {
    x0.iter().map(|xi| dist_sq(x_star.view(), xi.view()).sqrt()).fold(0.0, f64::max)
}

fn check(graph: &Graph, gammas: &[f64], kappas: &[f64], steps: &[f64], x0: &[Array1<f64>]) -> Result<()> {
    let n = graph.node_count();
    if gammas.len() != n || kappas.len() != n || steps.len() != n || x0.len() != n {
        return Err(invalid("bound inputs need one entry per node"));
    }
    if steps.iter().chain(gammas).any(|v| !(*v > 0.0)) {
        return Err(invalid("stepsizes and penalties must be positive"));
    }
    Ok(())
}

/// DPGA bound with the stepsizes `steps` actually used.
pub fn dpga_curve(
    graph: &Graph,
    gammas: &[f64],
    kappas: &[f64],
    steps: &[f64],
    x0: &[Array1<f64>],
    x_star: &Array1<f64>,
) -> Result<BoundCurve> {
    check(graph, gammas, kappas, steps, x0)?;
    Ok(BoundCurve {
        kind: BoundKind::Dpga,
        sum_kappa_sq: kappas.iter().map(|k| k * k).sum(),
        spectral: spectral_summary(graph)?.psi_min_pos,
        coupling: q_norm(graph, gammas),
        init_term: init_term(steps, x0, x_star),
        nodes: graph.node_count(),
        d_bar: 0.0,
        sigma: 0.0,
    })
}

/// Which neighborhood `τ_max` sums `1/γⱼ` over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauNeighborhood {
    /// `𝒩ᵢ`, as in the bound statement.
    Open,
    /// `𝒩ᵢ ∪ {i}`, as in the dual recursion.
    Closed,
}

pub fn tau_max(graph: &Graph, w: &CommunicationMatrix, gammas: &[f64], which: TauNeighborhood) -> f64 {
    let taus = match which {
        TauNeighborhood::Open => tau_open(graph, gammas),
        TauNeighborhood::Closed => tau_closed(w, gammas),
    };
    taus.into_iter().fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
pub fn dpga_w_curve(
    graph: &Graph,
    w: &CommunicationMatrix,
    gammas: &[f64],
    kappas: &[f64],
    steps: &[f64],
    x0: &[Array1<f64>],
    x_star: &Array1<f64>,
    which: TauNeighborhood,
) -> Result<BoundCurve> {
    check(graph, gammas, kappas, steps, x0)?;
    let s = w.sigma_min();
    Ok(BoundCurve {
        kind: BoundKind::DpgaW,
        sum_kappa_sq: kappas.iter().map(|k| k * k).sum(),
        spectral: s * s,
        coupling: tau_max(graph, w, gammas, which),
        init_term: init_term(steps, x0, x_star),
        nodes: graph.node_count(),
        d_bar: 0.0,
        sigma: 0.0,
    })
}

/// SDPGA bound; `base_steps` are `cᵢ = 1/(Lᵢ + γᵢdᵢ + 1)`.
#[allow(clippy::too_many_arguments)]
pub fn sdpga_curve(
    graph: &Graph,
    gammas: &[f64],
    kappas: &[f64],
    base_steps: &[f64],
    x0: &[Array1<f64>],
    x_star: &Array1<f64>,
    sigma: f64,
) -> Result<BoundCurve> {
    let mut c = dpga_curve(graph, gammas, kappas, base_steps, x0, x_star)?;
    c.kind = BoundKind::Sdpga;
    c.d_bar = d_star(x0, x_star);
    c.sigma = sigma;
    Ok(c)
}

/// Coefficient of `1/t` in the equal-penalty DPGA bound with
/// `cᵢ = 1/(Lᵢ + γdᵢ)` and a common start `x⁰`:
/// `(4/γ)(Σκ²/σ_min(Ω) + 1) + (γ|E| + ΣLᵢ/2)‖x* − x⁰‖²`.
pub fn equal_gamma_coefficient(gamma: f64, sum_kappa_sq: f64, psi_min_pos: f64, edges: usize, sum_lipschitz: f64, dist_sq: f64) -> f64 {
    4.0 / gamma * (sum_kappa_sq / psi_min_pos + 1.0) + (gamma * edges as f64 + 0.5 * sum_lipschitz) * dist_sq
}
