//! TOML-driven experiment grids: one CSV per (algorithm, seed) plus a text
//! summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::bounds::{sdpga_curve, dpga_curve, dpga_w_curve, BoundCurve, TauNeighborhood};
use crate::bench::bound_violations;
use crate::bench::problem::{generate_problem, Problem, ProblemSpec};
use crate::dpga::{gamma_heuristic, optimal_gamma, DpgaConfig};
use crate::dpga_w::CommunicationMatrix;
use crate::engine::{StepPlan, StepRule};
use crate::error::{Error, Result};
use crate::reference::{fista_solve, ReferenceCache, ReferenceSolution, REFERENCE_MAX_ITER, REFERENCE_TOL};
use crate::simnet::{run_synchronous, Algorithm, AlgorithmSetup, BoundSlot, Instance, Observer, RoundSchedule, RunOutcome};
use crate::topology::{spectral_summary, Graph, TopologySpec};

fn default_groups() -> usize {
    10
}

fn default_upsilon() -> f64 {
    2.0
}

fn default_heuristic_c() -> f64 {
    crate::dpga::GAMMA_HEURISTIC_C
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub case: u8,
    pub group_size: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// CS: `cᵢ = 1/(Lᵢ + γᵢdᵢ)` (scaled by the default safety factor).
    #[default]
    Constant,
    /// AS: descent-lemma backtracking.
    Adaptive,
    Diminishing,
    /// `1/cᵢ = 1/cᵢ⁰ + √T` with `T` the horizon (default `max_rounds`).
    Horizon,
}

impl StepMode {
    pub fn tag(self) -> &'static str {
        match self {
            StepMode::Constant => "cs",
            StepMode::Adaptive => "as",
            StepMode::Diminishing => "dim",
            StepMode::Horizon => "hor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaRule {
    /// `γ = √(c·N/(|E|·d_min))`.
    Heuristic {
        #[serde(default = "default_heuristic_c")]
        c: f64,
    },
    Explicit {
        value: f64,
    },
    /// `γ*` computed from the reference solution and `x⁰ = 0`.
    Optimal,
}

impl Default for GammaRule {
    fn default() -> Self {
        GammaRule::Heuristic {
            c: default_heuristic_c(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: Algorithm,
    #[serde(default)]
    pub step: StepMode,
    #[serde(default)]
    pub gamma: GammaRule,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_upsilon")]
    pub upsilon: f64,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub label: Option<String>,
}

impl AlgorithmConfig {
    pub fn new(kind: Algorithm) -> Self {
        AlgorithmConfig {
            kind,
            step: StepMode::Constant,
            gamma: GammaRule::default(),
            sigma: 0.0,
            upsilon: default_upsilon(),
            horizon: None,
            label: None,
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut s = format!("{}_{}", self.kind.name(), self.step.tag());
        if self.sigma > 0.0 {
            let _ = write!(s, "_sigma{}", self.sigma);
        }
        s
    }

    fn rule(&self, max_rounds: usize) -> StepRule {
        match self.step {
            StepMode::Constant => StepRule::constant(),
            StepMode::Adaptive => StepRule::AdaptiveBacktrack {
                upsilon: self.upsilon,
                optimistic: false,
            },
            StepMode::Diminishing => StepRule::Diminishing,
            StepMode::Horizon => StepRule::HorizonConstant {
                horizon: self.horizon.unwrap_or(max_rounds),
            },
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let label = self.label();
        let stochastic_kind = matches!(self.kind, Algorithm::Sdpga | Algorithm::SdpgaW);
        if stochastic_kind != (self.sigma > 0.0) {
            return Err(format!("{label}: sigma > 0 is required for sdpga/sdpga_w and forbidden otherwise"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(format!("{label}: sigma must be finite and nonnegative"));
        }
        if !(self.upsilon > 1.0) {
            return Err(format!("{label}: upsilon must exceed 1"));
        }
        if self.horizon == Some(0) {
            return Err(format!("{label}: horizon must be positive"));
        }
        let step_ok = match self.kind {
            Algorithm::PgExtra | Algorithm::Admm => self.step == StepMode::Constant,
            Algorithm::DpgaW | Algorithm::SdpgaW => self.step != StepMode::Adaptive,
            _ => true,
        };
        if !step_ok {
            return Err(format!("{label}: step mode {:?} is not supported", self.step));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: TopologySpec,
    pub problem: ProblemConfig,
    pub seeds: Vec<u64>,
    pub schedule: RoundSchedule,
    pub algorithms: Vec<AlgorithmConfig>,
    /// Attach bound columns (DPGA, DPGA-W with constant steps; SDPGA with
    /// horizon steps).
    #[serde(default)]
    pub bounds: bool,
    #[serde(default)]
    pub reference_cache: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.as_ref().display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid experiment name {:?}", self.name));
        }
        if self.algorithms.is_empty() {
            return bad("algorithm list is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(|a| a.label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("algorithm labels must be unique".into());
        }
        for a in &self.algorithms {
            a.validate().map_err(Error::Config)?;
        }
        self.schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.problem_spec(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn problem_spec(&self, seed: u64) -> ProblemSpec {
        ProblemSpec {
            case: self.problem.case,
            nodes: self.topology.nodes,
            group_size: self.problem.group_size,
            groups: self.problem.groups,
            seed,
        }
    }

    pub fn csv_name(&self, alg: &AlgorithmConfig, seed: u64) -> String {
        format!("{}_{}_seed{}.csv", self.name, alg.label(), seed)
    }
}

/// Problem, reference and graph for one seed.
#[derive(Clone, Debug)]
pub struct SeedContext {
    pub graph: Graph,
    pub problem: Problem,
    pub reference: ReferenceSolution,
}

impl SeedContext {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let graph = cfg.topology.build()?;
        let problem = generate_problem(&cfg.problem_spec(seed))?;
        let solve = || fista_solve(&problem.objectives, REFERENCE_TOL, REFERENCE_MAX_ITER);
        let reference = match &cfg.reference_cache {
            Some(dir) => ReferenceCache::new(dir).load_or_solve(&problem.spec.key(), solve)?,
            None => solve()?,
        };
        Ok(SeedContext {
            graph,
            problem,
            reference,
        })
    }

    pub fn instance(&self) -> Instance {
        let n = self.problem.spec.dim();
        Instance {
            graph: self.graph.clone(),
            objectives: self.problem.shared(),
            x0: vec![Array1::zeros(n); self.graph.node_count()],
        }
    }

    pub fn gamma(&self, rule: GammaRule) -> Result<f64> {
        match rule {
            GammaRule::Heuristic { c } => gamma_heuristic(&self.graph, c),
            GammaRule::Explicit { value } if value > 0.0 && value.is_finite() => Ok(value),
            GammaRule::Explicit { value } => Err(Error::Config(format!("explicit gamma must be positive, got {value}"))),
            GammaRule::Optimal => {
                let psi = spectral_summary(&self.graph)?.psi_min_pos;
                let dist = crate::linalg::norm(self.reference.x().view());
                optimal_gamma(&self.graph, &self.reference.kappas, psi, dist)
            }
        }
    }
}

/// Builds the setup, the observer (with bound curves if requested) and the
/// attached curve for `alg` on one seed.
pub fn prepare_cell(
    ctx: &SeedContext,
    alg: &AlgorithmConfig,
    seed: u64,
    schedule: &RoundSchedule,
    with_bounds: bool,
) -> Result<(AlgorithmSetup, Observer, Option<BoundCurve>)> {
    let inst = ctx.instance();
    let n_nodes = ctx.graph.node_count();
    let mut observer = Observer::new(&ctx.graph, &inst.objectives, Some(ctx.reference.f_star));
    let x_star = ctx.reference.x();
    let kappas = &ctx.reference.kappas;
    let lips = ctx.problem.lipschitz();
    let rule = alg.rule(schedule.max_rounds);
    let config = DpgaConfig::stochastic(rule, alg.sigma, seed);
    let mut curve = None;
    let setup = match alg.kind {
        Algorithm::Dpga | Algorithm::Sdpga | Algorithm::EngineDirect => {
            let gammas = vec![ctx.gamma(alg.gamma)?; n_nodes];
            let curv: Vec<f64> = (0..n_nodes).map(|i| gammas[i] * ctx.graph.degree(i) as f64).collect();
            if with_bounds {
                let plan = StepPlan::new(rule, lips.clone(), curv)?;
                curve = match (alg.kind, alg.step) {
                    (Algorithm::Dpga, StepMode::Constant) => {
                        Some(dpga_curve(&ctx.graph, &gammas, kappas, plan.base(), &inst.x0, &x_star)?)
                    }
                    (Algorithm::Sdpga, StepMode::Horizon) => Some(sdpga_curve(
                        &ctx.graph,
                        &gammas,
                        kappas,
                        plan.base(),
                        &inst.x0,
                        &x_star,
                        alg.sigma,
                    )?),
                    _ => None,
                };
            }
            if alg.kind == Algorithm::EngineDirect {
                AlgorithmSetup::EngineDirect { gammas, rule }
            } else {
                AlgorithmSetup::Dpga { gammas, config }
            }
        }
        Algorithm::DpgaW | Algorithm::SdpgaW => {
            let gammas = vec![ctx.gamma(alg.gamma)?; n_nodes];
            let w = CommunicationMatrix::laplacian(&ctx.graph)?;
            observer = observer.with_communication_matrix(&w);
            if with_bounds && alg.kind == Algorithm::DpgaW && alg.step == StepMode::Constant {
                let curv: Vec<f64> = (0..n_nodes).map(|i| gammas[i] * w.omega_norm_sq(i)).collect();
                let plan = StepPlan::new(rule, lips.clone(), curv)?;
                curve = Some(dpga_w_curve(
                    &ctx.graph,
                    &w,
                    &gammas,
                    kappas,
                    plan.base(),
                    &inst.x0,
                    &x_star,
                    TauNeighborhood::Closed,
                )?);
            }
            AlgorithmSetup::DpgaW { w, gammas, config }
        }
        Algorithm::PgExtra => AlgorithmSetup::PgExtra { step: None },
        Algorithm::Admm => AlgorithmSetup::Admm {
            w: CommunicationMatrix::laplacian(&ctx.graph)?,
            gamma: ctx.gamma(alg.gamma)?,
        },
    };
    if let Some(c) = &curve {
        let slot = match c.kind {
            crate::bench::BoundKind::Dpga => BoundSlot::Dpga,
            crate::bench::BoundKind::DpgaW => BoundSlot::DpgaW,
            crate::bench::BoundKind::Sdpga => BoundSlot::Sdpga,
        };
        observer = observer.with_bound(slot, c.clone());
    }
    Ok((setup, observer, curve))
}

/// One summary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rel_subopt: f64,
    pub consensus: f64,
    pub rounds: usize,
    pub cum_scalars_per_node: usize,
    pub solved: bool,
    /// Ergodic rounds exceeding a deterministic bound (`None` without one).
    pub bound_violations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub cells: Vec<CellSummary>,
}

impl ExperimentSummary {
    /// Every cell solved and no deterministic bound was exceeded.
    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| c.solved && c.bound_violations.unwrap_or(0) == 0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.name);
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>12} {:>12} {:>8} {:>12} {:>7} {:>6}",
            "algorithm", "seed", "rel_subopt", "V", "rounds", "scalars/n", "solved", "viol"
        );
        for c in &self.cells {
            let viol = c.bound_violations.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>12.4e} {:>12.4e} {:>8} {:>12} {:>7} {:>6}",
                c.label,
                c.seed,
                c.rel_subopt,
                c.consensus,
                c.rounds,
                c.cum_scalars_per_node,
                if c.solved { "yes" } else { "no" },
                viol
            );
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn summarize(alg: &AlgorithmConfig, seed: u64, outcome: &RunOutcome, curve: Option<&BoundCurve>) -> CellSummary {
    let last = outcome.record.last();
    let dim = outcome.audit.as_ref().map_or(1, |a| a.dim.max(1));
    CellSummary {
        label: alg.label(),
        algorithm: outcome.algorithm,
        seed,
        rel_subopt: last.and_then(|r| r.rel_subopt).unwrap_or(f64::NAN),
        consensus: last.map_or(f64::NAN, |r| r.consensus_violation),
        rounds: outcome.rounds,
        cum_scalars_per_node: last.map_or(0, |r| r.cum_scalars_per_node) / dim,
        solved: outcome.converged,
        bound_violations: curve
            .filter(|c| c.kind != crate::bench::BoundKind::Sdpga && !outcome.ergodic.is_empty())
            .map(|c| bound_violations(c, &outcome.ergodic).len()),
    }
}

/// Runs every (algorithm, seed) cell in parallel, writes
/// `{name}_{label}_seed{seed}.csv` (plus `_ergodic.csv` when ergodic
/// tracking is on) and `{name}_summary.txt` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let contexts: Vec<Arc<SeedContext>> = cfg
        .seeds
        .par_iter()
        .map(|&s| SeedContext::build(cfg, s).map(Arc::new))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|s| (0..cfg.algorithms.len()).map(move |a| (s, a)))
        .collect();
    let cells: Vec<CellSummary> = cells
        .par_iter()
        .map(|&(si, ai)| {
            let ctx = &contexts[si];
            let seed = cfg.seeds[si];
            let alg = &cfg.algorithms[ai];
            let (setup, observer, curve) = prepare_cell(ctx, alg, seed, &cfg.schedule, cfg.bounds)?;
            let outcome = run_synchronous(&setup, &ctx.instance(), observer, &cfg.schedule)?;
            let path = out_dir.join(cfg.csv_name(alg, seed));
            outcome.record.write_csv(std::fs::File::create(&path)?)?;
            if !outcome.ergodic.is_empty() {
                let path = out_dir.join(format!("{}_{}_seed{}_ergodic.csv", cfg.name, alg.label(), seed));
                let mut w = csv::Writer::from_path(path)?;
                for r in &outcome.ergodic {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            Ok(summarize(alg, seed, &outcome, curve.as_ref()))
        })
        .collect::<Result<_>>()?;
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        cells,
    };
    std::fs::write(out_dir.join(format!("{}_summary.txt", cfg.name)), summary.to_text())?;
    Ok(summary)
}
