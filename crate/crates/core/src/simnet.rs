//! Synchronous message-passing simulator.
//!
//! A node only ever sees its own state and the messages its neighbors sent
//! in the current round and phase; the [`NodeProgram`] trait has no other
//! inputs. Metrics that need global knowledge are computed by an
//! [`Observer`] between rounds and never fed back.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::BoundCurve;
use crate::dpga::{self, edge_consensus_norm, max_edge_disagreement, DpgaConfig};
use crate::dpga_w::{self, kron_apply_norm, CommunicationMatrix};
use crate::baselines;
use crate::engine::{self, BlockProblem, EngineState, StepPlan, StepRule};
use crate::error::{invalid, Error, Result};
use crate::objective::{NoisyOracle, SharedObjective};
use crate::topology::{mixing_pair, Graph};

#[derive(Clone, Debug)]
pub struct Message {
    pub sender: usize,
    pub round: usize,
    pub phase: usize,
    pub payload: Arc<Array1<f64>>,
}

/// One node's algorithm. Round 0 holds the optional setup exchanges;
/// iterations use rounds 1, 2, …. In every phase the simulator first calls
/// [`emit`](NodeProgram::emit) on all nodes (local work, then broadcast),
/// then [`absorb`](NodeProgram::absorb) with the neighbors' messages.
pub trait NodeProgram: Send {
    fn id(&self) -> usize;
    fn neighbors(&self) -> &[usize];
    fn setup_phases(&self) -> usize {
        0
    }
    fn phases(&self) -> usize;
    fn emit(&mut self, round: usize, phase: usize) -> Result<Array1<f64>>;
    fn absorb(&mut self, round: usize, phase: usize, inbox: &[Message]) -> Result<()>;
    /// Current primal iterate, the only state an observer may read.
    fn iterate(&self) -> ArrayView1<'_, f64>;
    /// Persistent n-vectors held between rounds.
    fn stored_vectors(&self) -> usize;
    /// Cumulative inner-solver iterations, for methods that have one.
    fn inner_iterations(&self) -> Option<usize> {
        None
    }
    /// Extra vector exposed to offline diagnostics only.
    fn diagnostic(&self) -> Option<ArrayView1<'_, f64>> {
        None
    }
}

/// Verifies that `inbox` holds exactly one `dim`-vector from each neighbor,
/// in neighbor order, stamped with the current round and phase.
pub fn check_inbox(node: usize, neighbors: &[usize], round: usize, phase: usize, dim: usize, inbox: &[Message]) -> Result<()> {
    let fail = |detail: String| Error::Protocol { node, round, detail };
    if inbox.len() != neighbors.len() {
        return Err(fail(format!(
            "expected {} messages in phase {phase}, got {}",
            neighbors.len(),
            inbox.len()
        )));
    }
    for (m, &j) in inbox.iter().zip(neighbors) {
        if m.sender != j {
            return Err(fail(format!("expected a message from {j}, got one from {}", m.sender)));
        }
        if m.round != round || m.phase != phase {
            return Err(fail(format!(
                "message from {j} is stamped round {} phase {}, expected round {round} phase {phase}",
                m.round, m.phase
            )));
        }
        if m.payload.len() != dim {
            return Err(fail(format!("message from {j} has length {}, expected {dim}", m.payload.len())));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dpga,
    Sdpga,
    DpgaW,
    SdpgaW,
    PgExtra,
    Admm,
    EngineDirect,
}

/// Per-node costs in units of `n`: scalars sent each round, persistent
/// vectors, and one-time setup scalars.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommProfile {
    pub per_round: usize,
    pub storage: usize,
    pub setup: usize,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dpga => "dpga",
            Algorithm::Sdpga => "sdpga",
            Algorithm::DpgaW => "dpga_w",
            Algorithm::SdpgaW => "sdpga_w",
            Algorithm::PgExtra => "pg_extra",
            Algorithm::Admm => "admm",
            Algorithm::EngineDirect => "engine_direct",
        }
    }

    pub fn profile(self) -> Option<CommProfile> {
        let p = |per_round, storage, setup| {
            Some(CommProfile {
                per_round,
                storage,
                setup,
            })
        };
        match self {
            Algorithm::Dpga | Algorithm::Sdpga => p(1, 3, 1),
            Algorithm::DpgaW | Algorithm::SdpgaW | Algorithm::Admm => p(2, 3, 0),
            Algorithm::PgExtra => p(2, 4, 1),
            Algorithm::EngineDirect => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub round: usize,
    pub sent: Vec<usize>,
    pub received: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    pub dim: usize,
    pub degrees: Vec<usize>,
    /// Round 0 entry holds the setup exchanges.
    pub rounds: Vec<RoundAudit>,
    pub peak_storage: Vec<usize>,
}

impl AuditLog {
    fn new(dim: usize, degrees: Vec<usize>) -> Self {
        let n = degrees.len();
        AuditLog {
            dim,
            degrees,
            rounds: vec![RoundAudit {
                round: 0,
                sent: vec![0; n],
                received: vec![0; n],
            }],
            peak_storage: vec![0; n],
        }
    }

    /// Largest cumulative per-node scalar count, setup included.
    pub fn cumulative_sent(&self) -> usize {
        (0..self.degrees.len())
            .map(|i| self.rounds.iter().map(|r| r.sent[i]).sum::<usize>())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub passed: bool,
    pub findings: Vec<String>,
}

/// Compares observed traffic and storage with the algorithm's profile.
pub fn audit_check(log: &AuditLog, algorithm: Algorithm) -> AuditReport {
    let mut findings = Vec::new();
    let Some(profile) = algorithm.profile() else {
        return AuditReport {
            passed: false,
            findings: vec![format!("{} has no communication profile", algorithm.name())],
        };
    };
    let n = log.dim;
    for r in &log.rounds {
        let per = if r.round == 0 { profile.setup } else { profile.per_round };
        for (i, (&s, &rc)) in r.sent.iter().zip(&r.received).enumerate() {
            if s != per * n {
                findings.push(format!("round {}: node {i} sent {s} scalars, expected {}", r.round, per * n));
            }
            if rc != per * n * log.degrees[i] {
                findings.push(format!(
                    "round {}: node {i} received {rc} scalars, expected {}",
                    r.round,
                    per * n * log.degrees[i]
                ));
            }
        }
    }
    for (i, &s) in log.peak_storage.iter().enumerate() {
        if s != profile.storage {
            findings.push(format!("node {i} stores {s} vectors, expected {}", profile.storage));
        }
    }
    if log.rounds.len() < 2 {
        findings.push("no iteration rounds were recorded".into());
    }
    AuditReport {
        passed: findings.is_empty(),
        findings,
    }
}

pub struct Network {
    graph: Graph,
    nodes: Vec<Box<dyn NodeProgram>>,
    parallel: bool,
    round: usize,
    phases: usize,
    audit: AuditLog,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("nodes", &self.nodes.len())
            .field("round", &self.round)
            .field("parallel", &self.parallel)
            .finish()
    }
}

impl Network {
    /// Wires programs to the graph and runs the setup exchanges.
    pub fn new(graph: Graph, nodes: Vec<Box<dyn NodeProgram>>, parallel: bool) -> Result<Self> {
        if nodes.len() != graph.node_count() {
            return Err(Error::DimensionMismatch {
                context: "node programs",
                expected: graph.node_count(),
                got: nodes.len(),
            });
        }
        let dim = nodes[0].iterate().len();
        let phases = nodes[0].phases();
        let setup = nodes[0].setup_phases();
        for (i, node) in nodes.iter().enumerate() {
            if node.id() != i || node.neighbors() != graph.neighbors(i) {
                return Err(invalid(format!("program {i} does not match the graph")));
            }
            if node.iterate().len() != dim || node.phases() != phases || node.setup_phases() != setup {
                return Err(invalid("all node programs must share dimension and phase layout"));
            }
        }
        let audit = AuditLog::new(dim, graph.degrees());
        let mut net = Network {
            graph,
            nodes,
            parallel,
            round: 0,
            phases,
            audit,
        };
        for phase in 0..setup {
            net.exchange(0, phase)?;
        }
        net.record_storage();
        Ok(net)
    }

    fn record_storage(&mut self) {
        for (peak, node) in self.audit.peak_storage.iter_mut().zip(&self.nodes) {
            *peak = (*peak).max(node.stored_vectors());
        }
    }

    fn exchange(&mut self, round: usize, phase: usize) -> Result<()> {
        let emitted: Vec<Result<Array1<f64>>> = if self.parallel {
            self.nodes.par_iter_mut().map(|n| n.emit(round, phase)).collect()
        } else {
            self.nodes.iter_mut().map(|n| n.emit(round, phase)).collect()
        };
        let payloads: Vec<Arc<Array1<f64>>> = emitted.into_iter().map(|r| r.map(Arc::new)).collect::<Result<_>>()?;
        let inboxes: Vec<Vec<Message>> = (0..self.nodes.len())
            .map(|i| {
                self.graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| Message {
                        sender: j,
                        round,
                        phase,
                        payload: payloads[j].clone(),
                    })
                    .collect()
            })
            .collect();
        let entry = self.audit.rounds.last_mut().expect("audit entry");
        for (i, p) in payloads.iter().enumerate() {
            entry.sent[i] += p.len();
            entry.received[i] += inboxes[i].iter().map(|m| m.payload.len()).sum::<usize>();
        }
        let results: Vec<Result<()>> = if self.parallel {
            self.nodes
                .par_iter_mut()
                .zip(inboxes.par_iter())
                .map(|(n, inbox)| n.absorb(round, phase, inbox))
                .collect()
        } else {
            self.nodes
                .iter_mut()
                .zip(&inboxes)
                .map(|(n, inbox)| n.absorb(round, phase, inbox))
                .collect()
        };
        results.into_iter().collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    /// One synchronous round (all phases).
    pub fn step(&mut self) -> Result<()> {
        self.round += 1;
        let n = self.nodes.len();
        self.audit.rounds.push(RoundAudit {
            round: self.round,
            sent: vec![0; n],
            received: vec![0; n],
        });
        for phase in 0..self.phases {
            self.exchange(self.round, phase)?;
        }
        self.record_storage();
        Ok(())
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn nodes(&self) -> &[Box<dyn NodeProgram>] {
        &self.nodes
    }

    pub fn iterates(&self) -> Vec<Array1<f64>> {
        self.nodes.iter().map(|n| n.iterate().to_owned()).collect()
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }
}

fn default_stop_rel() -> f64 {
    1e-3
}

fn default_stop_consensus() -> f64 {
    1e-4
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundSchedule {
    pub max_rounds: usize,
    #[serde(default = "default_stop_rel")]
    pub stop_rel_subopt: f64,
    #[serde(default = "default_stop_consensus")]
    pub stop_consensus: f64,
    #[serde(default = "default_one")]
    pub check_every: usize,
    /// Stop once both thresholds hold at a check round.
    #[serde(default = "default_true")]
    pub stop_on_threshold: bool,
    /// Track ergodic averages and report them every round.
    #[serde(default)]
    pub ergodic: bool,
    #[serde(default)]
    pub parallel: bool,
}

impl RoundSchedule {
    pub fn new(max_rounds: usize) -> Self {
        RoundSchedule {
            max_rounds,
            stop_rel_subopt: default_stop_rel(),
            stop_consensus: default_stop_consensus(),
            check_every: 1,
            stop_on_threshold: true,
            ergodic: false,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 || self.check_every == 0 {
            return Err(invalid("max_rounds and check_every must be at least 1"));
        }
        if !(self.stop_rel_subopt > 0.0) || !(self.stop_consensus > 0.0) {
            return Err(invalid("stopping thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub round: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub rel_subopt: Option<f64>,
    #[serde(rename = "consensus_violation_V")]
    pub consensus_violation: f64,
    pub max_edge_disagreement: f64,
    pub cum_scalars_per_node: usize,
    pub bound_dpga: Option<f64>,
    pub bound_dpga_w: Option<f64>,
    pub bound_sdpga: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        if self.rows.is_empty() {
            wtr.write_record([
                "round",
                "F",
                "rel_subopt",
                "consensus_violation_V",
                "max_edge_disagreement",
                "cum_scalars_per_node",
                "bound_theorem3",
                "bound_theorem4",
                "bound_sdpga",
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
        Ok(RunRecord { rows })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn last(&self) -> Option<&RunRow> {
        self.rows.last()
    }
}

/// Ergodic metrics of `x̄ᵗ = (1/t)Σ_{k=1}^t xᵏ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicRow {
    pub round: usize,
    pub f: f64,
    pub abs_gap: Option<f64>,
    /// `(Σ_E ‖x̄ᵢ − x̄ⱼ‖²)^{1/2}`.
    pub edge_consensus: f64,
    /// `‖(Ω ⊗ I)x̄‖`.
    pub laplacian_consensus: f64,
    /// `‖(W ⊗ I)x̄‖` when a communication matrix is attached.
    pub w_consensus: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundSlot {
    Dpga,
    DpgaW,
    Sdpga,
}

/// Global metrics, computed between rounds from broadcast iterates only.
#[derive(Debug)]
pub struct Observer {
    graph: Graph,
    objectives: Vec<SharedObjective>,
    f_star: Option<f64>,
    bounds: Vec<(BoundSlot, BoundCurve)>,
    laplacian: Array2<f64>,
    w: Option<Array2<f64>>,
    sums: Option<Vec<Array1<f64>>>,
    count: usize,
}

impl Observer {
    pub fn new(graph: &Graph, objectives: &[SharedObjective], f_star: Option<f64>) -> Self {
        Observer {
            laplacian: graph.laplacian(),
            graph: graph.clone(),
            objectives: objectives.to_vec(),
            f_star,
            bounds: Vec::new(),
            w: None,
            sums: None,
            count: 0,
        }
    }

    pub fn with_bound(mut self, slot: BoundSlot, curve: BoundCurve) -> Self {
        self.bounds.push((slot, curve));
        self
    }

    pub fn with_communication_matrix(mut self, w: &CommunicationMatrix) -> Self {
        self.w = Some(w.matrix().clone());
        self
    }

    pub fn objective(&self, x: &[Array1<f64>]) -> f64 {
        self.objectives.iter().zip(x).map(|(o, xi)| o.value(xi.view())).sum()
    }

    fn bound(&self, slot: BoundSlot, t: usize) -> Option<f64> {
        if t == 0 {
            return None;
        }
        self.bounds.iter().find(|(s, _)| *s == slot).map(|(_, c)| {
            let (a, b) = c.eval(t);
            a.max(b)
        })
    }

    pub fn row(&self, round: usize, x: &[Array1<f64>], cum_scalars: usize) -> RunRow {
        let f = self.objective(x);
        let max_edge = max_edge_disagreement(&self.graph, x);
        let n = x[0].len() as f64;
        RunRow {
            round,
            f,
            rel_subopt: self.f_star.map(|fs| rel_subopt(f, fs)),
            consensus_violation: max_edge / n.sqrt(),
            max_edge_disagreement: max_edge,
            cum_scalars_per_node: cum_scalars,
            bound_dpga: self.bound(BoundSlot::Dpga, round),
            bound_dpga_w: self.bound(BoundSlot::DpgaW, round),
            bound_sdpga: self.bound(BoundSlot::Sdpga, round),
        }
    }

    fn accumulate(&mut self, x: &[Array1<f64>]) {
        let sums = self.sums.get_or_insert_with(|| x.iter().map(|v| Array1::zeros(v.len())).collect());
        for (s, xi) in sums.iter_mut().zip(x) {
            *s += xi;
        }
        self.count += 1;
    }

    fn ergodic_row(&self, round: usize) -> Option<ErgodicRow> {
        let sums = self.sums.as_ref()?;
        let t = self.count as f64;
        let avg: Vec<Array1<f64>> = sums.iter().map(|s| s / t).collect();
        let f = self.objective(&avg);
        Some(ErgodicRow {
            round,
            f,
            abs_gap: self.f_star.map(|fs| (f - fs).abs()),
            edge_consensus: edge_consensus_norm(&self.graph, &avg),
            laplacian_consensus: kron_apply_norm(&self.laplacian, &avg),
            w_consensus: self.w.as_ref().map(|w| kron_apply_norm(w, &avg)),
        })
    }
}

/// `|F − F*|/|F*|`.
pub fn rel_subopt(f: f64, f_star: f64) -> f64 {
    (f - f_star).abs() / f_star.abs()
}

/// Per-node data shared by every method.
#[derive(Clone, Debug)]
pub struct Instance {
    pub graph: Graph,
    pub objectives: Vec<SharedObjective>,
    pub x0: Vec<Array1<f64>>,
}

#[derive(Clone, Debug)]
pub enum AlgorithmSetup {
    Dpga {
        gammas: Vec<f64>,
        config: DpgaConfig,
    },
    DpgaW {
        w: CommunicationMatrix,
        gammas: Vec<f64>,
        config: DpgaConfig,
    },
    PgExtra {
        /// Defaults to `0.99·2λ_min(W̃)/L_max`.
        step: Option<f64>,
    },
    Admm {
        w: CommunicationMatrix,
        gamma: f64,
    },
    /// Centralized PG-ADMM on the edge formulation, for cross-checks.
    EngineDirect {
        gammas: Vec<f64>,
        rule: StepRule,
    },
}

impl AlgorithmSetup {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            AlgorithmSetup::Dpga { config, .. } if config.sigma > 0.0 => Algorithm::Sdpga,
            AlgorithmSetup::Dpga { .. } => Algorithm::Dpga,
            AlgorithmSetup::DpgaW { config, .. } if config.sigma > 0.0 => Algorithm::SdpgaW,
            AlgorithmSetup::DpgaW { .. } => Algorithm::DpgaW,
            AlgorithmSetup::PgExtra { .. } => Algorithm::PgExtra,
            AlgorithmSetup::Admm { .. } => Algorithm::Admm,
            AlgorithmSetup::EngineDirect { .. } => Algorithm::EngineDirect,
        }
    }

    pub fn build_network(&self, inst: &Instance, parallel: bool) -> Result<Network> {
        fn boxed<T: NodeProgram + 'static>(v: Vec<T>) -> Vec<Box<dyn NodeProgram>> {
            v.into_iter().map(|n| Box::new(n) as Box<dyn NodeProgram>).collect()
        }
        let programs = match self {
            AlgorithmSetup::Dpga { gammas, config } => {
                boxed(dpga::dpga_init(&inst.graph, &inst.objectives, gammas, &inst.x0, *config)?)
            }
            AlgorithmSetup::DpgaW { w, gammas, config } => boxed(dpga_w::dpgaw_init(
                &inst.graph,
                w,
                &inst.objectives,
                gammas,
                &inst.x0,
                None,
                *config,
            )?),
            AlgorithmSetup::PgExtra { step } => {
                let mixing = mixing_pair(&inst.graph)?;
                let c = match step {
                    Some(c) => *c,
                    None => baselines::pg_extra_default_step(&mixing, &inst.objectives)?,
                };
                boxed(baselines::pg_extra_init(&inst.graph, &mixing, &inst.objectives, &inst.x0, c)?)
            }
            AlgorithmSetup::Admm { w, gamma } => {
                boxed(baselines::admm_init(&inst.graph, w, &inst.objectives, *gamma, &inst.x0)?)
            }
            AlgorithmSetup::EngineDirect { .. } => {
                return Err(invalid("engine-direct runs centrally, not on the network"));
            }
        };
        Network::new(inst.graph.clone(), programs, parallel)
    }
}

enum Driver {
    Net(Network),
    Engine {
        problem: BlockProblem,
        plan: StepPlan,
        state: EngineState,
    },
}

impl Driver {
    fn step(&mut self) -> Result<()> {
        match self {
            Driver::Net(net) => net.step(),
            Driver::Engine { problem, plan, state } => engine::pgadmm_step(state, problem, plan),
        }
    }

    fn iterates(&self) -> Vec<Array1<f64>> {
        match self {
            Driver::Net(net) => net.iterates(),
            Driver::Engine { state, .. } => state.x.clone(),
        }
    }

    fn cum_scalars(&self) -> usize {
        match self {
            Driver::Net(net) => net.audit().cumulative_sent(),
            Driver::Engine { .. } => 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub record: RunRecord,
    pub ergodic: Vec<ErgodicRow>,
    pub audit: Option<AuditLog>,
    /// Completed iteration rounds (setup excluded).
    pub rounds: usize,
    /// Both thresholds held at some check round (not necessarily the last).
    pub converged: bool,
    pub final_iterates: Vec<Array1<f64>>,
    pub inner_iterations: Option<usize>,
}

/// Runs `setup` on `inst` until both thresholds hold at a check round or
/// `max_rounds` is reached. Deterministic for a fixed setup.
pub fn run_synchronous(setup: &AlgorithmSetup, inst: &Instance, mut observer: Observer, schedule: &RoundSchedule) -> Result<RunOutcome> {
    schedule.validate()?;
    let mut driver = match setup {
        AlgorithmSetup::EngineDirect { gammas, rule } => {
            let problem = dpga::edge_formulation(&inst.graph, &inst.objectives, gammas)?;
            let plan = StepPlan::for_problem(&problem, *rule)?;
            let y0 = dpga::edge_consensus_y(&inst.graph, gammas, &inst.x0);
            let state = EngineState::new(&problem, &plan, inst.x0.clone(), y0)?;
            Driver::Engine { problem, plan, state }
        }
        _ => Driver::Net(setup.build_network(inst, schedule.parallel)?),
    };
    let mut record = RunRecord::default();
    let mut ergodic = Vec::new();
    let x = driver.iterates();
    record.rows.push(observer.row(0, &x, driver.cum_scalars()));
    let mut converged = false;
    let mut rounds = 0;
    while rounds < schedule.max_rounds {
        driver.step()?;
        rounds += 1;
        let x = driver.iterates();
        if schedule.ergodic {
            observer.accumulate(&x);
            ergodic.extend(observer.ergodic_row(rounds));
        }
        if rounds % schedule.check_every == 0 || rounds == schedule.max_rounds {
            let row = observer.row(rounds, &x, driver.cum_scalars());
            let hit = row.rel_subopt.is_some_and(|r| r <= schedule.stop_rel_subopt)
                && row.consensus_violation <= schedule.stop_consensus;
            record.rows.push(row);
            if hit {
                converged = true;
                if schedule.stop_on_threshold {
                    break;
                }
            }
        }
    }
    let (audit, inner) = match &driver {
        Driver::Net(net) => {
            let inner: Option<usize> = net.nodes().iter().map(|n| n.inner_iterations()).sum();
            (Some(net.audit().clone()), inner)
        }
        Driver::Engine { .. } => (None, None),
    };
    Ok(RunOutcome {
        algorithm: setup.algorithm(),
        record,
        ergodic,
        audit,
        rounds,
        converged,
        final_iterates: driver.iterates(),
        inner_iterations: inner,
    })
}

/// Exact oracles for every node, used by helpers that mirror node RNG streams.
pub fn node_oracles(sigma: f64, seed: u64, nodes: usize) -> Result<Vec<NoisyOracle>> {
    (0..nodes).map(|i| NoisyOracle::new(sigma, seed, i as u64)).collect()
}
