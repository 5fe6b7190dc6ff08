#![allow(dead_code)]

pub mod oracles;

use std::sync::Arc;

use decopt::objective::{GroupPartition, NodeObjective, SharedObjective};
use decopt::simnet::{Message, NodeProgram};
use decopt::topology::{build_topology, Graph, TopologyKind};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_mat(rng: &mut impl Rng, m: usize, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((m, n), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random Huber/sparse-group objective with `k` contiguous groups.
pub fn random_objective(rng: &mut impl Rng, m: usize, n: usize, k: usize, beta: f64, delta: f64) -> Arc<NodeObjective> {
    let a = gaussian_mat(rng, m, n, 1.0);
    let b = gaussian_vec(rng, m, 1.0);
    Arc::new(NodeObjective::new(a, b, delta, beta, beta, GroupPartition::contiguous(n, k).unwrap()).unwrap())
}

pub struct SmallInstance {
    pub graph: Graph,
    pub objectives: Vec<Arc<NodeObjective>>,
    pub x0: Vec<Array1<f64>>,
}

impl SmallInstance {
    pub fn shared(&self) -> Vec<SharedObjective> {
        self.objectives.iter().map(|o| o.clone() as SharedObjective).collect()
    }
}

/// `nodes` random objectives on an `n`-dimensional variable and random `x⁰`.
pub fn small_instance(seed: u64, kind: TopologyKind, nodes: usize, n: usize) -> SmallInstance {
    let mut r = rng(seed);
    let graph = build_topology(kind, nodes, 0, seed).unwrap();
    let objectives = (0..nodes).map(|_| random_objective(&mut r, 3, n, 2, 0.1, 0.5)).collect();
    let x0 = (0..nodes).map(|_| gaussian_vec(&mut r, n, 1.0)).collect();
    SmallInstance { graph, objectives, x0 }
}

pub fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff_all(a: &[Array1<f64>], b: &[Array1<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

pub fn max_abs_diff_mat(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One synchronous exchange without the simulator, so tests can inspect the
/// concrete node state between rounds.
pub fn exchange<P: NodeProgram>(graph: &Graph, nodes: &mut [P], round: usize, phase: usize) {
    let payloads: Vec<Arc<Array1<f64>>> = nodes.iter_mut().map(|n| Arc::new(n.emit(round, phase).unwrap())).collect();
    for (i, node) in nodes.iter_mut().enumerate() {
        let inbox: Vec<Message> = graph
            .neighbors(i)
            .iter()
            .map(|&j| Message {
                sender: j,
                round,
                phase,
                payload: payloads[j].clone(),
            })
            .collect();
        node.absorb(round, phase, &inbox).unwrap();
    }
}

pub fn setup_nodes<P: NodeProgram>(graph: &Graph, nodes: &mut [P]) {
    for phase in 0..nodes[0].setup_phases() {
        exchange(graph, nodes, 0, phase);
    }
}

pub fn run_round<P: NodeProgram>(graph: &Graph, nodes: &mut [P], round: usize) {
    for phase in 0..nodes[0].phases() {
        exchange(graph, nodes, round, phase);
    }
}

pub fn iterates<P: NodeProgram>(nodes: &[P]) -> Vec<Array1<f64>> {
    nodes.iter().map(|n| n.iterate().to_owned()).collect()
}
