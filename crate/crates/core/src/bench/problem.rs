//! Planted sparse-group Huber regression instances.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objective::{CompositeObjective, GroupPartition, NodeObjective, SharedObjective};

fn default_groups() -> usize {
    10
}

/// Case 1 shares one group partition across nodes; case 2 draws one per node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub case: u8,
    pub nodes: usize,
    pub group_size: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(case: u8, nodes: usize, group_size: usize, seed: u64) -> Self {
        ProblemSpec {
            case,
            nodes,
            group_size,
            groups: default_groups(),
            seed,
        }
    }

    /// `n = K·n_g`.
    pub fn dim(&self) -> usize {
        self.groups * self.group_size
    }

    /// `mᵢ = n/(2N)`.
    pub fn rows_per_node(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.dim() / (2 * self.nodes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.case != 1 && self.case != 2 {
            return Err(invalid(format!("case must be 1 or 2, got {}", self.case)));
        }
        if self.nodes == 0 || self.group_size == 0 || self.groups == 0 {
            return Err(invalid("nodes, group_size and groups must be positive"));
        }
        if self.dim() % (2 * self.nodes) != 0 {
            return Err(invalid(format!(
                "n/(2N) = {}/{} is not an integer",
                self.dim(),
                2 * self.nodes
            )));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.nodes as f64
    }

    /// Stable identifier used for cache files and output names.
    pub fn key(&self) -> String {
        format!(
            "case{}_N{}_ng{}_K{}_seed{}",
            self.case, self.nodes, self.group_size, self.groups, self.seed
        )
    }
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub objectives: Vec<Arc<NodeObjective>>,
    /// `x̄ⱼ = (−1)ʲ e^{−(j−1)/n_g}`, `j = 1..n`.
    pub planted: Array1<f64>,
    /// `πᵢ ∈ {0, 1}` with `Aᵢ = 0.5^{πᵢ} Āᵢ`.
    pub scale_exponents: Vec<u8>,
}

impl Problem {
    pub fn shared(&self) -> Vec<SharedObjective> {
        self.objectives.iter().map(|o| o.clone() as SharedObjective).collect()
    }

    pub fn lipschitz(&self) -> Vec<f64> {
        self.objectives.iter().map(|o| o.lipschitz()).collect()
    }

    /// `max Lᵢ / min Lᵢ`.
    pub fn lipschitz_ratio(&self) -> f64 {
        let l = self.lipschitz();
        let max = l.iter().copied().fold(f64::MIN, f64::max);
        let min = l.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }
}

pub fn planted_signal(n: usize, group_size: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |k| {
        let j = (k + 1) as f64;
        let sign = if (k + 1) % 2 == 0 { 1.0 } else { -1.0 };
        sign * (-(j - 1.0) / group_size as f64).exp()
    })
}

/// Deterministic in `spec.seed`. Draw order: partition(s), then per node
/// `πᵢ` followed by `Āᵢ` row-major.
pub fn generate_problem(spec: &ProblemSpec) -> Result<Problem> {
    let m = spec.rows_per_node()?;
    let n = spec.dim();
    let beta = spec.beta();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let partitions: Vec<GroupPartition> = match spec.case {
        1 => {
            let p = GroupPartition::random(spec.groups, spec.group_size, &mut rng)?;
            vec![p; spec.nodes]
        }
        _ => (0..spec.nodes)
            .map(|_| GroupPartition::random(spec.groups, spec.group_size, &mut rng))
            .collect::<Result<_>>()?,
    };
    let planted = planted_signal(n, spec.group_size);
    let mut objectives = Vec::with_capacity(spec.nodes);
    let mut scale_exponents = Vec::with_capacity(spec.nodes);
    for part in partitions {
        let pi: u8 = u8::from(rng.gen_bool(0.5));
        let scale = 0.5f64.powi(pi as i32);
        let a = Array2::from_shape_simple_fn((m, n), || scale * rng.sample::<f64, _>(StandardNormal));
        let b = a.dot(&planted);
        objectives.push(Arc::new(NodeObjective::new(a, b, 1.0, beta, beta, part)?));
        scale_exponents.push(pi);
    }
    Ok(Problem {
        spec: *spec,
        objectives,
        planted,
        scale_exponents,
    })
}
