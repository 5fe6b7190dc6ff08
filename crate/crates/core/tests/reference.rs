mod common;

use std::cell::Cell;
use std::sync::Arc;

use decopt::bench::{generate_problem, ProblemSpec};
use decopt::dpga::{gamma_heuristic, DpgaConfig};
use decopt::linalg::{norm, spectral_norm_sq};
use decopt::objective::{prox_sparse_group, CompositeObjective, GroupPartition, NodeObjective};
use decopt::reference::*;
use decopt::simnet::{run_synchronous, AlgorithmSetup, Instance, Observer, RoundSchedule};
use decopt::topology::{build_topology, TopologyKind};
use decopt::Error;
use nalgebra::{DMatrix, DVector};
use ndarray::Array1;
use rand::Rng;

use common::*;

fn quadratic_nodes(seed: u64, nodes: usize, n: usize, delta: f64) -> Vec<Arc<NodeObjective>> {
    let mut r = rng(seed);
    (0..nodes)
        .map(|_| {
            let a = gaussian_mat(&mut r, n, n, 1.0);
            let b = gaussian_vec(&mut r, n, 1.0);
            Arc::new(NodeObjective::new(a, b, delta, 0.0, 0.0, GroupPartition::contiguous(n, 1).unwrap()).unwrap())
        })
        .collect()
}

fn normal_equations(objs: &[Arc<NodeObjective>]) -> Vec<f64> {
    let n = objs[0].dim();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for o in objs {
        let a = DMatrix::from_row_iterator(o.a().nrows(), n, o.a().iter().copied());
        let b = DVector::from_iterator(o.b().len(), o.b().iter().copied());
        gram += a.transpose() * &a;
        rhs += a.transpose() * b;
    }
    gram.cholesky().unwrap().solve(&rhs).iter().copied().collect()
}

#[test]
fn quadratic_toy_matches_normal_equations() {
    for (seed, delta) in [(1, f64::INFINITY), (2, 1e6)] {
        let objs = quadratic_nodes(seed, 4, 6, delta);
        let sol = fista_solve(&objs, 1e-13, 1_000_000).unwrap();
        let exact = normal_equations(&objs);
        for (a, b) in sol.x_star.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(sol.certificate <= 1e-13 * sol.f_star.abs().max(1.0));
        let exact_x = Array1::from(exact);
        assert!((sol.f_star - central_value(&objs, exact_x.view())).abs() < 1e-9);
    }
}

#[test]
fn huge_l1_penalty_gives_zero() {
    let mut r = rng(3);
    let objs: Vec<_> = (0..3).map(|_| random_objective(&mut r, 4, 6, 2, 1e4, 1.0)).collect();
    let sol = fista_solve(&objs, 1e-12, 10_000).unwrap();
    assert!(sol.x_star.iter().all(|&v| v == 0.0));
    let zero = Array1::zeros(6);
    let f0: f64 = objs.iter().map(|o| o.smooth_value(zero.view())).sum();
    assert_eq!(sol.f_star, f0);
}

#[test]
fn benchmark_optimum_is_stable_across_restarts() {
    let problem = generate_problem(&ProblemSpec::new(1, 5, 10, 4)).unwrap();
    let base = fista_solve(&problem.objectives, 1e-12, 2_000_000).unwrap();
    let mut r = rng(4);
    for _ in 0..2 {
        let start = gaussian_vec(&mut r, 100, 2.0);
        let again = fista_solve_from(&problem.objectives, start.view(), 1e-12, 2_000_000).unwrap();
        assert!((again.f_star - base.f_star).abs() <= 1e-9 * base.f_star.abs().max(1.0));
    }
}

#[test]
fn node_specific_penalties_are_solved() {
    let problem = generate_problem(&ProblemSpec::new(2, 5, 4, 5)).unwrap();
    let sol = fista_solve(&problem.objectives, 1e-12, 2_000_000).unwrap();
    assert!(sol.certificate <= 1e-12 * sol.f_star.abs().max(1.0));
    let mut r = rng(5);
    let start = gaussian_vec(&mut r, 40, 1.0);
    let again = fista_solve_from(&problem.objectives, start.view(), 1e-12, 2_000_000).unwrap();
    assert!((again.f_star - sol.f_star).abs() <= 1e-9 * sol.f_star.abs().max(1.0));
    let x = sol.x();
    for scale in [1e-2, 1e-4] {
        for _ in 0..200 {
            let z = &x + &gaussian_vec(&mut r, 40, scale);
            assert!(central_value(&problem.objectives, z.view()) >= sol.f_star - 1e-10);
        }
    }
}

#[test]
fn shared_penalty_certificate_recomputed() {
    let problem = generate_problem(&ProblemSpec::new(1, 5, 5, 6)).unwrap();
    let sol = fista_solve(&problem.objectives, 1e-11, 2_000_000).unwrap();
    let x = sol.x();
    // Independent prox-gradient mapping with the Frobenius bound on L.
    let l: f64 = problem.objectives.iter().map(|o| o.a().iter().map(|v| v * v).sum::<f64>()).sum();
    let mut g = Array1::zeros(x.len());
    for o in &problem.objectives {
        g += &o.smooth_grad(x.view());
    }
    let o0 = &problem.objectives[0];
    let nn = problem.objectives.len() as f64;
    let p = prox_sparse_group((&x - &(&g / l)).view(), 1.0 / l, nn * o0.beta1(), nn * o0.beta2(), o0.partition()).unwrap();
    let mapping = l * norm((&x - &p).view());
    // The mapping norm is monotone in the step: a larger L only shrinks it.
    assert!(mapping <= 1e-11 * sol.f_star.abs().max(1.0) * 1.0001, "{mapping:e}");
}

#[test]
fn solver_errors() {
    let objs = quadratic_nodes(7, 3, 5, 1.0);
    assert!(matches!(fista_solve(&objs, 1e-16, 10), Err(Error::NonConvergence { iterations: 10, .. })));
    assert!(fista_solve(&objs, 0.0, 10).is_err());
    assert!(fista_solve(&[], 1e-10, 10).is_err());
    let short = Array1::zeros(4);
    assert!(fista_solve_from(&objs, short.view(), 1e-10, 10).is_err());
    let problem = generate_problem(&ProblemSpec::new(2, 5, 4, 5)).unwrap();
    assert!(matches!(fista_solve(&problem.objectives, 1e-16, 20), Err(Error::NonConvergence { .. })));
}

#[test]
fn bruteforce_prox_examples() {
    let part = GroupPartition::contiguous(6, 2).unwrap();
    let zero = Array1::zeros(6);
    assert!(prox_bruteforce(zero.view(), 0.5, 0.3, 0.7, &part, 1e-12).unwrap().iter().all(|&v| v == 0.0));
    let mut r = rng(8);
    for _ in 0..100 {
        let v = gaussian_vec(&mut r, 6, 2.0);
        let t = r.gen_range(0.1..2.0);
        let b1 = r.gen_range(0.0..1.5);
        let y = prox_bruteforce(v.view(), t, b1, 0.0, &part, 1e-14).unwrap();
        let soft = v.mapv(|e| e.signum() * (e.abs() - t * b1).max(0.0));
        assert!(max_abs_diff(&y, &soft) < 1e-15);
    }
    assert!(prox_bruteforce(zero.view(), 0.0, 0.3, 0.7, &part, 1e-12).is_err());
    assert!(prox_bruteforce(zero.view(), 1.0, -0.3, 0.7, &part, 1e-12).is_err());
    assert!(prox_bruteforce(Array1::zeros(5).view(), 1.0, 0.3, 0.7, &part, 1e-12).is_err());
}

#[test]
fn bruteforce_prox_agrees_with_closed_form() {
    let mut r = rng(9);
    let tol = 1e-12;
    for _ in 0..300 {
        let k = r.gen_range(1..5);
        let part = GroupPartition::contiguous(3 * k, k).unwrap();
        let v = gaussian_vec(&mut r, 3 * k, 1.5);
        let t = r.gen_range(0.05..3.0);
        let (b1, b2) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let brute = prox_bruteforce(v.view(), t, b1, b2, &part, tol).unwrap();
        let closed = prox_sparse_group(v.view(), t, b1, b2, &part).unwrap();
        assert!(norm((&brute - &closed).view()) <= (2.0 * t * tol).sqrt() + 1e-12);
    }
}

#[test]
fn kappas_bound_sampled_subgradients() {
    let problem = generate_problem(&ProblemSpec::new(2, 5, 4, 10)).unwrap();
    let sol = fista_solve(&problem.objectives, 1e-12, 2_000_000).unwrap();
    let x = sol.x();
    assert_eq!(sol.kappas, compute_kappas(&problem.objectives, x.view()));
    let mut r = rng(10);
    for (o, &kappa) in problem.objectives.iter().zip(&sol.kappas) {
        let grad = o.smooth_grad(x.view());
        for _ in 0..500 {
            let mut q = grad.clone();
            for j in 0..x.len() {
                let u = if x[j] != 0.0 { x[j].signum() } else { r.gen_range(-1.0..=1.0) };
                q[j] += o.beta1() * u;
            }
            for g in o.partition().groups() {
                let xg: Array1<f64> = g.iter().map(|&j| x[j]).collect();
                let ng = norm(xg.view());
                let w: Array1<f64> = if ng > 0.0 {
                    xg / ng
                } else {
                    let d = gaussian_vec(&mut r, g.len(), 1.0);
                    let nd = norm(d.view());
                    d * (r.gen_range(0.0..1.0) / nd)
                };
                for (k, &j) in g.iter().enumerate() {
                    q[j] += o.beta2() * w[k];
                }
            }
            assert!(norm(q.view()) <= kappa * (1.0 + 1e-12));
        }
        // Huber gradients are boxed by δ, so ‖∇f‖ ≤ ‖A‖δ√m.
        let a_norm = spectral_norm_sq(o.a().view(), 1e-12).unwrap().sqrt();
        let box_bound = a_norm * o.delta() * (o.a().nrows() as f64).sqrt();
        assert!(norm(grad.view()) <= box_bound * (1.0 + 1e-9));
    }
}

#[test]
fn smooth_kappas_are_gradient_norms() {
    let objs = quadratic_nodes(11, 3, 4, f64::INFINITY);
    let x = Array1::from(vec![0.3, -0.2, 1.0, 0.5]);
    for (o, k) in objs.iter().zip(compute_kappas(&objs, x.view())) {
        assert_eq!(k, norm(o.smooth_grad(x.view()).view()));
    }
}

#[test]
fn optimum_lower_bounds_distributed_runs() {
    let spec = ProblemSpec::new(1, 5, 10, 12);
    let problem = generate_problem(&spec).unwrap();
    let sol = fista_solve(&problem.objectives, 1e-12, 2_000_000).unwrap();
    let graph = build_topology(TopologyKind::Circle, 5, 0, 0).unwrap();
    let inst = Instance {
        graph: graph.clone(),
        objectives: problem.shared(),
        x0: vec![Array1::zeros(spec.dim()); 5],
    };
    let gamma = gamma_heuristic(&graph, 2.6).unwrap();
    let setup = AlgorithmSetup::Dpga {
        gammas: vec![gamma; 5],
        config: DpgaConfig::default(),
    };
    let mut schedule = RoundSchedule::new(1500);
    schedule.stop_on_threshold = false;
    schedule.check_every = 100;
    let out = run_synchronous(&setup, &inst, Observer::new(&graph, &inst.objectives, Some(sol.f_star)), &schedule).unwrap();
    let mean = out.final_iterates.iter().fold(Array1::<f64>::zeros(spec.dim()), |a, v| a + v) / 5.0;
    assert!(central_value(&problem.objectives, mean.view()) >= sol.f_star - 1e-9);
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ReferenceCache::new(dir.path().join("refs"));
    assert!(cache.load("k").unwrap().is_none());
    let objs = quadratic_nodes(13, 2, 3, 1.0);
    let calls = Cell::new(0);
    let solve = || {
        calls.set(calls.get() + 1);
        fista_solve(&objs, 1e-12, 100_000)
    };
    let first = cache.load_or_solve("k", solve).unwrap();
    let second = cache
        .load_or_solve("k", || {
            calls.set(calls.get() + 1);
            fista_solve(&objs, 1e-12, 100_000)
        })
        .unwrap();
    assert_eq!(calls.get(), 1);
    assert_eq!(first, second);
    assert!(cache.path("k").ends_with("refs/k.json"));
    std::fs::write(cache.path("bad"), "{").unwrap();
    assert!(cache.load("bad").is_err());
}
