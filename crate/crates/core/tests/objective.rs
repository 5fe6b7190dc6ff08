mod common;

use std::sync::Arc;

use decopt::linalg::norm;
use decopt::objective::*;
use decopt::reference::prox_bruteforce;
use decopt::Error;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use common::{gaussian_mat, gaussian_vec, max_abs_diff, random_objective, rng};

#[test]
fn huber_examples() {
    let (v, g) = huber_value_grad(array![0.0, 0.0].view(), 1.0).unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(g, array![0.0, 0.0]);
    let (v, g) = huber_value_grad(array![2.0].view(), 1.0).unwrap();
    assert!((v - 1.5).abs() < 1e-15);
    assert_eq!(g, array![1.0]);
    let (v, g) = huber_value_grad(array![0.3].view(), 1.0).unwrap();
    assert!((v - 0.045).abs() < 1e-15);
    assert!((g[0] - 0.3).abs() < 1e-15);
}

#[test]
fn huber_matches_support_function_form() {
    // h(y) = max_{|z| ≤ δ} zy − z²/2, maximized on a fine grid.
    let mut r = rng(1);
    for _ in 0..50 {
        let y: f64 = r.gen_range(-4.0..4.0);
        let delta: f64 = r.gen_range(0.2..2.0);
        let grid = (0..=20000).map(|k| -delta + 2.0 * delta * k as f64 / 20000.0);
        let best = grid.map(|z| z * y - 0.5 * z * z).fold(f64::MIN, f64::max);
        let (v, _) = huber_value_grad(array![y].view(), delta).unwrap();
        assert!((v - best).abs() < 1e-6);
    }
}

#[test]
fn huber_rejects_bad_input() {
    assert!(huber_value_grad(array![f64::NAN].view(), 1.0).is_err());
    assert!(huber_value_grad(array![1.0].view(), 0.0).is_err());
}

#[test]
fn prox_examples() {
    let one = GroupPartition::contiguous(2, 1).unwrap();
    let singles = GroupPartition::contiguous(2, 2).unwrap();
    let p = prox_sparse_group(array![0.0, 0.0].view(), 1.0, 1.0, 1.0, &one).unwrap();
    assert_eq!(p, array![0.0, 0.0]);
    let p = prox_sparse_group(array![2.0, -0.5].view(), 1.0, 1.0, 0.0, &singles).unwrap();
    assert_eq!(p, array![1.0, 0.0]);
    let bf = prox_bruteforce(array![2.0, -0.5].view(), 1.0, 1.0, 0.0, &singles, 1e-12).unwrap();
    assert!(max_abs_diff(&p, &bf) < 1e-6);
    let p = prox_sparse_group(array![3.0, 4.0].view(), 1.0, 0.0, 1.0, &one).unwrap();
    assert!(max_abs_diff(&p, &array![2.4, 3.2]) < 1e-15);
    let bf = prox_bruteforce(array![3.0, 4.0].view(), 1.0, 0.0, 1.0, &one, 1e-12).unwrap();
    assert!(max_abs_diff(&p, &bf) < 1e-6);
}

#[test]
fn prox_group_tie_maps_to_zero() {
    let one = GroupPartition::contiguous(2, 1).unwrap();
    let p = prox_sparse_group(array![3.0, 4.0].view(), 1.0, 0.0, 5.0, &one).unwrap();
    assert_eq!(p, array![0.0, 0.0]);
}

#[test]
fn prox_rejects_bad_arguments() {
    let part = GroupPartition::contiguous(3, 1).unwrap();
    assert!(prox_sparse_group(array![1.0, 2.0, 3.0].view(), 0.0, 1.0, 1.0, &part).is_err());
    assert!(prox_sparse_group(array![1.0, 2.0, 3.0].view(), 1.0, -1.0, 1.0, &part).is_err());
    assert!(matches!(
        prox_sparse_group(array![1.0, 2.0].view(), 1.0, 1.0, 1.0, &part),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn partition_validation() {
    assert!(GroupPartition::new(3, vec![]).is_err());
    assert!(GroupPartition::new(3, vec![vec![0, 1], vec![]]).is_err());
    assert!(GroupPartition::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
    assert!(GroupPartition::new(3, vec![vec![0, 1]]).is_err());
    assert!(GroupPartition::new(3, vec![vec![0, 3], vec![1, 2]]).is_err());
    let p = GroupPartition::random(4, 5, &mut rng(2)).unwrap();
    assert_eq!(p.dim(), 20);
    assert_eq!(p.len(), 4);
    let mut all: Vec<usize> = p.groups().iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
}

/// `(x̄ − y)/t ∈ ∂ξ(y)` checked group by group.
fn assert_prox_optimal(xbar: &Array1<f64>, y: &Array1<f64>, t: f64, b1: f64, b2: f64, part: &GroupPartition) {
    let v = (xbar - y) / t;
    let tol = 1e-8;
    for g in part.groups() {
        let yn = g.iter().map(|&j| y[j] * y[j]).sum::<f64>().sqrt();
        if yn > 0.0 {
            for &j in g {
                let rest = v[j] - b2 * y[j] / yn;
                if y[j] != 0.0 {
                    assert!((rest - b1 * y[j].signum()).abs() < tol, "nonzero coordinate {j}");
                } else {
                    assert!(rest.abs() <= b1 + tol, "zero coordinate {j}");
                }
            }
        } else {
            let resid = g.iter().map(|&j| (v[j] - v[j].clamp(-b1, b1)).powi(2)).sum::<f64>().sqrt();
            assert!(resid <= b2 + tol, "zero group");
        }
    }
}

#[test]
fn prox_subgradient_optimality() {
    let mut r = rng(3);
    for _ in 0..500 {
        let n = r.gen_range(2..30);
        let k = r.gen_range(1..=n);
        let part = GroupPartition::contiguous(n, k).unwrap();
        let xbar = gaussian_vec(&mut r, n, 2.0);
        let (t, b1, b2) = (r.gen_range(0.1..2.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.5));
        let y = prox_sparse_group(xbar.view(), t, b1, b2, &part).unwrap();
        assert_prox_optimal(&xbar, &y, t, b1, b2, &part);
    }
}

#[test]
fn node_eval_examples() {
    let part = GroupPartition::contiguous(2, 1).unwrap();
    let obj = NodeObjective::new(Array2::eye(2), Array1::zeros(2), 1.0, 0.0, 0.0, part.clone()).unwrap();
    let e = obj.eval(array![0.5, 0.0].view()).unwrap();
    assert!((e.f - 0.125).abs() < 1e-15);
    assert_eq!(e.grad_f, array![0.5, 0.0]);
    let obj = NodeObjective::new(Array2::eye(2), Array1::zeros(2), 1.0, 0.3, 0.2, part).unwrap();
    assert_eq!(obj.eval(array![0.0, 0.0].view()).unwrap().phi, 0.0);
    assert!(matches!(obj.eval(array![0.0].view()), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn node_value_decomposes() {
    let mut r = rng(4);
    let obj = random_objective(&mut r, 4, 6, 3, 0.2, 0.7);
    let x = gaussian_vec(&mut r, 6, 1.0);
    let e = obj.eval(x.view()).unwrap();
    let resid = obj.a().dot(&x) - obj.b();
    let (h, _) = huber_value_grad(resid.view(), 0.7).unwrap();
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    let grp: f64 = obj
        .partition()
        .groups()
        .iter()
        .map(|g| g.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt())
        .sum();
    assert!((e.f - h).abs() < 1e-12);
    assert!((e.phi - (h + 0.2 * l1 + 0.2 * grp)).abs() < 1e-12);
    assert!((obj.value(x.view()) - e.phi).abs() < 1e-12);
}

fn fd_grad(obj: &NodeObjective, x: &Array1<f64>, h: f64) -> Array1<f64> {
    Array1::from_shape_fn(x.len(), |j| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        (obj.smooth_value(xp.view()) - obj.smooth_value(xm.view())) / (2.0 * h)
    })
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(5);
    let obj = random_objective(&mut r, 4, 6, 2, 0.1, 1.0);
    let mut checked = 0;
    while checked < 200 {
        let x = gaussian_vec(&mut r, 6, 1.0);
        let resid = obj.a().dot(&x) - obj.b();
        if resid.iter().any(|v| (v.abs() - obj.delta()).abs() < 1e-3) {
            continue;
        }
        let g = obj.eval(x.view()).unwrap().grad_f;
        let fd = fd_grad(&obj, &x, 1e-6);
        let rel = norm((&g - &fd).view()) / norm(g.view()).max(1e-12);
        assert!(rel <= 1e-5, "relative error {rel}");
        checked += 1;
    }
}

#[test]
fn lipschitz_is_spectral_norm_squared() {
    let mut r = rng(6);
    for _ in 0..10 {
        let a = gaussian_mat(&mut r, 5, 8, 1.0);
        let obj = NodeObjective::new(a.clone(), Array1::zeros(5), 1.0, 0.0, 0.0, GroupPartition::contiguous(8, 2).unwrap()).unwrap();
        let gram = a.dot(&a.t());
        let top = *decopt::linalg::symmetric_eigenvalues(gram.view()).unwrap().last().unwrap();
        assert!((obj.lipschitz() - top).abs() <= 1e-8 * top);
    }
}

#[test]
fn descent_lemma_holds() {
    let mut r = rng(7);
    let obj = random_objective(&mut r, 6, 10, 5, 0.1, 0.5);
    for _ in 0..1000 {
        let x1 = gaussian_vec(&mut r, 10, 2.0);
        let x2 = gaussian_vec(&mut r, 10, 2.0);
        let d = &x2 - &x1;
        let g = obj.smooth_grad(x1.view());
        let rhs = obj.smooth_value(x1.view()) + g.dot(&d) + 0.5 * obj.lipschitz() * d.dot(&d);
        assert!(obj.smooth_value(x2.view()) <= rhs + 1e-10);
    }
}

#[test]
fn huber_gradient_is_one_lipschitz() {
    let mut r = rng(8);
    for _ in 0..1000 {
        let y1 = gaussian_vec(&mut r, 7, 2.0);
        let y2 = gaussian_vec(&mut r, 7, 2.0);
        let (_, g1) = huber_value_grad(y1.view(), 0.8).unwrap();
        let (_, g2) = huber_value_grad(y2.view(), 0.8).unwrap();
        assert!(norm((&g1 - &g2).view()) <= norm((&y1 - &y2).view()) + 1e-15);
        assert!(g1.iter().all(|v| v.abs() <= 0.8));
    }
}

#[test]
fn least_squares_limit() {
    let mut r = rng(9);
    let a = gaussian_mat(&mut r, 3, 4, 1.0);
    let b = gaussian_vec(&mut r, 3, 5.0);
    let obj = NodeObjective::new(a.clone(), b.clone(), f64::INFINITY, 0.0, 0.0, GroupPartition::contiguous(4, 1).unwrap()).unwrap();
    let x = gaussian_vec(&mut r, 4, 3.0);
    let res = a.dot(&x) - &b;
    assert!((obj.smooth_value(x.view()) - 0.5 * res.dot(&res)).abs() < 1e-12);
    assert!(max_abs_diff(&obj.smooth_grad(x.view()), &a.t().dot(&res)) < 1e-12);
}

#[test]
fn text_round_trip() {
    let mut r = rng(10);
    let obj = random_objective(&mut r, 3, 6, 3, 0.25, 0.5);
    let back = NodeObjective::from_text(&obj.to_text()).unwrap();
    assert_eq!(back.a(), obj.a());
    assert_eq!(back.b(), obj.b());
    assert_eq!(back.partition(), obj.partition());
    assert_eq!((back.delta(), back.beta1(), back.beta2()), (obj.delta(), obj.beta1(), obj.beta2()));
    let broken = obj.to_text().replacen("delta", "delat", 1);
    let err = NodeObjective::from_text(&broken).unwrap_err().to_string();
    assert!(err.contains("line"), "{err}");
}

#[test]
fn oracle_exact_when_sigma_zero() {
    let mut r = rng(11);
    let obj = random_objective(&mut r, 3, 5, 1, 0.1, 1.0);
    let x = gaussian_vec(&mut r, 5, 1.0);
    let exact = obj.eval(x.view()).unwrap().grad_f;
    let mut o = NoisyOracle::new(0.0, 3, 0).unwrap();
    for _ in 0..10 {
        assert_eq!(oracle_grad(obj.as_ref(), &mut o, x.view()), exact);
    }
    assert!(NoisyOracle::new(-1.0, 0, 0).is_err());
    assert!(NoisyOracle::new(f64::NAN, 0, 0).is_err());
}

#[test]
fn oracle_noise_moments() {
    let mut r = rng(12);
    let obj: Arc<NodeObjective> = random_objective(&mut r, 3, 4, 1, 0.1, 1.0);
    let x = gaussian_vec(&mut r, 4, 1.0);
    let exact = obj.smooth_grad(x.view());
    let sigma = 0.1;
    let mut o = NoisyOracle::new(sigma, 99, 3).unwrap();
    let draws = 100_000;
    let mut mean = Array1::<f64>::zeros(4);
    let mut second = 0.0;
    for _ in 0..draws {
        let e = oracle_grad(obj.as_ref(), &mut o, x.view()) - &exact;
        second += e.dot(&e);
        mean += &e;
    }
    mean /= draws as f64;
    second /= draws as f64;
    let tol = 3.0 * sigma / (draws as f64).sqrt();
    assert!(mean.iter().all(|m| m.abs() <= tol), "{mean}");
    assert!(second <= sigma * sigma * 1.05, "{second}");
}

#[test]
fn oracle_streams_differ() {
    let mut a = NoisyOracle::new(1.0, 5, 0).unwrap();
    let mut b = NoisyOracle::new(1.0, 5, 1).unwrap();
    let mut a2 = NoisyOracle::new(1.0, 5, 0).unwrap();
    let z = Array1::zeros(3);
    let da = a.perturb(z.clone());
    assert_ne!(da, b.perturb(z.clone()));
    assert_eq!(da, a2.perturb(z));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prox_is_nonexpansive(
        seed in any::<u64>(),
        n in 2usize..20,
        t in 0.05f64..3.0,
        b1 in 0.0f64..1.0,
        b2 in 0.0f64..1.0,
    ) {
        let mut r = rng(seed);
        let part = GroupPartition::contiguous(n, 1 + (seed as usize) % n).unwrap();
        let x1 = gaussian_vec(&mut r, n, 2.0);
        let x2 = gaussian_vec(&mut r, n, 2.0);
        let p1 = prox_sparse_group(x1.view(), t, b1, b2, &part).unwrap();
        let p2 = prox_sparse_group(x2.view(), t, b1, b2, &part).unwrap();
        prop_assert!(norm((&p1 - &p2).view()) <= norm((&x1 - &x2).view()) + 1e-12);
    }

    #[test]
    fn prox_matches_bruteforce(
        seed in any::<u64>(),
        n in 1usize..25,
        t in 0.05f64..3.0,
        b1 in 0.0f64..1.0,
        b2 in 0.0f64..1.0,
    ) {
        let mut r = rng(seed);
        let part = GroupPartition::contiguous(n, 1 + (seed as usize) % n).unwrap();
        let x = gaussian_vec(&mut r, n, 2.0);
        let p = prox_sparse_group(x.view(), t, b1, b2, &part).unwrap();
        let bf = prox_bruteforce(x.view(), t, b1, b2, &part, 1e-12).unwrap();
        prop_assert!(max_abs_diff(&p, &bf) <= 1e-6);
    }
}
