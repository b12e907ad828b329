//! Library results against the scalar references in `oracle/`.

mod oracle;

use gatraj_core::autodiff::Graph;
use gatraj_core::data::Point;
use gatraj_core::decoder::MixtureVars;
use gatraj_core::interaction::{self, EdgeList, InteractionParams};
use gatraj_core::loss::{self, Likelihood};
use gatraj_core::metrics;
use gatraj_core::nn::{LstmCell, ParamStore};
use gatraj_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 120;

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

fn rand_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.random_range(-scale..scale), rng.random_range(-scale..scale)])
        .collect()
}

fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn refine_matches_reference() {
    let d = 8;
    let mut worst: f64 = 0.0;
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = InteractionParams::new(&mut store, &mut rng, d, 4);
        // perturb the zero biases so they take part in the comparison
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.get_mut(id).data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let n = 1 + (seed as usize % 5);
        let rounds = 1 + (seed as usize % 3);
        let pos = rand_points(&mut rng, n, 7.0);
        let h0 = rand_mat(&mut rng, n, d, 1.0);
        let c0 = rand_mat(&mut rng, n, d, 1.0);

        let mut g = Graph::new();
        let h = g.constant(Tensor::new(&[n, d], flat(&h0)).unwrap());
        let c = g.constant(Tensor::new(&[n, d], flat(&c0)).unwrap());
        let mut edges = EdgeList::default();
        edges.extend_from(&interaction::neighbors(&pos, 10.0), 0);
        let out = interaction::refine(&mut g, &store, &p, h, c, &edges, rounds).unwrap();

        let (rh, rc) = oracle::refine(&store, &pos, &h0, &c0, 10.0, rounds);
        worst = worst
            .max(oracle::max_abs_diff(g.value(out.h_hat).data(), &flat(&rh)))
            .max(oracle::max_abs_diff(g.value(out.c_hat).data(), &flat(&rc)));
    }
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn two_agent_two_round_refine() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    let p = InteractionParams::new(&mut store, &mut rng, 8, 4);
    let pos = [[0.0, 0.0], [3.0, -4.0]];
    let h0 = rand_mat(&mut rng, 2, 8, 1.0);
    let c0 = rand_mat(&mut rng, 2, 8, 1.0);
    let mut g = Graph::new();
    let h = g.constant(Tensor::new(&[2, 8], flat(&h0)).unwrap());
    let c = g.constant(Tensor::new(&[2, 8], flat(&c0)).unwrap());
    let mut edges = EdgeList::default();
    edges.extend_from(&interaction::neighbors(&pos, 10.0), 0);
    assert_eq!(edges.len(), 2);
    let out = interaction::refine(&mut g, &store, &p, h, c, &edges, 2).unwrap();
    assert_eq!(out.rounds_completed, 2);
    let (rh, rc) = oracle::refine(&store, &pos, &h0, &c0, 10.0, 2);
    assert!(oracle::max_abs_diff(g.value(out.h_hat).data(), &flat(&rh)) <= 1e-12);
    assert!(oracle::max_abs_diff(g.value(out.c_hat).data(), &flat(&rc)) <= 1e-12);
}

#[test]
fn laplace_nll_matches_reference() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 1 + seed as usize % 12;
        let mu = rand_points(&mut rng, t, 3.0);
        let y = rand_points(&mut rng, t, 3.0);
        let b: Vec<Point> = (0..t)
            .map(|_| [rng.random_range(0.05..3.0), rng.random_range(0.05..3.0)])
            .collect();
        let got = loss::laplace_nll(&mu, &b, &y).unwrap();
        let want = oracle::laplace_nll(&mu, &b, &y);
        assert!((got - want).abs() <= 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn cls_loss_matches_reference() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1 + seed as usize % 6;
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let target = norm((0..k).map(|_| rng.random_range(0.0..1.0)).collect());
        let mut pred = norm((0..k).map(|_| rng.random_range(0.0..1.0)).collect());
        if seed % 10 == 0 {
            pred[0] = 0.0; // exercises the floor
        }
        let got = loss::cls_loss(&target, &pred);
        let want = oracle::cls_loss(&target, &pred);
        assert!((got - want).abs() <= 1e-12, "seed {seed}: {got} vs {want}");
    }
}

fn nested(flat: &[Point], n: usize, k: usize, t: usize) -> Vec<Vec<Vec<Point>>> {
    (0..n)
        .map(|a| {
            (0..k)
                .map(|m| flat[(a * k + m) * t..(a * k + m + 1) * t].to_vec())
                .collect()
        })
        .collect()
}

#[test]
fn metrics_match_brute_force() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, t) = (1 + seed as usize % 3, 1 + seed as usize % 4, 1 + seed as usize % 12);
        let pred = rand_points(&mut rng, n * k * t, 5.0);
        let truth = rand_points(&mut rng, n * t, 5.0);
        let r = metrics::evaluate(&pred, &truth, k, t);
        let truth_n: Vec<Vec<Point>> = truth.chunks(t).map(<[Point]>::to_vec).collect();
        let (ade, fde) = oracle::min_ade_fde(&nested(&pred, n, k, t), &truth_n);
        assert!((r.min_ade - ade).abs() <= 1e-12, "seed {seed}");
        assert!((r.min_fde - fde).abs() <= 1e-12, "seed {seed}");
        assert_eq!(r.n_agents, n);
    }
}

#[test]
fn two_agents_two_modes_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = rand_points(&mut rng, 2 * 2 * 12, 4.0);
    let truth = rand_points(&mut rng, 2 * 12, 4.0);
    let truth_n: Vec<Vec<Point>> = truth.chunks(12).map(<[Point]>::to_vec).collect();
    let (ade, fde) = oracle::min_ade_fde(&nested(&pred, 2, 2, 12), &truth_n);
    assert!((metrics::min_ade_k(&pred, &truth, 2, 12) - ade).abs() <= 1e-12);
    assert!((metrics::min_fde_k(&pred, &truth, 2, 12) - fde).abs() <= 1e-12);
}

#[test]
fn best_mode_and_soft_target_match_reference() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, t) = (1 + seed as usize % 5, 1 + seed as usize % 12);
        let locs = rand_points(&mut rng, k * t, 2.0);
        let y = rand_points(&mut rng, t, 2.0);
        let modes: Vec<Vec<Point>> = locs.chunks(t).map(<[Point]>::to_vec).collect();
        assert_eq!(loss::best_mode(&locs, &y), oracle::best_mode(&modes, &y));
        let got = loss::soft_target(&locs, &y);
        assert!(oracle::max_abs_diff(&got, &oracle::soft_target(&modes, &y)) <= 1e-12);
    }
}

#[test]
fn batched_wta_loss_matches_reference() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, t) = (1 + seed as usize % 3, 1 + seed as usize % 4, 1 + seed as usize % 6);
        let locs = rand_points(&mut rng, n * k * t, 2.0);
        let scales: Vec<Point> = (0..n * k * t)
            .map(|_| [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)])
            .collect();
        let mut probs: Vec<f64> = (0..n * k).map(|_| rng.random_range(0.05..1.0)).collect();
        for row in probs.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        let truth = rand_points(&mut rng, n * t, 2.0);

        let mut g = Graph::new();
        let fl = |p: &[Point]| p.iter().flatten().copied().collect::<Vec<f64>>();
        let mix = MixtureVars {
            loc: g.constant(Tensor::new(&[n * k * t, 2], fl(&locs)).unwrap()),
            scale: g.constant(Tensor::new(&[n * k * t, 2], fl(&scales)).unwrap()),
            probs: g.constant(Tensor::new(&[n, k], probs.clone()).unwrap()),
            modes: g.constant(Tensor::zeros(&[n * k, 1])),
        };
        let out = loss::wta_loss(&mut g, &mix, &truth, k, t, Likelihood::Laplace, 1.0).unwrap();

        let (mut reg, mut cls) = (0.0, 0.0);
        for a in 0..n {
            let modes: Vec<Vec<Point>> = locs[a * k * t..(a + 1) * k * t]
                .chunks(t)
                .map(<[Point]>::to_vec)
                .collect();
            let y = &truth[a * t..(a + 1) * t];
            let ks = oracle::best_mode(&modes, y);
            assert_eq!(out.breakdown.k_star[a], ks);
            let s = (a * k + ks) * t;
            reg += oracle::laplace_nll(&modes[ks], &scales[s..s + t], y);
            cls += oracle::cls_loss(&oracle::soft_target(&modes, y), &probs[a * k..(a + 1) * k]);
        }
        reg /= n as f64;
        cls /= n as f64;
        assert!((out.breakdown.reg_loss - reg).abs() <= 1e-12, "seed {seed}");
        assert!((out.breakdown.cls_loss - cls).abs() <= 1e-12, "seed {seed}");
        assert!((out.breakdown.total - (reg + cls)).abs() <= 1e-12, "seed {seed}");
    }
}

#[test]
fn lstm_step_matches_reference() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, &mut rng, "cell", 3, 5);
        let x = rand_mat(&mut rng, 2, 3, 1.0);
        let h = rand_mat(&mut rng, 2, 5, 1.0);
        let c = rand_mat(&mut rng, 2, 5, 1.0);
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(&[2, 3], flat(&x)).unwrap());
        let hv = g.constant(Tensor::new(&[2, 5], flat(&h)).unwrap());
        let cv = g.constant(Tensor::new(&[2, 5], flat(&c)).unwrap());
        let (h2, c2) = cell.step(&mut g, &store, xv, hv, cv).unwrap();
        let (wi, wh, b) = (
            oracle::weight(&store, "cell.w_ih"),
            oracle::weight(&store, "cell.w_hh"),
            oracle::bias(&store, "cell.bias"),
        );
        for r in 0..2 {
            let (eh, ec) = oracle::lstm_step(&wi, &wh, &b, &x[r], &h[r], &c[r]);
            assert!(oracle::max_abs_diff(&g.value(h2).data()[r * 5..(r + 1) * 5], &eh) <= 1e-12);
            assert!(oracle::max_abs_diff(&g.value(c2).data()[r * 5..(r + 1) * 5], &ec) <= 1e-12);
        }
    }
}

#[test]
fn lstm_with_zero_weights_halves_the_cell() {
    // all gates sigmoid(0) = 0.5 and candidate tanh(0) = 0
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "cell", 2, 3);
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 2], 7.0));
    let h = g.constant(Tensor::zeros(&[1, 3]));
    let c = g.constant(Tensor::new(&[1, 3], vec![2.0, -4.0, 0.0]).unwrap());
    let (h2, c2) = cell.step(&mut g, &store, x, h, c).unwrap();
    assert_eq!(g.value(c2).data(), &[1.0, -2.0, 0.0]);
    let want: Vec<f64> = [1.0f64, -2.0, 0.0].iter().map(|v| 0.5 * v.tanh()).collect();
    assert!(oracle::max_abs_diff(g.value(h2).data(), &want) <= 1e-15);
}
