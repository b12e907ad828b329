//! Plain scalar reference implementations, written with nested loops and
//! `std` float methods only. They share no code with the library beyond
//! reading weights out of a `ParamStore`.

#![allow(dead_code)]

use gatraj_core::nn::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn weight(store: &ParamStore, name: &str) -> Mat {
    let t = &store.entries()[store.find(name).unwrap_or_else(|| panic!("no {name}")).index()].tensor;
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    (0..rows)
        .map(|r| (0..cols).map(|c| t.data()[r * cols + c]).collect())
        .collect()
}

pub fn bias(store: &ParamStore, name: &str) -> Vec<f64> {
    store.entries()[store.find(name).unwrap().index()].tensor.data().to_vec()
}

pub fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x W + b` for one row.
pub fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (j, o) in out.iter_mut().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            *o += xi * w[i][j];
        }
    }
    out
}

/// MLP stored as `{name}.{i}.w` / `{name}.{i}.b` with GELU between layers.
pub fn mlp(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let mut layers = 0;
    while store.find(&format!("{name}.{layers}.w")).is_some() {
        layers += 1;
    }
    assert!(layers > 0, "no layers for {name}");
    let mut h = x.to_vec();
    for l in 0..layers {
        h = affine(
            &h,
            &weight(store, &format!("{name}.{l}.w")),
            &bias(store, &format!("{name}.{l}.b")),
        );
        if l + 1 < layers {
            h = h.into_iter().map(gelu).collect();
        }
    }
    h
}

/// Message passing for `rounds` rounds. Neighbours are every other agent
/// within `d_max` of `x_i`; relative position is `x_i - x_j`.
pub fn refine(
    store: &ParamStore,
    pos: &[[f64; 2]],
    h0: &Mat,
    c0: &Mat,
    d_max: f64,
    rounds: usize,
) -> (Mat, Mat) {
    let n = pos.len();
    let d = h0[0].len();
    let (mut h, mut c) = (h0.clone(), c0.clone());
    for _ in 0..rounds {
        let mut new_c = c.clone();
        for i in 0..n {
            let mut scores = Vec::new();
            let mut gated = Vec::new();
            for j in 0..n {
                let rel = [pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]];
                if j == i || (rel[0] * rel[0] + rel[1] * rel[1]).sqrt() > d_max {
                    continue;
                }
                let r = mlp(store, "gcn.phi_r", &rel);
                let cat: Vec<f64> = r.iter().chain(&h[j]).chain(&h[i]).copied().collect();
                let g: Vec<f64> = mlp(store, "gcn.phi_m", &cat).into_iter().map(sigmoid).collect();
                scores.push(mlp(store, "gcn.phi_a", &cat)[0]);
                gated.push((0..d).map(|k| g[k] * h[j][k]).collect::<Vec<f64>>());
            }
            let mut msg = vec![0.0; d];
            if !scores.is_empty() {
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (s, gj) in scores.iter().zip(&gated) {
                    let a = (s - m).exp() / z;
                    for k in 0..d {
                        msg[k] += a * gj[k];
                    }
                }
            }
            let upd = mlp(store, "gcn.phi_mp", &msg);
            for k in 0..d {
                new_c[i][k] = upd[k] + c[i][k];
            }
        }
        c = new_c;
        for i in 0..n {
            for k in 0..d {
                h[i][k] += c[i][k].tanh();
            }
        }
    }
    (h, c)
}

/// Laplace NLL of one trajectory: mean over steps, sum over x and y.
pub fn laplace_nll(mu: &[[f64; 2]], b: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
    let mut total = 0.0;
    for t in 0..y.len() {
        for dim in 0..2 {
            total += (2.0 * b[t][dim]).ln() + (y[t][dim] - mu[t][dim]).abs() / b[t][dim];
        }
    }
    total / y.len() as f64
}

pub fn cls_loss(target: &[f64], pred: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..target.len() {
        s -= target[k] * pred[k].max(1e-12).ln();
    }
    s
}

fn ade(mode: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for t in 0..y.len() {
        s += ((mode[t][0] - y[t][0]).powi(2) + (mode[t][1] - y[t][1]).powi(2)).sqrt();
    }
    s / y.len() as f64
}

/// `pred[agent][mode][t]`, `truth[agent][t]`; returns `(minADE, minFDE)`.
pub fn min_ade_fde(pred: &[Vec<Vec<[f64; 2]>>], truth: &[Vec<[f64; 2]>]) -> (f64, f64) {
    let (mut sa, mut sf) = (0.0, 0.0);
    for (modes, y) in pred.iter().zip(truth) {
        let last = y.len() - 1;
        let mut best_a = f64::INFINITY;
        let mut best_f = f64::INFINITY;
        for m in modes {
            best_a = best_a.min(ade(m, y));
            let f = ((m[last][0] - y[last][0]).powi(2) + (m[last][1] - y[last][1]).powi(2)).sqrt();
            best_f = best_f.min(f);
        }
        sa += best_a;
        sf += best_f;
    }
    (sa / pred.len() as f64, sf / pred.len() as f64)
}

/// Index of the mode with least summed squared error, lowest index on ties.
pub fn best_mode(modes: &[Vec<[f64; 2]>], y: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, m) in modes.iter().enumerate() {
        let mut d = 0.0;
        for t in 0..y.len() {
            d += (m[t][0] - y[t][0]).powi(2) + (m[t][1] - y[t][1]).powi(2);
        }
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// `softmax(-ADE_k)` over modes.
pub fn soft_target(modes: &[Vec<[f64; 2]>], y: &[[f64; 2]]) -> Vec<f64> {
    let neg: Vec<f64> = modes.iter().map(|m| -ade(m, y)).collect();
    let mx = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = neg.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// One LSTM step with gate order input, forget, candidate, output.
pub fn lstm_step(
    w_ih: &Mat,
    w_hh: &Mat,
    b: &[f64],
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let mut gates = affine(x, w_ih, b);
    let rec = affine(h, w_hh, &vec![0.0; 4 * hd]);
    for k in 0..4 * hd {
        gates[k] += rec[k];
    }
    let mut h2 = vec![0.0; hd];
    let mut c2 = vec![0.0; hd];
    for k in 0..hd {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hd + k]);
        let g = gates[2 * hd + k].tanh();
        let o = sigmoid(gates[3 * hd + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
