//! Winner-takes-all mixture losses.
//!
//! Only the mode closest to the ground truth (`k*`) receives the regression
//! loss. Mode probabilities are trained with cross-entropy against a soft
//! target built from each mode's average displacement; the target is a
//! constant for differentiation.

use alloc::vec::Vec;

use crate::autodiff::{kernels, Graph, Var};
use crate::data::Point;
use crate::decoder::MixtureVars;
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Floor applied to predicted probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub k_star: Vec<usize>,
    pub reg_loss: f64,
    pub cls_loss: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Likelihood {
    #[default]
    Laplace,
    Gaussian,
}

fn sq_dist(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

fn dist(a: Point, b: Point) -> f64 {
    math::sqrt(sq_dist(a, b))
}

/// Index of the mode with the smallest summed squared distance to `truth`.
/// `locs` holds `K * T'` points mode-major. Ties go to the lowest index.
pub fn best_mode(locs: &[Point], truth: &[Point]) -> usize {
    let t = truth.len();
    let mut best = (0, f64::INFINITY);
    for (k, mode) in locs.chunks(t).enumerate() {
        let d: f64 = mode.iter().zip(truth).map(|(&a, &b)| sq_dist(a, b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Laplace negative log-likelihood of one trajectory, averaged over steps
/// and summed over both coordinates.
pub fn laplace_nll(loc: &[Point], scale: &[Point], truth: &[Point]) -> Result<f64> {
    if scale.iter().flatten().any(|&b| !(b > 0.0)) {
        return Err(Error::invalid("Laplace scale", "must be positive"));
    }
    let mut s = 0.0;
    for ((m, b), y) in loc.iter().zip(scale).zip(truth) {
        for d in 0..2 {
            s += math::ln(2.0 * b[d]) + math::abs(y[d] - m[d]) / b[d];
        }
    }
    Ok(s / truth.len() as f64)
}

/// Gaussian counterpart of [`laplace_nll`] with `scale` as standard deviation.
pub fn gaussian_nll(loc: &[Point], scale: &[Point], truth: &[Point]) -> Result<f64> {
    if scale.iter().flatten().any(|&b| !(b > 0.0)) {
        return Err(Error::invalid("Gaussian scale", "must be positive"));
    }
    let half_log_2pi = 0.5 * math::ln(2.0 * core::f64::consts::PI);
    let mut s = 0.0;
    for ((m, b), y) in loc.iter().zip(scale).zip(truth) {
        for d in 0..2 {
            let z = (y[d] - m[d]) / b[d];
            s += half_log_2pi + math::ln(b[d]) + 0.5 * z * z;
        }
    }
    Ok(s / truth.len() as f64)
}

/// `softmax_k(-ADE_k)` over the `K` modes in `locs`.
pub fn soft_target(locs: &[Point], truth: &[Point]) -> Vec<f64> {
    let t = truth.len();
    let mut logits: Vec<f64> = locs
        .chunks(t)
        .map(|mode| {
            -mode.iter().zip(truth).map(|(&a, &b)| dist(a, b)).sum::<f64>() / t as f64
        })
        .collect();
    kernels::softmax_in_place(&mut logits);
    logits
}

/// Cross-entropy `sum_k -target_k * ln(max(pred_k, 1e-12))`.
pub fn cls_loss(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .map(|(&p, &q)| -p * math::ln(q.max(PROB_FLOOR)))
        .sum()
}

pub fn total_loss(reg: f64, cls: f64, cls_weight: f64) -> f64 {
    reg + cls_weight * cls
}

/// Loss node and its breakdown for a batch.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Per-agent winning mode and soft classification target. Both are treated
/// as constants by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub k_star: Vec<usize>,
    /// `[N, K]`
    pub target: Vec<f64>,
}

/// Computes the [`Assignment`] for the current predicted locations.
pub fn assign(
    g: &Graph,
    mix: &MixtureVars,
    truth: &[Point],
    modes: usize,
    pred_len: usize,
) -> Result<Assignment> {
    let n = g.value(mix.probs).rows();
    if truth.len() != n * pred_len || g.value(mix.loc).rows() != n * modes * pred_len {
        return Err(Error::shape("wta_loss", &[truth.len()], &[n, pred_len]));
    }
    let locs: Vec<Point> = g
        .value(mix.loc)
        .data()
        .chunks_exact(2)
        .map(|c| [c[0], c[1]])
        .collect();
    let per_agent = modes * pred_len;
    let mut k_star = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n * modes);
    for a in 0..n {
        let al = &locs[a * per_agent..(a + 1) * per_agent];
        let at = &truth[a * pred_len..(a + 1) * pred_len];
        k_star.push(best_mode(al, at));
        target.extend(soft_target(al, at));
    }
    Ok(Assignment { k_star, target })
}

/// Builds the WTA regression loss plus weighted classification loss.
///
/// `truth` is `[N, T']` in each agent's centred frame; both loss terms are
/// averaged over agents.
pub fn wta_loss(
    g: &mut Graph,
    mix: &MixtureVars,
    truth: &[Point],
    modes: usize,
    pred_len: usize,
    likelihood: Likelihood,
    cls_weight: f64,
) -> Result<LossOutput> {
    let assignment = assign(g, mix, truth, modes, pred_len)?;
    wta_loss_assigned(g, mix, truth, &assignment, modes, pred_len, likelihood, cls_weight)
}

/// [`wta_loss`] with a given assignment, e.g. one frozen for finite
/// differences.
#[allow(clippy::too_many_arguments)]
pub fn wta_loss_assigned(
    g: &mut Graph,
    mix: &MixtureVars,
    truth: &[Point],
    assignment: &Assignment,
    modes: usize,
    pred_len: usize,
    likelihood: Likelihood,
    cls_weight: f64,
) -> Result<LossOutput> {
    let n = g.value(mix.probs).rows();
    if truth.len() != n * pred_len
        || assignment.k_star.len() != n
        || assignment.target.len() != n * modes
    {
        return Err(Error::shape("wta_loss", &[truth.len()], &[n, pred_len]));
    }
    let index: Vec<usize> = assignment
        .k_star
        .iter()
        .enumerate()
        .flat_map(|(a, &k)| (0..pred_len).map(move |t| (a * modes + k) * pred_len + t))
        .collect();
    let k_star = assignment.k_star.clone();
    let target = assignment.target.clone();

    let mu = g.gather_rows(mix.loc, index.clone())?;
    let b = g.gather_rows(mix.scale, index)?;
    let y = g.constant(Tensor::new(
        &[n * pred_len, 2],
        truth.iter().flatten().copied().collect(),
    )?);
    let diff = g.sub(y, mu)?;
    let per_elem = match likelihood {
        Likelihood::Laplace => {
            let a = g.abs(diff);
            let q = g.div(a, b)?;
            let lb = g.log(b);
            let lb = g.add_scalar(lb, core::f64::consts::LN_2);
            g.add(lb, q)?
        }
        Likelihood::Gaussian => {
            let sq = g.mul(diff, diff)?;
            let var = g.mul(b, b)?;
            let q = g.div(sq, var)?;
            let q = g.scale(q, 0.5);
            let lb = g.log(b);
            let lb = g.add_scalar(lb, 0.5 * math::ln(2.0 * core::f64::consts::PI));
            g.add(lb, q)?
        }
    };
    let s = g.sum(per_elem);
    let reg = g.scale(s, 1.0 / (pred_len * n) as f64);

    let tgt = g.constant(Tensor::new(&[n, modes], target)?);
    let clamped = g.clamp_min(mix.probs, PROB_FLOOR);
    let logp = g.log(clamped);
    let prod = g.mul(tgt, logp)?;
    let s = g.sum(prod);
    let cls = g.scale(s, -1.0 / n as f64);

    let reg_v = g.value(reg).data()[0];
    let cls_v = g.value(cls).data()[0];
    let total = if cls_weight == 0.0 {
        reg
    } else {
        let w = g.scale(cls, cls_weight);
        g.add(reg, w)?
    };
    let total_v = g.value(total).data()[0];
    if !total_v.is_finite() {
        return Err(Error::NonFinite { context: "loss" });
    }
    Ok(LossOutput {
        total,
        breakdown: LossBreakdown {
            k_star,
            reg_loss: reg_v,
            cls_loss: cls_v,
            total: total_v,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        math::abs(a - b) <= tol
    }

    #[test]
    fn best_mode_prefers_exact_then_lowest_index() {
        let truth = [[1.0, 1.0], [2.0, 2.0]];
        let locs = [[1.0, 1.0], [2.0, 2.0], [1.5, 1.0], [2.0, 2.5]];
        assert_eq!(best_mode(&locs, &truth), 0);
        let same = [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        assert_eq!(best_mode(&same, &truth), 0);
    }

    #[test]
    fn best_mode_of_three_distances() {
        // squared distances 5, 2, 9 over a single step
        let truth = [[0.0, 0.0]];
        let locs = [[1.0, 2.0], [1.0, 1.0], [0.0, 3.0]];
        assert_eq!(best_mode(&locs, &truth), 1);
    }

    #[test]
    fn laplace_closed_forms() {
        let truth = vec![[0.5, -1.0]; 12];
        let ones = vec![[1.0, 1.0]; 12];
        let v = laplace_nll(&truth, &ones, &truth).unwrap();
        assert!(close(v, 2.0 * core::f64::consts::LN_2, 1e-12));
        let shifted: Vec<Point> = truth.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        let v = laplace_nll(&shifted, &ones, &truth).unwrap();
        assert!(close(v, 2.0 * core::f64::consts::LN_2 + 1.0, 1e-12));
        assert!(laplace_nll(&truth, &[[0.0, 1.0]; 12], &truth).is_err());
    }

    #[test]
    fn soft_target_cases() {
        let truth = [[0.0, 0.0]];
        let t = soft_target(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]], &truth);
        assert!(t.iter().all(|&p| close(p, 1.0 / 3.0, 1e-15)));
        let t = soft_target(&[[0.0, 0.0], [core::f64::consts::LN_2, 0.0]], &truth);
        assert!(close(t[0], 2.0 / 3.0, 1e-15) && close(t[1], 1.0 / 3.0, 1e-15));
        let t = soft_target(&[[0.0, 0.0], [1e6, 0.0]], &truth);
        assert_eq!(t[0], 1.0);
    }

    #[test]
    fn cls_loss_cases() {
        let u = [0.25; 4];
        assert!(close(cls_loss(&u, &u), core::f64::consts::LN_2 * 2.0, 1e-12));
        assert_eq!(cls_loss(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn total_loss_weights() {
        assert_eq!(total_loss(1.0, 0.5, 1.0), 1.5);
        assert_eq!(total_loss(1.0, 0.5, 0.0), 1.0);
    }
}
