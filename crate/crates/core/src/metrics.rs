//! Best-of-K displacement errors.
//!
//! The minimum over modes is taken per agent, then averaged over agents.

use crate::data::Point;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub modes: usize,
    pub n_agents: usize,
}

fn dist(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    math::sqrt(dx * dx + dy * dy)
}

/// Per-agent `(min_k ADE, min_k FDE)` for one agent's `K * T'` predictions.
pub fn agent_errors(pred: &[Point], truth: &[Point]) -> (f64, f64) {
    let t = truth.len();
    let mut ade = f64::INFINITY;
    let mut fde = f64::INFINITY;
    for mode in pred.chunks(t) {
        let a = mode.iter().zip(truth).map(|(&p, &y)| dist(p, y)).sum::<f64>() / t as f64;
        ade = ade.min(a);
        fde = fde.min(dist(mode[t - 1], truth[t - 1]));
    }
    (ade, fde)
}

/// `pred` is `[N, K, T']`, `truth` is `[N, T']`.
pub fn min_ade_k(pred: &[Point], truth: &[Point], modes: usize, pred_len: usize) -> f64 {
    evaluate(pred, truth, modes, pred_len).min_ade
}

pub fn min_fde_k(pred: &[Point], truth: &[Point], modes: usize, pred_len: usize) -> f64 {
    evaluate(pred, truth, modes, pred_len).min_fde
}

pub fn evaluate(pred: &[Point], truth: &[Point], modes: usize, pred_len: usize) -> MetricReport {
    let mut acc = MetricAccumulator::new(modes);
    acc.add(pred, truth, pred_len);
    acc.report()
}

/// Running agent-weighted average across scenes.
#[derive(Clone, Copy, Debug)]
pub struct MetricAccumulator {
    sum_ade: f64,
    sum_fde: f64,
    n_agents: usize,
    modes: usize,
}

impl MetricAccumulator {
    pub fn new(modes: usize) -> Self {
        MetricAccumulator {
            sum_ade: 0.0,
            sum_fde: 0.0,
            n_agents: 0,
            modes,
        }
    }

    pub fn add(&mut self, pred: &[Point], truth: &[Point], pred_len: usize) {
        let per_agent = self.modes * pred_len;
        for (p, y) in pred.chunks(per_agent).zip(truth.chunks(pred_len)) {
            let (a, f) = agent_errors(p, y);
            self.sum_ade += a;
            self.sum_fde += f;
            self.n_agents += 1;
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.sum_ade += other.sum_ade;
        self.sum_fde += other.sum_fde;
        self.n_agents += other.n_agents;
    }

    pub fn report(&self) -> MetricReport {
        let n = self.n_agents.max(1) as f64;
        MetricReport {
            min_ade: self.sum_ade / n,
            min_fde: self.sum_fde / n,
            modes: self.modes,
            n_agents: self.n_agents,
        }
    }
}
