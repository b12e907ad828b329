//! Laplace mixture decoder.
//!
//! The fused agent state `[h, h_hat, c_hat]` is projected to `K` mode
//! embeddings, mode probabilities are scored from those embeddings, an LSTM
//! (or a per-step MLP in the ablation) unrolls each mode over the prediction
//! horizon, and two linear heads emit per-step locations and scales.
//!
//! Internally mode embeddings are laid out agent-major: row `n * K + k`
//! holds mode `k` of agent `n`.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::Point;
use crate::nn::{Linear, LstmCell, Mlp, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Lower bound added to every predicted scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub project: Mlp,
    pub prob: Mlp,
    pub lstm: Option<LstmCell>,
    pub step_mlp: Option<Mlp>,
    pub loc: Linear,
    pub scale: Linear,
    pub hidden: usize,
    pub modes: usize,
    pub pred_len: usize,
}

impl DecoderParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        hidden: usize,
        modes: usize,
        pred_len: usize,
        mlp_decoder: bool,
    ) -> Result<Self> {
        if modes < 1 {
            return Err(Error::invalid("mode count", "K must be >= 1"));
        }
        let project = Mlp::new(store, rng, "dec.project", &[3 * hidden, hidden, modes * hidden]);
        let prob = Mlp::new(store, rng, "dec.prob", &[hidden, hidden, 1]);
        let (lstm, step_mlp) = if mlp_decoder {
            let m = Mlp::new(store, rng, "dec.steps", &[hidden, hidden, pred_len * hidden]);
            (None, Some(m))
        } else {
            (Some(LstmCell::new(store, rng, "dec.lstm", hidden, hidden)), None)
        };
        let loc = Linear::new(store, rng, "dec.loc", hidden, 2);
        let scale = Linear::new(store, rng, "dec.scale", hidden, 2);
        Ok(DecoderParams {
            project,
            prob,
            lstm,
            step_mlp,
            loc,
            scale,
            hidden,
            modes,
            pred_len,
        })
    }
}

/// Concatenates `(h, h_hat, c_hat)` and maps each agent to `K` mode
/// embeddings. Returns `[N * K, D]`.
pub fn mode_project(
    g: &mut Graph,
    store: &ParamStore,
    p: &DecoderParams,
    h: Var,
    h_hat: Var,
    c_hat: Var,
) -> Result<Var> {
    let fused = g.concat_cols(&[h, h_hat, c_hat])?;
    let z = p.project.forward(g, store, fused)?;
    let n = g.value(z).rows();
    g.reshape(z, &[n * p.modes, p.hidden])
}

/// Mode probabilities `[N, K]` from the mode embeddings.
pub fn mode_probs(g: &mut Graph, store: &ParamStore, p: &DecoderParams, z: Var) -> Result<Var> {
    let logits = p.prob.forward(g, store, z)?;
    let rows = g.value(z).rows();
    let logits = g.reshape(logits, &[rows / p.modes, p.modes])?;
    g.softmax(logits)
}

/// Unrolls every mode embedding over `pred_len` steps. Returns
/// `[N * K * T', D]` rows ordered (agent, mode, step).
pub fn unroll(g: &mut Graph, store: &ParamStore, p: &DecoderParams, z: Var) -> Result<Var> {
    let rows = g.value(z).rows();
    let d = p.hidden;
    if let Some(mlp) = &p.step_mlp {
        let y = mlp.forward(g, store, z)?;
        return g.reshape(y, &[rows * p.pred_len, d]);
    }
    let lstm = p.lstm.as_ref().expect("decoder has an LSTM or a step MLP");
    let xp = lstm.project_input(g, store, z)?;
    let mut h = g.constant(Tensor::zeros(&[rows, d]));
    let mut c = g.constant(Tensor::zeros(&[rows, d]));
    let mut steps = Vec::with_capacity(p.pred_len);
    for _ in 0..p.pred_len {
        (h, c) = lstm.step_projected(g, store, xp, h, c)?;
        steps.push(h);
    }
    let seq = g.concat_cols(&steps)?;
    g.reshape(seq, &[rows * p.pred_len, d])
}

/// Location and scale heads; scale is `softplus(raw) + 1e-6`.
pub fn heads(g: &mut Graph, store: &ParamStore, p: &DecoderParams, hseq: Var) -> Result<(Var, Var)> {
    let loc = p.loc.forward(g, store, hseq)?;
    let raw = p.scale.forward(g, store, hseq)?;
    let sp = g.softplus(raw);
    let scale = g.add_scalar(sp, SCALE_FLOOR);
    Ok((loc, scale))
}

/// Graph nodes of a decoded mixture.
#[derive(Clone, Copy, Debug)]
pub struct MixtureVars {
    /// `[N * K * T', 2]`
    pub loc: Var,
    /// `[N * K * T', 2]`, strictly positive.
    pub scale: Var,
    /// `[N, K]`
    pub probs: Var,
    /// `[N * K, D]`
    pub modes: Var,
}

pub fn decode(
    g: &mut Graph,
    store: &ParamStore,
    p: &DecoderParams,
    h: Var,
    h_hat: Var,
    c_hat: Var,
) -> Result<MixtureVars> {
    let z = mode_project(g, store, p, h, h_hat, c_hat)?;
    let probs = mode_probs(g, store, p, z)?;
    let hseq = unroll(g, store, p, z)?;
    let (loc, scale) = heads(g, store, p, hseq)?;
    Ok(MixtureVars {
        loc,
        scale,
        probs,
        modes: z,
    })
}

/// Decoded prediction for `N` agents, in each agent's centred frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceMixture {
    pub n_agents: usize,
    pub modes: usize,
    pub pred_len: usize,
    /// `[N, K, T']`
    pub locations: Vec<Point>,
    /// `[N, K, T']`
    pub scales: Vec<Point>,
    /// `[N, K]`
    pub mode_probs: Vec<f64>,
}

fn points(data: &[f64]) -> Vec<Point> {
    data.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

impl LaplaceMixture {
    pub fn from_graph(g: &Graph, vars: &MixtureVars, modes: usize, pred_len: usize) -> Self {
        let probs = g.value(vars.probs).data().to_vec();
        LaplaceMixture {
            n_agents: probs.len() / modes,
            modes,
            pred_len,
            locations: points(g.value(vars.loc).data()),
            scales: points(g.value(vars.scale).data()),
            mode_probs: probs,
        }
    }

    fn idx(&self, agent: usize, mode: usize, t: usize) -> usize {
        (agent * self.modes + mode) * self.pred_len + t
    }

    pub fn location(&self, agent: usize, mode: usize, t: usize) -> Point {
        self.locations[self.idx(agent, mode, t)]
    }

    pub fn scale(&self, agent: usize, mode: usize, t: usize) -> Point {
        self.scales[self.idx(agent, mode, t)]
    }

    pub fn prob(&self, agent: usize, mode: usize) -> f64 {
        self.mode_probs[agent * self.modes + mode]
    }

    /// All `K * T'` locations of one agent.
    pub fn agent_locations(&self, agent: usize) -> &[Point] {
        let n = self.modes * self.pred_len;
        &self.locations[agent * n..(agent + 1) * n]
    }

    /// Locations moved to world coordinates by adding each agent's origin.
    pub fn to_world(&self, origins: &[Point]) -> Vec<Point> {
        let per_agent = self.modes * self.pred_len;
        self.locations
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let o = origins[i / per_agent];
                [p[0] + o[0], p[1] + o[1]]
            })
            .collect()
    }

    /// Keeps the `k` most probable modes per agent, in descending
    /// probability (ties keep the lower index first). Probabilities are not
    /// renormalized.
    pub fn top_k(&self, k: usize) -> Result<Self> {
        if k < 1 || k > self.modes {
            return Err(Error::invalid(
                "mode count",
                alloc::format!("requested {k} of {} trained modes", self.modes),
            ));
        }
        let mut out = LaplaceMixture {
            n_agents: self.n_agents,
            modes: k,
            pred_len: self.pred_len,
            locations: Vec::with_capacity(self.n_agents * k * self.pred_len),
            scales: Vec::with_capacity(self.n_agents * k * self.pred_len),
            mode_probs: Vec::with_capacity(self.n_agents * k),
        };
        for a in 0..self.n_agents {
            let mut order: Vec<usize> = (0..self.modes).collect();
            order.sort_by(|&x, &y| self.prob(a, y).total_cmp(&self.prob(a, x)).then(x.cmp(&y)));
            for &m in &order[..k] {
                let s = self.idx(a, m, 0);
                out.locations
                    .extend_from_slice(&self.locations[s..s + self.pred_len]);
                out.scales.extend_from_slice(&self.scales[s..s + self.pred_len]);
                out.mode_probs.push(self.prob(a, m));
            }
        }
        Ok(out)
    }
}
