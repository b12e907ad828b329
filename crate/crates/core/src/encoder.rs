//! Per-agent temporal encoder.
//!
//! Each agent's observed input sequence (offsets, centred positions or both)
//! goes through a 1-D convolution and a position-wise two-layer MLP, gets the
//! sinusoidal positional encoding added once, passes three pre-norm
//! Transformer encoder blocks with multi-head self-attention over time, and
//! is finally summarised by an LSTM. Rows belonging to different agents are
//! never mixed here.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::math;
use crate::nn::{Conv1d, LayerNorm, Linear, LstmCell, Mlp, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Final encoder outputs for `N` agents.
#[derive(Clone, Copy, Debug)]
pub struct EncoderState {
    /// `[N, D]` last LSTM hidden state.
    pub h: Var,
    /// `[N, D]` last LSTM cell state.
    pub c: Var,
    /// `[N * S, D]` sequence fed to the LSTM (agent-major rows).
    pub sequence_features: Var,
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        ff_width: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid(
                "attention heads",
                alloc::format!("hidden size {dim} not divisible by {heads} heads"),
            ));
        }
        Ok(TransformerBlock {
            norm_attn: LayerNorm::new(store, &alloc::format!("{name}.ln_attn"), dim),
            qkv: Linear::new(store, rng, &alloc::format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(store, rng, &alloc::format!("{name}.proj"), dim, dim),
            norm_ff: LayerNorm::new(store, &alloc::format!("{name}.ln_ff"), dim),
            ff: Mlp::new(store, rng, &alloc::format!("{name}.ff"), &[dim, ff_width, dim]),
            heads,
        })
    }

    /// Returns the block output and the attention node (for inspection).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        seq_len: usize,
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Result<(Var, Var)> {
        let n = self.norm_attn.forward(g, store, x)?;
        let qkv = self.qkv.forward(g, store, n)?;
        let att = g.attention(qkv, seq_len, self.heads)?;
        let mut a = self.proj.forward(g, store, att)?;
        if let Some((rng, p)) = dropout.as_mut() {
            a = g.dropout(a, *p, *rng);
        }
        let x = g.add(x, a)?;
        let n = self.norm_ff.forward(g, store, x)?;
        let mut f = self.ff.forward(g, store, n)?;
        if let Some((rng, p)) = dropout.as_mut() {
            f = g.dropout(f, *p, *rng);
        }
        Ok((g.add(x, f)?, att))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub conv: Conv1d,
    pub mlp: Mlp,
    /// Empty when self-attention is ablated.
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: Option<LayerNorm>,
    pub lstm: LstmCell,
    pub hidden: usize,
}

impl EncoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        input_channels: usize,
        hidden: usize,
        kernel: usize,
        blocks: usize,
        heads: usize,
        ff_width: usize,
    ) -> Result<Self> {
        let conv = Conv1d::new(store, rng, "enc.conv", input_channels, hidden, kernel);
        let mlp = Mlp::new(store, rng, "enc.mlp", &[hidden, hidden, hidden]);
        let blocks = (0..blocks)
            .map(|b| {
                TransformerBlock::new(
                    store,
                    rng,
                    &alloc::format!("enc.block{b}"),
                    hidden,
                    ff_width,
                    heads,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = (!blocks.is_empty()).then(|| LayerNorm::new(store, "enc.ln_out", hidden));
        let lstm = LstmCell::new(store, rng, "enc.lstm", hidden, hidden);
        Ok(EncoderParams {
            conv,
            mlp,
            blocks,
            final_norm,
            lstm,
            hidden,
        })
    }
}

/// Conv1D along time followed by the position-wise MLP.
///
/// `input` is `[N * S, C]` with agent-major rows; the output is `[N * S, D]`.
pub fn embed(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    input: Var,
    seq_len: usize,
) -> Result<Var> {
    if seq_len < 1 {
        return Err(Error::invalid(
            "observed length",
            "need at least two observed steps",
        ));
    }
    let x = p.conv.forward(g, store, input, seq_len)?;
    let x = g.gelu(x);
    p.mlp.forward(g, store, x)
}

/// Sinusoidal encoding: `PE[pos, 2i] = sin(pos / 10000^(2i/D))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/D))`.
pub fn positional_encoding(length: usize, dim: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(2) {
        return Err(Error::invalid(
            "positional encoding width",
            alloc::format!("{dim} is odd"),
        ));
    }
    let mut data = vec![0.0; length * dim];
    for pos in 0..length {
        for i in 0..dim / 2 {
            let angle = pos as f64 / math::pow(10000.0, (2 * i) as f64 / dim as f64);
            data[pos * dim + 2 * i] = math::sin(angle);
            data[pos * dim + 2 * i + 1] = math::cos(angle);
        }
    }
    Tensor::new(&[length, dim], data)
}

/// Encoder output plus the attention nodes of each block.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub state: EncoderState,
    pub attention: Vec<Var>,
}

/// Runs the encoder over `n_agents` sequences of length `seq_len`.
pub fn encode(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    input: Var,
    n_agents: usize,
    seq_len: usize,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<EncoderTrace> {
    let rows = g.value(input).rows();
    if rows != n_agents * seq_len {
        return Err(Error::shape(
            "encode",
            g.shape(input),
            &[n_agents * seq_len],
        ));
    }
    let mut x = embed(g, store, p, input, seq_len)?;

    let pe = positional_encoding(seq_len, p.hidden)?;
    let mut tiled = Vec::with_capacity(rows * p.hidden);
    for _ in 0..n_agents {
        tiled.extend_from_slice(pe.data());
    }
    let pe = g.constant(Tensor::new(&[rows, p.hidden], tiled)?);
    x = g.add(x, pe)?;

    let mut attention = Vec::with_capacity(p.blocks.len());
    for block in &p.blocks {
        let d = dropout.as_mut().map(|(r, q)| (&mut **r, *q));
        let (y, att) = block.forward(g, store, x, seq_len, d)?;
        x = y;
        attention.push(att);
    }
    if let Some(norm) = &p.final_norm {
        x = norm.forward(g, store, x)?;
    }

    let xp = p.lstm.project_input(g, store, x)?;
    let mut h = g.constant(Tensor::zeros(&[n_agents, p.hidden]));
    let mut c = g.constant(Tensor::zeros(&[n_agents, p.hidden]));
    for s in 0..seq_len {
        let idx = (0..n_agents).map(|m| m * seq_len + s).collect();
        let xs = g.gather_rows(xp, idx)?;
        (h, c) = p.lstm.step_projected(g, store, xs, h, c)?;
    }
    Ok(EncoderTrace {
        state: EncoderState {
            h,
            c,
            sequence_features: x,
        },
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn positional_encoding_first_row_alternates() {
        let pe = positional_encoding(4, 8).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn positional_encoding_rejects_odd_width() {
        assert!(positional_encoding(3, 7).is_err());
    }

    #[test]
    fn block_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(TransformerBlock::new(&mut store, &mut rng, "b", 60, 16, 8).is_err());
    }

    #[test]
    fn embed_of_zero_offsets_with_zero_bias_is_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::new(&mut store, &mut rng, 2, 64, 3, 3, 8, 128).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2 * 7, 2]));
        let y = embed(&mut g, &store, &p, x, 7).unwrap();
        assert_eq!(g.shape(y), &[14, 64]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
