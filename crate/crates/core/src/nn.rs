//! Parameter storage and the small layers the model is assembled from.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::math;
use crate::tensor::Tensor;
use crate::Result;

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

/// Named learnable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..bound))
        .collect::<Vec<_>>();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Glorot-uniform matrix `[fan_in, fan_out]`.
pub fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform(rng, &[fan_in, fan_out], bound)
}

/// Affine map `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = store.add(alloc::format!("{name}.w"), xavier(rng, in_dim, out_dim));
        let b = store.add(alloc::format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Multilayer perceptron with GELU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths including input and output, e.g. `[2, 64, 32]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &alloc::format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i < last {
                x = g.gelu(x);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(alloc::format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(alloc::format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// LSTM cell weights. Gate columns are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / math::sqrt(hidden as f64);
        LstmCell {
            w_ih: store.add(
                alloc::format!("{name}.w_ih"),
                uniform(rng, &[input_dim, 4 * hidden], bound),
            ),
            w_hh: store.add(
                alloc::format!("{name}.w_hh"),
                uniform(rng, &[hidden, 4 * hidden], bound),
            ),
            bias: store.add(
                alloc::format!("{name}.bias"),
                uniform(rng, &[4 * hidden], bound),
            ),
            input_dim,
            hidden,
        }
    }

    /// `x W_ih + b`, which can be computed for a whole sequence at once.
    pub fn project_input(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// One step from an already projected input `[m, 4H]`.
    pub fn step_projected(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x_proj: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let w_hh = g.param(store, self.w_hh);
        let rec = g.matmul(h, w_hh)?;
        let gates = g.add(x_proj, rec)?;
        let hd = self.hidden;
        let i = g.slice_cols(gates, 0, hd)?;
        let f = g.slice_cols(gates, hd, hd)?;
        let cand = g.slice_cols(gates, 2 * hd, hd)?;
        let o = g.slice_cols(gates, 3 * hd, hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Standard LSTM cell: returns `(h', c')`.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let xp = self.project_input(g, store, x)?;
        self.step_projected(g, store, xp, h, c)
    }
}

/// 1-D convolution along time with odd kernel, stride 1 and same padding,
/// applied independently to each length-`seq_len` block of rows.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weights: Linear,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        Conv1d {
            weights: Linear::new(store, rng, name, kernel * in_channels, out_channels),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, seq_len: usize) -> Result<Var> {
        let cols = g.im2col(x, seq_len, self.kernel)?;
        self.weights.forward(g, store, cols)
    }
}
