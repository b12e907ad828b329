//! Model configuration, batching and the assembled predictor.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{NormalizedScene, Point};
use crate::decoder::{self, DecoderParams, LaplaceMixture, MixtureVars};
use crate::encoder::{self, EncoderParams};
use crate::interaction::{self, EdgeList, InteractionParams};
use crate::loss::Likelihood;
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which observed signal feeds the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputMode {
    /// Per-step displacements.
    #[default]
    Offset,
    /// Positions relative to the last observed step (steps 2..T).
    Position,
    /// Both, concatenated per step.
    Both,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Offset | InputMode::Position => 2,
            InputMode::Both => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Offset => "offset",
            InputMode::Position => "position",
            InputMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "offset" | "O" => Some(InputMode::Offset),
            "position" | "P" => Some(InputMode::Position),
            "both" | "B" => Some(InputMode::Both),
            _ => None,
        }
    }
}

/// Component ablations. All `false` is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Drop the Transformer blocks from the encoder.
    pub no_sa: bool,
    /// Bypass message passing; the decoder sees `(h, h, c)`.
    pub no_gcn: bool,
    /// Gaussian instead of Laplace components.
    pub gmm_head: bool,
    /// Per-step MLP instead of the decoder LSTM.
    pub mlp_decoder: bool,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_width: usize,
    pub rel_width: usize,
    pub conv_kernel: usize,
    pub modes: usize,
    pub rounds: usize,
    pub max_distance: f64,
    pub obs_len: usize,
    pub pred_len: usize,
    pub input_mode: InputMode,
    pub ablation: Ablation,
    pub dropout: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    /// Pedestrian settings: 8 observed / 12 predicted steps, 64-wide
    /// features, 20 modes, two message-passing rounds within 10 m.
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            heads: 8,
            blocks: 3,
            ff_width: 128,
            rel_width: 32,
            conv_kernel: 3,
            modes: 20,
            rounds: 2,
            max_distance: 10.0,
            obs_len: 8,
            pred_len: 12,
            input_mode: InputMode::Offset,
            ablation: Ablation::default(),
            dropout: 0.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, detail: String| Err(Error::invalid(what, detail));
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return bad("hidden size", format!("{} must be even and positive", self.hidden));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("heads", format!("{} does not divide {}", self.heads, self.hidden));
        }
        if self.modes < 1 {
            return bad("modes", "K must be >= 1".into());
        }
        if self.rounds < 1 {
            return bad("rounds", "l must be >= 1".into());
        }
        if self.obs_len < 2 || self.pred_len < 1 {
            return bad(
                "horizon",
                format!("obs_len {} / pred_len {}", self.obs_len, self.pred_len),
            );
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad("conv kernel", format!("{} must be odd", self.conv_kernel));
        }
        if !(self.max_distance >= 0.0) {
            return bad("max distance", format!("{}", self.max_distance));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{}", self.dropout));
        }
        Ok(())
    }

    pub fn likelihood(&self) -> Likelihood {
        if self.ablation.gmm_head {
            Likelihood::Gaussian
        } else {
            Likelihood::Laplace
        }
    }

    /// Canonical `key = value` rendering; equal configs render identically.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let a = &self.ablation;
        // f64 fields use their shortest round-trip representation.
        let _ = write!(
            s,
            "hidden = {}\nheads = {}\nblocks = {}\nff_width = {}\nrel_width = {}\n\
             conv_kernel = {}\nmodes = {}\nrounds = {}\nmax_distance = {:?}\nobs_len = {}\n\
             pred_len = {}\ninput_mode = {}\nno_sa = {}\nno_gcn = {}\ngmm_head = {}\n\
             mlp_decoder = {}\ndropout = {:?}\ninit_seed = {}\n",
            self.hidden,
            self.heads,
            self.blocks,
            self.ff_width,
            self.rel_width,
            self.conv_kernel,
            self.modes,
            self.rounds,
            self.max_distance,
            self.obs_len,
            self.pred_len,
            self.input_mode.as_str(),
            a.no_sa,
            a.no_gcn,
            a.gmm_head,
            a.mlp_decoder,
            self.dropout,
            self.init_seed,
        );
        s
    }

    /// 64-bit FNV-1a of [`Self::canonical_string`].
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical_string().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Several scenes stacked along the agent axis. Message passing only links
/// agents of the same scene.
#[derive(Clone, Debug)]
pub struct Batch {
    /// First agent row of each scene, plus a final end marker.
    pub scene_offsets: Vec<usize>,
    pub n_agents: usize,
    pub seq_len: usize,
    pub pred_len: usize,
    /// `[N * (T-1), C]`
    pub input: Tensor,
    pub origins: Vec<Point>,
    /// `[N, T']` centred ground truth.
    pub truth: Vec<Point>,
    pub edges: EdgeList,
}

impl Batch {
    pub fn from_scenes(scenes: &[&NormalizedScene], config: &ModelConfig) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let seq_len = config.obs_len - 1;
        let ch = config.input_mode.channels();
        let mut scene_offsets = Vec::with_capacity(scenes.len() + 1);
        let mut input = Vec::new();
        let mut origins = Vec::new();
        let mut truth = Vec::new();
        let mut edges = EdgeList::default();
        let mut n = 0;
        for s in scenes {
            if s.obs_len != config.obs_len || s.pred_len != config.pred_len {
                return Err(Error::invalid(
                    "scene horizon",
                    format!(
                        "scene has {}/{} steps, model expects {}/{}",
                        s.obs_len, s.pred_len, config.obs_len, config.pred_len
                    ),
                ));
            }
            scene_offsets.push(n);
            for a in 0..s.n_agents() {
                for t in 0..seq_len {
                    let off = s.offset(a, t);
                    let pos = s.centered_position(a, t + 1);
                    match config.input_mode {
                        InputMode::Offset => input.extend_from_slice(&off),
                        InputMode::Position => input.extend_from_slice(&pos),
                        InputMode::Both => {
                            input.extend_from_slice(&off);
                            input.extend_from_slice(&pos);
                        }
                    }
                }
            }
            origins.extend_from_slice(&s.origins);
            truth.extend_from_slice(&s.ground_truth);
            if !config.ablation.no_gcn {
                let graph = interaction::neighbors(&s.origins, config.max_distance);
                edges.extend_from(&graph, n);
            }
            n += s.n_agents();
        }
        scene_offsets.push(n);
        Ok(Batch {
            scene_offsets,
            n_agents: n,
            seq_len,
            pred_len: config.pred_len,
            input: Tensor::new(&[n * seq_len, ch], input)?,
            origins,
            truth,
            edges,
        })
    }

    pub fn n_scenes(&self) -> usize {
        self.scene_offsets.len() - 1
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub h: Var,
    pub c: Var,
    pub h_hat: Var,
    pub c_hat: Var,
    pub mixture: MixtureVars,
    pub attention: Vec<Var>,
}

/// The full predictor: encoder, optional interaction, mixture decoder.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: EncoderParams,
    pub interaction: Option<InteractionParams>,
    pub decoder: DecoderParams,
}

impl Model {
    /// Builds a freshly initialized model (deterministic in `init_seed`).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let blocks = if config.ablation.no_sa { 0 } else { config.blocks };
        let encoder = EncoderParams::new(
            &mut params,
            &mut rng,
            config.input_mode.channels(),
            config.hidden,
            config.conv_kernel,
            blocks,
            config.heads,
            config.ff_width,
        )?;
        let interaction = (!config.ablation.no_gcn).then(|| {
            InteractionParams::new(&mut params, &mut rng, config.hidden, config.rel_width)
        });
        let decoder = DecoderParams::new(
            &mut params,
            &mut rng,
            config.hidden,
            config.modes,
            config.pred_len,
            config.ablation.mlp_decoder,
        )?;
        Ok(Model {
            config,
            params,
            encoder,
            interaction,
            decoder,
        })
    }

    /// Rebuilds a model around existing parameters, checking that names and
    /// shapes match the architecture.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Model::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::invalid(
                "parameters",
                format!("expected {} tensors, got {}", model.params.len(), params.len()),
            ));
        }
        for (a, b) in model.params.entries().iter().zip(params.entries()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::invalid(
                    "parameters",
                    format!(
                        "expected {} {:?}, got {} {:?}",
                        a.name,
                        a.tensor.shape(),
                        b.name,
                        b.tensor.shape()
                    ),
                ));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Forward pass over a batch with the model's own parameters.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &Batch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        self.forward_with(g, &self.params, batch, rng)
    }

    /// Forward pass with an explicit parameter store of the same layout.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &Batch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let dropout = match rng {
            Some(r) if self.config.dropout > 0.0 => Some((r, self.config.dropout)),
            _ => None,
        };
        let input = g.constant(batch.input.clone());
        let trace = encoder::encode(
            g,
            store,
            &self.encoder,
            input,
            batch.n_agents,
            batch.seq_len,
            dropout,
        )?;
        let (h, c) = (trace.state.h, trace.state.c);
        let (h_hat, c_hat) = match &self.interaction {
            Some(p) => {
                let r = interaction::refine(g, store, p, h, c, &batch.edges, self.config.rounds)?;
                (r.h_hat, r.c_hat)
            }
            None => (h, c),
        };
        let mixture = decoder::decode(g, store, &self.decoder, h, h_hat, c_hat)?;
        Ok(Forward {
            h,
            c,
            h_hat,
            c_hat,
            mixture,
            attention: trace.attention,
        })
    }

    /// Predicts the mixture for a batch (agent-centric frame).
    pub fn predict_batch(&self, batch: &Batch) -> Result<LaplaceMixture> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, batch, None)?;
        Ok(LaplaceMixture::from_graph(
            &g,
            &f.mixture,
            self.config.modes,
            self.config.pred_len,
        ))
    }

    pub fn predict(&self, scene: &NormalizedScene) -> Result<LaplaceMixture> {
        let batch = Batch::from_scenes(&[scene], &self.config)?;
        self.predict_batch(&batch)
    }
}
