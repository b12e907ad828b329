//! Training loop, evaluation and the `key = value` configuration format.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::data::NormalizedScene;
use crate::loss::{self, LossBreakdown};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::{fnv1a, Batch, InputMode, Model, ModelConfig};
use crate::nn::ParamStore;
use crate::optim::{self, Adam, ParamGrads};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr_init: f64,
    pub lr_final: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Seeds shuffling and dropout.
    pub seed: u64,
    pub cls_weight: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr_init: 5e-4,
            lr_final: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            seed: 0,
            cls_weight: 1.0,
            clip_norm: 10.0,
        }
    }
}

fn parse_num<T: core::str::FromStr>(value: &str) -> core::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse '{value}' as a number"))
}

fn parse_bool(value: &str) -> core::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true/false, got '{value}'")),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr_init > self.lr_final && self.lr_final > 0.0) {
            return Err(Error::invalid(
                "learning rates",
                format!("need lr_init > lr_final > 0, got {} / {}", self.lr_init, self.lr_final),
            ));
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::invalid(
                "training length",
                format!("batch_size {} / max_epochs {}", self.batch_size, self.max_epochs),
            ));
        }
        if !(self.clip_norm > 0.0) || !(self.cls_weight >= 0.0) {
            return Err(Error::invalid(
                "loss settings",
                format!("clip_norm {} / cls_weight {}", self.clip_norm, self.cls_weight),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> core::result::Result<(), String> {
        let m = &mut self.model;
        match key {
            "hidden" => m.hidden = parse_num(value)?,
            "heads" => m.heads = parse_num(value)?,
            "blocks" => m.blocks = parse_num(value)?,
            "ff_width" => m.ff_width = parse_num(value)?,
            "rel_width" => m.rel_width = parse_num(value)?,
            "conv_kernel" => m.conv_kernel = parse_num(value)?,
            "modes" | "k" => m.modes = parse_num(value)?,
            "rounds" => m.rounds = parse_num(value)?,
            "max_distance" => m.max_distance = parse_num(value)?,
            "obs_len" => m.obs_len = parse_num(value)?,
            "pred_len" => m.pred_len = parse_num(value)?,
            "input_mode" => {
                m.input_mode = InputMode::parse(value)
                    .ok_or_else(|| format!("unknown input mode '{value}'"))?
            }
            "no_sa" => m.ablation.no_sa = parse_bool(value)?,
            "no_gcn" => m.ablation.no_gcn = parse_bool(value)?,
            "gmm_head" => m.ablation.gmm_head = parse_bool(value)?,
            "mlp_decoder" => m.ablation.mlp_decoder = parse_bool(value)?,
            "dropout" => m.dropout = parse_num(value)?,
            "init_seed" => m.init_seed = parse_num(value)?,
            "lr_init" => self.lr_init = parse_num(value)?,
            "lr_final" => self.lr_final = parse_num(value)?,
            "batch_size" => self.batch_size = parse_num(value)?,
            "max_epochs" => self.max_epochs = parse_num(value)?,
            "seed" => self.seed = parse_num(value)?,
            "cls_weight" => self.cls_weight = parse_num(value)?,
            "clip_norm" => self.clip_norm = parse_num(value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown and repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Config { line: i + 1, detail };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(err)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = self.model.canonical_string();
        let _ = write!(
            s,
            "lr_init = {:?}\nlr_final = {:?}\nbatch_size = {}\nmax_epochs = {}\nseed = {}\n\
             cls_weight = {:?}\nclip_norm = {:?}\n",
            self.lr_init,
            self.lr_final,
            self.batch_size,
            self.max_epochs,
            self.seed,
            self.cls_weight,
            self.clip_norm,
        );
        s
    }

    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn steps_per_epoch(&self, n_scenes: usize) -> usize {
        n_scenes.div_ceil(self.batch_size)
    }
}

/// One line of the epoch log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub reg: f64,
    pub cls: f64,
    /// NaN when no validation set was given.
    pub val_min_ade: f64,
    pub val_min_fde: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
}

/// Everything needed to resume or deploy a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub adam: Adam,
    pub step: u64,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::with_params(self.config.model.clone(), self.params.clone())
    }

    /// Errors unless the checkpoint was produced under `config`.
    pub fn expect_config(&self, config: &TrainConfig) -> Result<()> {
        let (expected, found) = (config.hash(), self.config.hash());
        if expected != found {
            return Err(Error::ConfigHashMismatch { expected, found });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Loss and parameter gradients of `model` (with parameters `store`) on one
/// batch.
pub fn loss_and_grads(
    model: &Model,
    store: &ParamStore,
    batch: &Batch,
    rng: Option<&mut ChaCha8Rng>,
    cls_weight: f64,
) -> Result<(LossBreakdown, ParamGrads)> {
    let mut g = Graph::new();
    let f = model.forward_with(&mut g, store, batch, rng)?;
    let cfg = &model.config;
    let out = loss::wta_loss(
        &mut g,
        &f.mixture,
        &batch.truth,
        cfg.modes,
        cfg.pred_len,
        cfg.likelihood(),
        cls_weight,
    )?;
    let grads = g.backward(out.total)?;
    let mut pg: ParamGrads = alloc::vec![None; store.len()];
    for (id, var) in g.params() {
        pg[id.index()] = grads.get(var).map(<[f64]>::to_vec);
    }
    Ok((out.breakdown, pg))
}

/// Trains from a fresh initialization. `on_epoch` sees each log line as it
/// is produced.
pub fn fit(
    train: &[NormalizedScene],
    val: Option<&[NormalizedScene]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = Model::new(config.model.clone())?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_epoch = config.steps_per_epoch(train.len());
    let total_steps = per_epoch * config.max_epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut step = 0usize;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut tot, mut reg, mut cls, mut agents) = (0.0, 0.0, 0.0, 0usize);
        let mut lr = config.lr_init;
        for chunk in order.chunks(config.batch_size) {
            let scenes: Vec<&NormalizedScene> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_scenes(&scenes, &model.config)?;
            let (b, mut grads) =
                loss_and_grads(&model, &model.params, &batch, Some(&mut rng), config.cls_weight)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => Error::NonFinite {
                            context: "training loss",
                        },
                        e => e,
                    })?;
            optim::clip_grad_norm(&mut grads, config.clip_norm);
            lr = optim::cosine_lr(step, total_steps, config.lr_init, config.lr_final)?;
            adam.step(&mut model.params, &grads, lr)?;
            step += 1;
            let w = batch.n_agents as f64;
            tot += b.total * w;
            reg += b.reg_loss * w;
            cls += b.cls_loss * w;
            agents += batch.n_agents;
        }
        let (val_min_ade, val_min_fde) = match val {
            Some(v) if !v.is_empty() => {
                let r = evaluate(&model, v, model.config.modes)?;
                (r.min_ade, r.min_fde)
            }
            _ => (f64::NAN, f64::NAN),
        };
        let n = agents as f64;
        let rec = EpochRecord {
            epoch,
            total: tot / n,
            reg: reg / n,
            cls: cls / n,
            val_min_ade,
            val_min_fde,
            lr,
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(FitOutput {
        checkpoint: Checkpoint {
            config: config.clone(),
            params: model.params,
            adam,
            step: step as u64,
        },
        log,
    })
}

/// Scenes per forward pass during evaluation.
pub const EVAL_BATCH: usize = 32;

/// Best-of-`k` metrics, keeping the `k` most probable modes per agent.
pub fn evaluate(model: &Model, scenes: &[NormalizedScene], k: usize) -> Result<MetricReport> {
    Ok(evaluate_partial(model, scenes, k)?.report())
}

/// Like [`evaluate`] but returns the accumulator so that disjoint scene
/// ranges can be merged.
pub fn evaluate_partial(
    model: &Model,
    scenes: &[NormalizedScene],
    k: usize,
) -> Result<MetricAccumulator> {
    if k < 1 || k > model.config.modes {
        return Err(Error::invalid(
            "mode count",
            format!("requested {k} of {} trained modes", model.config.modes),
        ));
    }
    let mut acc = MetricAccumulator::new(k);
    for chunk in scenes.chunks(EVAL_BATCH) {
        let refs: Vec<&NormalizedScene> = chunk.iter().collect();
        let batch = Batch::from_scenes(&refs, &model.config)?;
        let mix = model.predict_batch(&batch)?.top_k(k)?;
        acc.add(&mix.locations, &batch.truth, model.config.pred_len);
    }
    Ok(acc)
}
