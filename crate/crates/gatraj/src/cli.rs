//! Command-line interface. Every command writes its results to files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use gatraj_core::data::NormalizedScene;
use gatraj_core::train::fit;
use gatraj_core::{Model, TrainConfig};

use crate::dataset::{self, LoadOptions, Source};
use crate::error::{Error, Result};
use crate::ethucy::ParseOptions;
use crate::{bench, ckpt, eval, reports, sweep};

#[derive(Parser, Debug)]
#[command(name = "gatraj", version, about = "Multi-agent trajectory prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Trajectory file, directory of *.txt files, or `junction:key=value,...`.
    #[arg(long = "data", required = true)]
    pub data: Vec<String>,
    /// Read the coordinate columns as `y x`.
    #[arg(long)]
    pub swap_xy: bool,
    /// Window stride in samples.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes `model.ckpt` and `epochs.log` into `--out`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Validation source, evaluated after every epoch.
        #[arg(long)]
        val: Option<String>,
        /// Treat `--data` as a root of subset directories and drop this one.
        #[arg(long)]
        leave_out: Option<String>,
        /// Overrides both the shuffling and the initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Best-of-K metrics of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Modes kept per agent (most probable first); defaults to all.
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long, default_value_t = NonZeroUsize::MIN)]
        threads: NonZeroUsize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump predicted mixtures in world coordinates.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward latency per batch of 32 scenes.
    Bench {
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenes to time; defaults to a 4-agent synthetic junction.
        #[arg(long)]
        data: Option<String>,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one model per K.
    SweepK {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        test: String,
        /// Comma-separated mode counts.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 5])]
        ks: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Number of learnable scalars.
    CountParams {
        #[arg(long, conflicts_with = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write windowed scenes as `scene_id agent_id t x y`.
    DumpScenes {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            TrainConfig::parse(&text).map_err(|e| match e {
                gatraj_core::Error::Config { line, detail } => Error::Parse {
                    source_name: p.display().to_string(),
                    line,
                    detail,
                },
                e => e.into(),
            })
        }
    }
}

fn load_options(cfg: &TrainConfig, data: &DataArgs) -> LoadOptions {
    LoadOptions {
        obs_len: cfg.model.obs_len,
        pred_len: cfg.model.pred_len,
        stride: data.stride,
        parse: ParseOptions {
            swap_xy: data.swap_xy,
            ..Default::default()
        },
    }
}

fn load_sources(data: &DataArgs, opts: &LoadOptions) -> Result<Vec<NormalizedScene>> {
    let sources = data
        .data
        .iter()
        .map(|s| Source::parse(s))
        .collect::<Result<Vec<_>>>()?;
    let scenes = dataset::load_all(&sources, opts)?;
    if scenes.is_empty() {
        return Err(Error::Data(format!(
            "no complete {}+{} step windows in {:?}",
            opts.obs_len, opts.pred_len, data.data
        )));
    }
    Ok(scenes)
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(ckpt::load(path)?.model()?)
}

fn modes_for(model: &Model, k: Option<usize>) -> Result<usize> {
    let trained = model.config.modes;
    match k {
        None => Ok(trained),
        Some(k) if k >= 1 && k <= trained => Ok(k),
        Some(k) => Err(Error::Usage(format!(
            "K = {k} exceeds the {trained} trained modes"
        ))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            val,
            leave_out,
            seed,
            epochs,
            out,
        } => {
            let mut cfg = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.model.init_seed = s;
            }
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            cfg.validate()?;
            let opts = load_options(&cfg, &data);
            let (train, held) = match &leave_out {
                Some(name) => {
                    let [root] = data.data.as_slice() else {
                        return Err(Error::Usage(
                            "--leave-out takes exactly one --data root".into(),
                        ));
                    };
                    let (tr, te) = dataset::leave_one_out(&dataset::resolve(Path::new(root)), name, &opts)?;
                    (tr, Some(te))
                }
                None => (load_sources(&data, &opts)?, None),
            };
            let val = match val {
                Some(v) => Some(dataset::load(&Source::parse(&v)?, &opts)?),
                None => held,
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let log_path = out.join("epochs.log");
            let mut log = create(&log_path)?;
            writeln!(log, "{}", reports::EPOCH_HEADER).map_err(|e| Error::io(&log_path, e))?;
            let mut io_err = None;
            let fitted = fit(&train, val.as_deref(), &cfg, |r| {
                eprintln!(
                    "epoch {:>4}  loss {:.4}  reg {:.4}  cls {:.4}  val minADE {:.4}",
                    r.epoch, r.total, r.reg, r.cls, r.val_min_ade
                );
                if let Err(e) = reports::write_epoch(&mut log, r).and_then(|_| log.flush()) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(Error::io(&log_path, e));
            }
            ckpt::save(&fitted.checkpoint, &out.join("model.ckpt"))
        }
        Command::Eval {
            checkpoint,
            data,
            k,
            threads,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let k = modes_for(&model, k)?;
            let cfg = TrainConfig {
                model: model.config.clone(),
                ..Default::default()
            };
            let scenes = load_sources(&data, &load_options(&cfg, &data))?;
            let report = eval::evaluate(&model, &scenes, k, threads)?;
            write_with(&out, |w| reports::write_metrics(w, &report))
        }
        Command::Predict {
            checkpoint,
            data,
            k,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let k = modes_for(&model, k)?;
            let cfg = TrainConfig {
                model: model.config.clone(),
                ..Default::default()
            };
            let scenes = load_sources(&data, &load_options(&cfg, &data))?;
            let mixtures = scenes
                .iter()
                .map(|s| model.predict(s)?.top_k(k))
                .collect::<gatraj_core::Result<Vec<_>>>()?;
            write_with(&out, |w| reports::write_predictions(w, &scenes, &mixtures))
        }
        Command::Bench {
            checkpoint,
            config,
            data,
            iterations,
            warmup,
            label,
            out,
        } => {
            let model = match &checkpoint {
                Some(p) => load_model(p)?,
                None => Model::new(read_config(config.as_deref())?.model)?,
            };
            let source = Source::parse(data.as_deref().unwrap_or(DEFAULT_BENCH_DATA))?;
            let opts = LoadOptions {
                obs_len: model.config.obs_len,
                pred_len: model.config.pred_len,
                ..Default::default()
            };
            let scenes = dataset::load(&source, &opts)?;
            let label = label.unwrap_or_else(|| ablation_label(&model));
            let report = bench::run(&label, &model, &scenes, warmup, iterations)?;
            write_with(&out, |w| report.write(w))
        }
        Command::SweepK {
            config,
            data,
            test,
            ks,
            seed,
            out,
        } => {
            let mut cfg = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.model.init_seed = s;
            }
            let opts = load_options(&cfg, &data);
            let train = load_sources(&data, &opts)?;
            let test = dataset::load(&Source::parse(&test)?, &opts)?;
            let rows = sweep::sweep_k(&cfg, &ks, &train, &test, |k, r| {
                eprintln!("K={k} epoch {:>4}  loss {:.4}", r.epoch, r.total)
            })?;
            write_with(&out, |w| sweep::write_table(w, &rows))
        }
        Command::CountParams {
            config,
            checkpoint,
            out,
        } => {
            let model = match &checkpoint {
                Some(p) => load_model(p)?,
                None => Model::new(read_config(config.as_deref())?.model)?,
            };
            let n = model.num_params();
            println!("{n}");
            match out {
                Some(p) => write_with(&p, |w| writeln!(w, "{n}")),
                None => Ok(()),
            }
        }
        Command::DumpScenes { config, data, out } => {
            let cfg = read_config(config.as_deref())?;
            let scenes = load_sources(&data, &load_options(&cfg, &data))?;
            write_with(&out, |w| reports::write_scenes(w, &scenes))
        }
    }
}

/// Benchmark scenes when none are given: 32 scenes of 4 agents each.
pub const DEFAULT_BENCH_DATA: &str = "junction:exits=3,scenes=32,agents=4,seed=0";

/// `full`, `no_gcn`, `no_gcn+no_sa`, ...
pub fn ablation_label(model: &Model) -> String {
    let a = model.config.ablation;
    let flags: Vec<&str> = [
        (a.no_gcn, "no_gcn"),
        (a.no_sa, "no_sa"),
        (a.gmm_head, "gmm_head"),
        (a.mlp_decoder, "mlp_decoder"),
    ]
    .iter()
    .filter(|f| f.0)
    .map(|f| f.1)
    .collect();
    if flags.is_empty() {
        format!("full K={}", model.config.modes)
    } else {
        format!("{} K={}", flags.join("+"), model.config.modes)
    }
}
