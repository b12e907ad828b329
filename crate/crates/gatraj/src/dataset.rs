//! Data sources named on the command line.
//!
//! A source is either a path or a synthetic junction spec:
//!
//! ```text
//! data/zara2                      every *.txt file in the directory
//! data/zara2/crowds_zara02.txt    a single file
//! junction:exits=3,scenes=200,noise=0.05,seed=1,agents=1
//! ```
//!
//! Relative paths that do not exist are looked up under `$GATRAJ_DATA_ROOT`.
//! Each file is windowed on its own, so frames of different recordings are
//! never mixed in one scene.

use std::path::{Path, PathBuf};

use gatraj_core::data::{
    build_windows, leave_one_out_split, normalize, synth_junction, JunctionConfig,
    NormalizedScene,
};

use crate::error::{Error, Result};
use crate::ethucy::{self, ParseOptions};

pub const DATA_ROOT_ENV: &str = "GATRAJ_DATA_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Path(PathBuf),
    Junction(JunctionConfig),
}

/// Windowing and parsing options shared by all sources.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadOptions {
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    pub parse: ParseOptions,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            obs_len: 8,
            pred_len: 12,
            stride: 1,
            parse: ParseOptions::default(),
        }
    }
}

fn junction_spec(spec: &str) -> Result<JunctionConfig> {
    let mut cfg = JunctionConfig::uniform(200, 3, 0.05, 0);
    let bad = |msg: String| Error::Usage(format!("junction source '{spec}': {msg}"));
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{part}'")))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| bad(format!("'{v}' is not a number")))
        };
        match k {
            "exits" => cfg.n_exits = num(v)? as usize,
            "scenes" => cfg.n_scenes = num(v)? as usize,
            "noise" => cfg.noise_std = num(v)?,
            "seed" => cfg.seed = num(v)? as u64,
            "agents" => cfg.agents_per_scene = num(v)? as usize,
            "spread" => cfg.spread = num(v)?,
            _ => return Err(bad(format!("unknown key '{k}'"))),
        }
    }
    cfg.branch_probs = vec![1.0 / cfg.n_exits.max(1) as f64; cfg.n_exits];
    Ok(cfg)
}

impl Source {
    pub fn parse(text: &str) -> Result<Self> {
        match text.strip_prefix("junction:") {
            Some(spec) => Ok(Source::Junction(junction_spec(spec)?)),
            None if text == "junction" => Ok(Source::Junction(junction_spec("")?)),
            None => Ok(Source::Path(resolve(Path::new(text)))),
        }
    }
}

/// Returns `path` unchanged unless it is relative, missing, and present
/// under the data root.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            let joined = Path::new(&root).join(path);
            if joined.exists() {
                return joined;
            }
        }
    }
    path.to_path_buf()
}

/// Trajectory files of a path source, sorted by name.
pub fn files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "txt") {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no .txt files in {}", path.display())));
    }
    Ok(out)
}

pub fn load(source: &Source, opts: &LoadOptions) -> Result<Vec<NormalizedScene>> {
    let windows = match source {
        Source::Junction(cfg) => {
            let mut cfg = cfg.clone();
            cfg.obs_len = opts.obs_len;
            cfg.pred_len = opts.pred_len;
            let data = synth_junction(&cfg)?;
            build_windows(&data.table, opts.obs_len, opts.pred_len, opts.stride)?
        }
        Source::Path(path) => {
            let mut all = Vec::new();
            for f in files(path)? {
                let table = ethucy::read_file(&f, opts.parse)?;
                all.extend(build_windows(&table, opts.obs_len, opts.pred_len, opts.stride)?);
            }
            all
        }
    };
    Ok(windows.iter().map(normalize).collect())
}

/// Loads and concatenates several sources.
pub fn load_all(sources: &[Source], opts: &LoadOptions) -> Result<Vec<NormalizedScene>> {
    let mut out = Vec::new();
    for s in sources {
        out.extend(load(s, opts)?);
    }
    Ok(out)
}

/// Treats each subdirectory of `root` as a named subset and holds one out.
/// Returns `(train, test)`.
pub fn leave_one_out(
    root: &Path,
    held_out: &str,
    opts: &LoadOptions,
) -> Result<(Vec<NormalizedScene>, Vec<NormalizedScene>)> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.is_dir() {
            names.push(p);
        }
    }
    names.sort();
    let mut subsets = Vec::with_capacity(names.len());
    for p in names {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        subsets.push((name, load(&Source::Path(p), opts)?));
    }
    Ok(leave_one_out_split(&subsets, held_out)?)
}
