//! Checkpoint files. The byte layout is documented in
//! [`gatraj_core::checkpoint`].

use std::path::Path;

use gatraj_core::checkpoint;
use gatraj_core::{Checkpoint, TrainConfig};

use crate::error::{Error, Result};

/// Writes through a temporary sibling so a crash never leaves a torn file.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint::encode(ck)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checkpoint::decode(&bytes)?)
}

/// Loads and checks that the file was trained under `config`.
pub fn load_expecting(path: &Path, config: &TrainConfig) -> Result<Checkpoint> {
    let ck = load(path)?;
    ck.expect_config(config)?;
    Ok(ck)
}
