//! Accuracy as a function of the number of mixture components.

use std::io::{self, Write};

use gatraj_core::data::NormalizedScene;
use gatraj_core::train::{evaluate, fit};
use gatraj_core::TrainConfig;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub modes: usize,
    pub min_ade: f64,
    pub min_fde: f64,
}

/// Trains one model per entry of `ks` (all other settings from `base`) and
/// evaluates each with all of its modes.
pub fn sweep_k(
    base: &TrainConfig,
    ks: &[usize],
    train: &[NormalizedScene],
    test: &[NormalizedScene],
    mut progress: impl FnMut(usize, &gatraj_core::train::EpochRecord),
) -> Result<Vec<SweepRow>> {
    if ks.is_empty() {
        return Err(Error::Usage("empty K list".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut cfg = base.clone();
        cfg.model.modes = k;
        let out = fit(train, None, &cfg, |r| progress(k, r))?;
        let model = out.checkpoint.model()?;
        let r = evaluate(&model, test, k)?;
        rows.push(SweepRow {
            modes: k,
            min_ade: r.min_ade,
            min_fde: r.min_fde,
        });
    }
    Ok(rows)
}

pub fn write_table<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "# K minADE minFDE")?;
    for r in rows {
        writeln!(w, "{} {} {}", r.modes, r.min_ade, r.min_fde)?;
    }
    Ok(())
}
