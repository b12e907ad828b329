//! Evaluation split across threads.

use std::num::NonZeroUsize;

use gatraj_core::data::NormalizedScene;
use gatraj_core::metrics::{MetricAccumulator, MetricReport};
use gatraj_core::train::{evaluate_partial, EVAL_BATCH};
use gatraj_core::Model;

use crate::error::{Error, Result};

/// Best-of-`k` metrics over `scenes` using up to `threads` workers.
///
/// Work is split on forward-batch boundaries and partial sums are merged in
/// scene order; per-agent errors do not depend on batch composition, so the
/// report is the same for every thread count up to float summation order.
pub fn evaluate(
    model: &Model,
    scenes: &[NormalizedScene],
    k: usize,
    threads: NonZeroUsize,
) -> Result<MetricReport> {
    if scenes.is_empty() {
        return Err(Error::Data("no evaluation scenes".into()));
    }
    let batches = scenes.len().div_ceil(EVAL_BATCH);
    let per_worker = batches.div_ceil(threads.get()) * EVAL_BATCH;
    if threads.get() == 1 || per_worker >= scenes.len() {
        return Ok(evaluate_partial(model, scenes, k)?.report());
    }
    let parts: Vec<gatraj_core::Result<MetricAccumulator>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenes
            .chunks(per_worker)
            .map(|chunk| s.spawn(move || evaluate_partial(model, chunk, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut acc = MetricAccumulator::new(k);
    for p in parts {
        acc.merge(&p?);
    }
    Ok(acc.report())
}
