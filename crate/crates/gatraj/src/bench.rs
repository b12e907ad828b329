//! Forward-pass latency on fixed batches of scenes.

use std::io::{self, Write};
use std::time::Instant;

use gatraj_core::data::NormalizedScene;
use gatraj_core::model::Batch;
use gatraj_core::Model;

use crate::error::{Error, Result};

/// Scenes per timed forward pass.
pub const BENCH_BATCH: usize = 32;
pub const MIN_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub label: String,
    pub params: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub warmup: usize,
    pub iterations: usize,
    pub batch_scenes: usize,
    pub batch_agents: usize,
    pub host: String,
}

impl BenchReport {
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "label = {}", self.label)?;
        writeln!(w, "params = {}", self.params)?;
        writeln!(w, "mean_ms = {:.4}", self.mean_ms)?;
        writeln!(w, "median_ms = {:.4}", self.median_ms)?;
        writeln!(w, "p95_ms = {:.4}", self.p95_ms)?;
        writeln!(w, "warmup = {}", self.warmup)?;
        writeln!(w, "iterations = {}", self.iterations)?;
        writeln!(w, "batch_scenes = {}", self.batch_scenes)?;
        writeln!(w, "batch_agents = {}", self.batch_agents)?;
        writeln!(w, "host = {}", self.host)
    }
}

/// OS, architecture, CPU model and available parallelism.
pub fn host_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}; {cpu}; {threads} hw threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Mean, median and nearest-rank 95th percentile of `samples`.
pub fn summarize(samples: &mut [f64]) -> (f64, f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    let rank = (0.95 * n as f64).ceil() as usize;
    (mean, median, samples[rank.clamp(1, n) - 1])
}

/// Times batching plus the forward pass on the first [`BENCH_BATCH`]
/// scenes. Scene normalization happens before and is not timed.
pub fn run(
    label: &str,
    model: &Model,
    scenes: &[NormalizedScene],
    warmup: usize,
    iterations: usize,
) -> Result<BenchReport> {
    if iterations < MIN_ITERATIONS {
        return Err(Error::Usage(format!(
            "need at least {MIN_ITERATIONS} measured iterations, got {iterations}"
        )));
    }
    let refs: Vec<&NormalizedScene> = scenes.iter().take(BENCH_BATCH).collect();
    if refs.is_empty() {
        return Err(Error::Data("no scenes to benchmark".into()));
    }
    let mut agents = 0;
    let mut once = || -> Result<()> {
        let batch = Batch::from_scenes(&refs, &model.config)?;
        agents = batch.n_agents;
        std::hint::black_box(model.predict_batch(&batch)?);
        Ok(())
    };
    for _ in 0..warmup {
        once()?;
    }
    let mut ms = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        once()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (mean_ms, median_ms, p95_ms) = summarize(&mut ms);
    Ok(BenchReport {
        label: label.to_string(),
        params: model.num_params(),
        mean_ms,
        median_ms,
        p95_ms,
        warmup,
        iterations,
        batch_scenes: refs.len(),
        batch_agents: agents,
        host: host_descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let mut s: Vec<f64> = (1..=20).map(f64::from).collect();
        s.reverse();
        let (mean, median, p95) = summarize(&mut s);
        assert_eq!((mean, median, p95), (10.5, 10.5, 19.0));
        let (_, m, p) = summarize(&mut [3.0]);
        assert_eq!((m, p), (3.0, 3.0));
    }
}
