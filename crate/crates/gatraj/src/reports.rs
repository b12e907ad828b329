//! Line-oriented text outputs. Every format starts with a `#` header line
//! naming its columns; readers skip `#` lines.
//!
//! | file          | columns                                        |
//! |---------------|------------------------------------------------|
//! | scene dump    | `scene_id agent_id t x y`                      |
//! | predictions   | `scene agent mode t x y bx by pi`              |
//! | metrics       | `metric K value`                               |
//! | epoch log     | `epoch total reg cls val_minade val_minfde lr` |
//! | K sweep       | `K minADE minFDE`                              |
//!
//! Positions in dumps are world coordinates. Floats use Rust's shortest
//! round-trip formatting, so equal values always print identically.

use std::io::{self, Write};

use gatraj_core::data::NormalizedScene;
use gatraj_core::decoder::LaplaceMixture;
use gatraj_core::metrics::MetricReport;
use gatraj_core::train::EpochRecord;

use crate::error::{Error, Result};

/// Observed then future positions of every agent, `t` counting from the
/// first observed step.
pub fn write_scenes<W: Write>(mut w: W, scenes: &[NormalizedScene]) -> io::Result<()> {
    writeln!(w, "# scene_id agent_id t x y")?;
    for (s, scene) in scenes.iter().enumerate() {
        let future = scene.world_ground_truth();
        for (a, id) in scene.agent_ids.iter().enumerate() {
            let obs = &scene.world_positions[a * scene.obs_len..(a + 1) * scene.obs_len];
            let fut = &future[a * scene.pred_len..(a + 1) * scene.pred_len];
            for (t, p) in obs.iter().chain(fut).enumerate() {
                writeln!(w, "{s} {id} {t} {} {}", p[0], p[1])?;
            }
        }
    }
    Ok(())
}

/// `t` counts prediction steps from 0. `mixtures[i]` belongs to `scenes[i]`.
pub fn write_predictions<W: Write>(
    mut w: W,
    scenes: &[NormalizedScene],
    mixtures: &[LaplaceMixture],
) -> io::Result<()> {
    writeln!(w, "# scene agent mode t x y bx by pi")?;
    for (s, (scene, mix)) in scenes.iter().zip(mixtures).enumerate() {
        for (a, id) in scene.agent_ids.iter().enumerate() {
            let o = scene.origins[a];
            for k in 0..mix.modes {
                let pi = mix.prob(a, k);
                for t in 0..mix.pred_len {
                    let p = mix.location(a, k, t);
                    let b = mix.scale(a, k, t);
                    writeln!(
                        w,
                        "{s} {id} {k} {t} {} {} {} {} {pi}",
                        p[0] + o[0],
                        p[1] + o[1],
                        b[0],
                        b[1]
                    )?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_metrics<W: Write>(mut w: W, r: &MetricReport) -> io::Result<()> {
    writeln!(w, "# metric K value")?;
    writeln!(w, "minADE {} {}", r.modes, r.min_ade)?;
    writeln!(w, "minFDE {} {}", r.modes, r.min_fde)?;
    writeln!(w, "agents {} {}", r.modes, r.n_agents)
}

pub const EPOCH_HEADER: &str = "# epoch total reg cls val_minade val_minfde lr";

pub fn write_epoch<W: Write>(mut w: W, r: &EpochRecord) -> io::Result<()> {
    writeln!(
        w,
        "{} {} {} {} {} {} {}",
        r.epoch, r.total, r.reg, r.cls, r.val_min_ade, r.val_min_fde, r.lr
    )
}

pub fn write_epoch_log<W: Write>(mut w: W, log: &[EpochRecord]) -> io::Result<()> {
    writeln!(w, "{EPOCH_HEADER}")?;
    for r in log {
        write_epoch(&mut w, r)?;
    }
    Ok(())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.split_whitespace().collect()))
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize, name: &str) -> Result<T> {
    cols.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            source_name: name.into(),
            line,
            detail: format!("column {} missing or malformed", i + 1),
        })
}

pub fn read_epoch_log(text: &str) -> Result<Vec<EpochRecord>> {
    let name = "epoch log";
    data_lines(text)
        .map(|(line, c)| {
            Ok(EpochRecord {
                epoch: field(&c, 0, line, name)?,
                total: field(&c, 1, line, name)?,
                reg: field(&c, 2, line, name)?,
                cls: field(&c, 3, line, name)?,
                val_min_ade: field(&c, 4, line, name)?,
                val_min_fde: field(&c, 5, line, name)?,
                lr: field(&c, 6, line, name)?,
            })
        })
        .collect()
}

/// Reads `(metric, K, value)` rows.
pub fn read_metrics(text: &str) -> Result<Vec<(String, usize, f64)>> {
    data_lines(text)
        .map(|(line, c)| {
            Ok((
                field::<String>(&c, 0, line, "metrics")?,
                field(&c, 1, line, "metrics")?,
                field(&c, 2, line, "metrics")?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_log_round_trip() {
        let log = vec![
            EpochRecord {
                epoch: 1,
                total: 1.5,
                reg: 1.0,
                cls: 0.5,
                val_min_ade: f64::NAN,
                val_min_fde: f64::NAN,
                lr: 5e-4,
            },
            EpochRecord {
                epoch: 2,
                total: -0.25,
                reg: -0.5,
                cls: 0.25,
                val_min_ade: 0.1,
                val_min_fde: 0.2,
                lr: 1e-5,
            },
        ];
        let mut buf = Vec::new();
        write_epoch_log(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(EPOCH_HEADER));
        let back = read_epoch_log(&text).unwrap();
        assert_eq!(back[1], log[1]);
        assert!(back[0].val_min_ade.is_nan());
    }

    #[test]
    fn metrics_format() {
        let r = MetricReport {
            min_ade: 0.5,
            min_fde: 1.25,
            modes: 3,
            n_agents: 4,
        };
        let mut buf = Vec::new();
        write_metrics(&mut buf, &r).unwrap();
        let rows = read_metrics(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rows[0], ("minADE".to_string(), 3, 0.5));
        assert_eq!(rows[1], ("minFDE".to_string(), 3, 1.25));
    }
}
