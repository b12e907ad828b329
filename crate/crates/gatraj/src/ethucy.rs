//! Plain-text trajectory files.
//!
//! One observation per line, four whitespace-separated numeric columns:
//!
//! ```text
//! frame agent_id x y
//! ```
//!
//! `frame` and `agent_id` may be written as floats (`780.0`) but must be
//! integral. Blank lines and lines starting with `#` are skipped. Public
//! dumps disagree on the coordinate order, so [`ParseOptions::swap_xy`]
//! reads the last two columns as `y x`.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use gatraj_core::data::{Observation, ObservationTable, ETH_UCY_RATE_HZ};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParseOptions {
    pub swap_xy: bool,
    pub sampling_rate_hz: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            swap_xy: false,
            sampling_rate_hz: ETH_UCY_RATE_HZ,
        }
    }
}

fn integral(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    let v: f64 = field.parse().ok()?;
    (v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
}

fn parse_line(line: &str) -> std::result::Result<Observation, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 columns, found {}", fields.len()));
    }
    let frame = integral(fields[0]).ok_or_else(|| format!("bad frame '{}'", fields[0]))?;
    let agent = integral(fields[1]).ok_or_else(|| format!("bad agent id '{}'", fields[1]))?;
    let coord = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad coordinate '{s}'"))
    };
    Ok(Observation {
        frame,
        agent,
        x: coord(fields[2])?,
        y: coord(fields[3])?,
    })
}

/// Reads a whole stream. `source_name` only labels error messages.
pub fn parse_ethucy<R: BufRead>(
    reader: R,
    source_name: &str,
    opts: ParseOptions,
) -> Result<ObservationTable> {
    let mut records = Vec::new();
    let mut seen: HashMap<(i64, i64), usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |detail| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            detail,
        };
        let mut obs = parse_line(trimmed).map_err(err)?;
        if opts.swap_xy {
            std::mem::swap(&mut obs.x, &mut obs.y);
        }
        if let Some(first) = seen.insert((obs.frame, obs.agent), i + 1) {
            return Err(err(format!(
                "agent {} already observed at frame {} (line {first})",
                obs.agent, obs.frame
            )));
        }
        records.push(obs);
    }
    Ok(ObservationTable::from_records(records, opts.sampling_rate_hz)?)
}

pub fn parse_str(text: &str, opts: ParseOptions) -> Result<ObservationTable> {
    parse_ethucy(text.as_bytes(), "<input>", opts)
}

pub fn read_file(path: &Path, opts: ParseOptions) -> Result<ObservationTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ethucy(
        std::io::BufReader::new(file),
        &path.display().to_string(),
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let t = parse_str("0 1 5.0 3.0\n", ParseOptions::default()).unwrap();
        let r = t.records()[0];
        assert_eq!((r.frame, r.agent, r.x, r.y), (0, 1, 5.0, 3.0));
    }

    #[test]
    fn bad_number_names_line() {
        let e = parse_str("0 1 a b", ParseOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        let e = parse_str("# c\n\n0 1 2 3\n10 1 2\n", ParseOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
    }

    #[test]
    fn two_agents_twenty_frames() {
        let mut text = String::new();
        for f in 0..20 {
            for a in [1, 2] {
                text.push_str(&format!("{}.0\t{a}.0\t{}\t{}\n", f * 10, f as f64 * 0.4, a));
            }
        }
        let t = parse_str(&text, ParseOptions::default()).unwrap();
        assert_eq!(t.len(), 40);
        assert_eq!(t.agent_ids(), vec![1, 2]);
        assert_eq!(t.frame_step(), 10);
    }

    #[test]
    fn duplicates_and_fractional_ids_fail() {
        let e = parse_str("0 1 0 0\n0 1 1 1\n", ParseOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(parse_str("0.5 1 0 0", ParseOptions::default()).is_err());
    }

    #[test]
    fn swap_reads_y_first() {
        let opts = ParseOptions {
            swap_xy: true,
            ..Default::default()
        };
        let r = parse_str("0 1 5 3", opts).unwrap().records()[0];
        assert_eq!((r.x, r.y), (3.0, 5.0));
    }
}
