//! Trajectory records, fixed-horizon scene windows, agent-centric
//! normalization and the synthetic junction generator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::math;
use crate::{Error, Result};

pub type Point = [f64; 2];

/// Sampling rate of the ETH/UCY pedestrian recordings.
pub const ETH_UCY_RATE_HZ: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub frame: i64,
    pub agent: i64,
    pub x: f64,
    pub y: f64,
}

/// Raw positions, sorted by `(agent, frame)` with unique pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    records: Vec<Observation>,
    pub sampling_rate_hz: f64,
}

impl ObservationTable {
    pub fn from_records(mut records: Vec<Observation>, sampling_rate_hz: f64) -> Result<Self> {
        records.sort_by_key(|r| (r.agent, r.frame));
        if let Some(w) = records
            .windows(2)
            .find(|w| w[0].agent == w[1].agent && w[0].frame == w[1].frame)
        {
            return Err(Error::invalid(
                "observations",
                format!("duplicate record for frame {} agent {}", w[0].frame, w[0].agent),
            ));
        }
        Ok(ObservationTable {
            records,
            sampling_rate_hz,
        })
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn agent_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.records.iter().map(|r| r.agent).collect();
        ids.dedup();
        ids
    }

    /// Frame spacing between consecutive samples: the gcd of the gaps
    /// between distinct frame numbers (1 when undetermined).
    pub fn frame_step(&self) -> i64 {
        let mut frames: Vec<i64> = self.records.iter().map(|r| r.frame).collect();
        frames.sort_unstable();
        frames.dedup();
        let step = frames.windows(2).fold(0, |acc, w| gcd(acc, w[1] - w[0]));
        if step <= 0 {
            1
        } else {
            step
        }
    }

    /// Moves every record by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| Observation {
                x: r.x + dx,
                y: r.y + dy,
                ..*r
            })
            .collect();
        ObservationTable {
            records,
            sampling_rate_hz: self.sampling_rate_hz,
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Absolute positions of agents fully present for `obs_len + pred_len`
/// consecutive samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneWindow {
    pub start_frame: i64,
    pub agent_ids: Vec<i64>,
    /// `[N, obs_len + pred_len]` row-major.
    pub positions: Vec<Point>,
    pub obs_len: usize,
    pub pred_len: usize,
}

impl SceneWindow {
    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn total_len(&self) -> usize {
        self.obs_len + self.pred_len
    }

    pub fn position(&self, agent: usize, t: usize) -> Point {
        self.positions[agent * self.total_len() + t]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut w = self.clone();
        for p in &mut w.positions {
            p[0] += dx;
            p[1] += dy;
        }
        w
    }

    /// Reorders agents so that new agent `i` is old agent `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let t = self.total_len();
        let mut positions = Vec::with_capacity(self.positions.len());
        for &src in perm {
            positions.extend_from_slice(&self.positions[src * t..(src + 1) * t]);
        }
        SceneWindow {
            start_frame: self.start_frame,
            agent_ids: perm.iter().map(|&i| self.agent_ids[i]).collect(),
            positions,
            obs_len: self.obs_len,
            pred_len: self.pred_len,
        }
    }
}

/// Cuts a table into scene windows, one per start sample (every
/// `frame_stride` samples). Agents missing any sample of a window are left
/// out of it; windows without agents are dropped.
pub fn build_windows(
    table: &ObservationTable,
    obs_len: usize,
    pred_len: usize,
    frame_stride: usize,
) -> Result<Vec<SceneWindow>> {
    if obs_len < 2 {
        return Err(Error::invalid("observed length", format!("{obs_len} < 2")));
    }
    if pred_len < 1 {
        return Err(Error::invalid("prediction length", "must be >= 1"));
    }
    if frame_stride < 1 {
        return Err(Error::invalid("frame stride", "must be >= 1"));
    }
    let recs = table.records();
    if recs.is_empty() {
        return Ok(Vec::new());
    }
    let step = table.frame_step();
    let total = (obs_len + pred_len) as i64;

    struct Track {
        id: i64,
        first: i64,
        last: i64,
        by_frame: BTreeMap<i64, Point>,
    }
    let mut tracks: Vec<Track> = Vec::new();
    for r in recs {
        match tracks.last_mut() {
            Some(t) if t.id == r.agent => {
                t.last = r.frame;
                t.by_frame.insert(r.frame, [r.x, r.y]);
            }
            _ => {
                let mut by_frame = BTreeMap::new();
                by_frame.insert(r.frame, [r.x, r.y]);
                tracks.push(Track {
                    id: r.agent,
                    first: r.frame,
                    last: r.frame,
                    by_frame,
                });
            }
        }
    }
    let min_frame = recs.iter().map(|r| r.frame).min().unwrap();
    let max_frame = recs.iter().map(|r| r.frame).max().unwrap();

    let mut windows = Vec::new();
    let mut start = min_frame;
    while start + (total - 1) * step <= max_frame {
        let end = start + (total - 1) * step;
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for t in tracks.iter().filter(|t| t.first <= start && t.last >= end) {
            let pts: Option<Vec<Point>> = (0..total)
                .map(|k| t.by_frame.get(&(start + k * step)).copied())
                .collect();
            if let Some(pts) = pts {
                ids.push(t.id);
                positions.extend(pts);
            }
        }
        if !ids.is_empty() {
            windows.push(SceneWindow {
                start_frame: start,
                agent_ids: ids,
                positions,
                obs_len,
                pred_len,
            });
        }
        start += step * frame_stride as i64;
    }
    Ok(windows)
}

/// One prediction instance in agent-centric coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScene {
    pub agent_ids: Vec<i64>,
    pub obs_len: usize,
    pub pred_len: usize,
    /// `[N, obs_len - 1]` per-step displacements.
    pub offsets: Vec<Point>,
    /// `[N]` world position at the last observed step.
    pub origins: Vec<Point>,
    /// `[N, obs_len]` world positions over the observed steps.
    pub world_positions: Vec<Point>,
    /// `[N, pred_len]` future positions relative to each agent's origin.
    pub ground_truth: Vec<Point>,
}

impl NormalizedScene {
    pub fn n_agents(&self) -> usize {
        self.origins.len()
    }

    pub fn offset(&self, agent: usize, t: usize) -> Point {
        self.offsets[agent * (self.obs_len - 1) + t]
    }

    /// Observed position relative to the agent's origin.
    pub fn centered_position(&self, agent: usize, t: usize) -> Point {
        let p = self.world_positions[agent * self.obs_len + t];
        let o = self.origins[agent];
        [p[0] - o[0], p[1] - o[1]]
    }

    pub fn ground_truth(&self, agent: usize, t: usize) -> Point {
        self.ground_truth[agent * self.pred_len + t]
    }

    /// `x_i - x_j` at the last observed step.
    pub fn relative_position(&self, i: usize, j: usize) -> Point {
        let (a, b) = (self.origins[i], self.origins[j]);
        [a[0] - b[0], a[1] - b[1]]
    }

    /// Ground truth moved back to world coordinates.
    pub fn world_ground_truth(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.ground_truth.len());
        for i in 0..self.n_agents() {
            let o = self.origins[i];
            for t in 0..self.pred_len {
                let p = self.ground_truth(i, t);
                out.push([p[0] + o[0], p[1] + o[1]]);
            }
        }
        out
    }
}

/// Shifts each agent's origin to its last observed position and converts the
/// observed track into per-step offsets.
pub fn normalize(window: &SceneWindow) -> NormalizedScene {
    let (obs, pred) = (window.obs_len, window.pred_len);
    let n = window.n_agents();
    let mut offsets = Vec::with_capacity(n * (obs - 1));
    let mut origins = Vec::with_capacity(n);
    let mut world = Vec::with_capacity(n * obs);
    let mut truth = Vec::with_capacity(n * pred);
    for i in 0..n {
        for t in 0..obs - 1 {
            let (a, b) = (window.position(i, t), window.position(i, t + 1));
            offsets.push([b[0] - a[0], b[1] - a[1]]);
        }
        let o = window.position(i, obs - 1);
        origins.push(o);
        for t in 0..obs {
            world.push(window.position(i, t));
        }
        for t in obs..obs + pred {
            let p = window.position(i, t);
            truth.push([p[0] - o[0], p[1] - o[1]]);
        }
    }
    NormalizedScene {
        agent_ids: window.agent_ids.clone(),
        obs_len: obs,
        pred_len: pred,
        offsets,
        origins,
        world_positions: world,
        ground_truth: truth,
    }
}

/// Holds out the subset called `held_out`; the rest are concatenated in
/// their given order for training.
pub fn leave_one_out_split<T: Clone>(
    subsets: &[(String, Vec<T>)],
    held_out: &str,
) -> Result<(Vec<T>, Vec<T>)> {
    let Some(test_idx) = subsets.iter().position(|(name, _)| name == held_out) else {
        return Err(Error::UnknownSubset(held_out.into()));
    };
    let train = subsets
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != test_idx)
        .flat_map(|(_, (_, items))| items.iter().cloned())
        .collect();
    Ok((train, subsets[test_idx].1.clone()))
}

/// Parameters of the synthetic junction data set.
#[derive(Clone, Debug, PartialEq)]
pub struct JunctionConfig {
    pub n_scenes: usize,
    pub n_exits: usize,
    pub branch_probs: Vec<f64>,
    /// Standard deviation of isotropic position noise, meters.
    pub noise_std: f64,
    pub seed: u64,
    pub obs_len: usize,
    pub pred_len: usize,
    pub agents_per_scene: usize,
    /// Per-agent speed is drawn uniformly from this range, meters per step.
    pub speed_range: (f64, f64),
    /// Side of the square in which junction points of one scene fall, meters.
    pub spread: f64,
}

impl JunctionConfig {
    pub fn uniform(n_scenes: usize, n_exits: usize, noise_std: f64, seed: u64) -> Self {
        JunctionConfig {
            n_scenes,
            n_exits,
            branch_probs: vec![1.0 / n_exits as f64; n_exits],
            noise_std,
            seed,
            obs_len: 8,
            pred_len: 12,
            agents_per_scene: 1,
            speed_range: (0.4, 0.6),
            spread: 8.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JunctionData {
    pub table: ObservationTable,
    /// Exit taken by each agent id.
    pub branches: BTreeMap<i64, usize>,
    /// Exit directions in radians; agents always approach heading along +x.
    pub exit_headings: Vec<f64>,
}

/// Exit directions of an `n`-way junction: evenly spread over
/// `[+90deg, -90deg]`, or a single left turn when `n == 1`.
pub fn exit_headings(n: usize) -> Vec<f64> {
    let half_pi = core::f64::consts::FRAC_PI_2;
    match n {
        0 => Vec::new(),
        1 => vec![half_pi],
        _ => (0..n)
            .map(|k| half_pi - core::f64::consts::PI * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

// Coordinates are snapped to a 2^-16 m grid so that translating by whole
// meters and differencing stay exact in f64.
fn snap(v: f64) -> f64 {
    const Q: f64 = 65536.0;
    libm::round(v * Q) / Q
}

/// Agents walk straight along +x at constant speed for `obs_len` samples,
/// reach a junction at their last observed sample, then leave along one exit
/// for `pred_len` samples. Deterministic under `seed`.
pub fn synth_junction(cfg: &JunctionConfig) -> Result<JunctionData> {
    if cfg.n_exits == 0 || cfg.branch_probs.len() != cfg.n_exits {
        return Err(Error::invalid(
            "branch probabilities",
            format!("{} values for {} exits", cfg.branch_probs.len(), cfg.n_exits),
        ));
    }
    let sum: f64 = cfg.branch_probs.iter().sum();
    if cfg.branch_probs.iter().any(|p| !(*p >= 0.0)) || math::abs(sum - 1.0) > 1e-9 {
        return Err(Error::invalid(
            "branch probabilities",
            "must be nonnegative and sum to 1",
        ));
    }
    if !(cfg.noise_std >= 0.0) || cfg.obs_len < 2 || cfg.pred_len < 1 || cfg.agents_per_scene == 0
    {
        return Err(Error::invalid("junction config", format!("{cfg:?}")));
    }
    let headings = exit_headings(cfg.n_exits);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|_| Error::invalid("noise", "bad standard deviation"))?;
    let total = cfg.obs_len + cfg.pred_len;
    let mut records = Vec::with_capacity(cfg.n_scenes * cfg.agents_per_scene * total);
    let mut branches = BTreeMap::new();
    let mut agent: i64 = 0;
    for s in 0..cfg.n_scenes {
        let frame0 = (s * (total + 1)) as i64;
        let cx = rng.random_range(-50.0..50.0);
        let cy = rng.random_range(-50.0..50.0);
        for _ in 0..cfg.agents_per_scene {
            let jx = cx + rng.random_range(0.0..cfg.spread.max(f64::MIN_POSITIVE));
            let jy = cy + rng.random_range(0.0..cfg.spread.max(f64::MIN_POSITIVE));
            let speed = if cfg.speed_range.1 > cfg.speed_range.0 {
                rng.random_range(cfg.speed_range.0..cfg.speed_range.1)
            } else {
                cfg.speed_range.0
            };
            let u: f64 = rng.random();
            let mut exit = cfg.n_exits - 1;
            let mut cum = 0.0;
            for (k, p) in cfg.branch_probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    exit = k;
                    break;
                }
            }
            let (ex, ey) = (math::cos(headings[exit]), math::sin(headings[exit]));
            for t in 0..total {
                let (mut x, mut y) = if t < cfg.obs_len {
                    (jx - (cfg.obs_len - 1 - t) as f64 * speed, jy)
                } else {
                    let k = (t + 1 - cfg.obs_len) as f64 * speed;
                    (jx + k * ex, jy + k * ey)
                };
                if cfg.noise_std > 0.0 {
                    x += noise.sample(&mut rng);
                    y += noise.sample(&mut rng);
                }
                records.push(Observation {
                    frame: frame0 + t as i64,
                    agent,
                    x: snap(x),
                    y: snap(y),
                });
            }
            branches.insert(agent, exit);
            agent += 1;
        }
    }
    Ok(JunctionData {
        table: ObservationTable::from_records(records, ETH_UCY_RATE_HZ)?,
        branches,
        exit_headings: headings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(recs: &[(i64, i64, f64, f64)]) -> ObservationTable {
        let records = recs
            .iter()
            .map(|&(frame, agent, x, y)| Observation { frame, agent, x, y })
            .collect();
        ObservationTable::from_records(records, ETH_UCY_RATE_HZ).unwrap()
    }

    fn straight_agent(id: i64, frames: core::ops::Range<i64>) -> Vec<(i64, i64, f64, f64)> {
        frames.map(|f| (f, id, f as f64, 0.0)).collect()
    }

    #[test]
    fn single_agent_twenty_steps_gives_one_window() {
        let t = table(&straight_agent(1, 0..20));
        let w = build_windows(&t, 8, 12, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].n_agents(), 1);
    }

    #[test]
    fn twenty_five_steps_stride_one_gives_six_windows() {
        let t = table(&straight_agent(3, 0..25));
        let w = build_windows(&t, 8, 12, 1).unwrap();
        // start offsets 0..=5
        let starts: Vec<i64> = (0..25 - 20 + 1).collect();
        assert_eq!(w.len(), starts.len());
        assert_eq!(w.iter().map(|w| w.start_frame).collect::<Vec<_>>(), starts);
    }

    #[test]
    fn agent_missing_mid_window_frame_is_excluded() {
        let mut recs = straight_agent(1, 0..20);
        recs.extend(straight_agent(2, 0..20).into_iter().filter(|r| r.0 != 10));
        let w = build_windows(&table(&recs), 8, 12, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].agent_ids, vec![1]);
    }

    #[test]
    fn windows_follow_frame_step_of_ten() {
        let recs: Vec<_> = (0..20).map(|k| (k * 10, 4, k as f64, 1.0)).collect();
        let t = table(&recs);
        assert_eq!(t.frame_step(), 10);
        let w = build_windows(&t, 8, 12, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].position(0, 19), [19.0, 1.0]);
    }

    #[test]
    fn build_windows_rejects_short_observation() {
        let t = table(&straight_agent(1, 0..20));
        assert!(build_windows(&t, 1, 12, 1).is_err());
    }

    #[test]
    fn duplicate_records_rejected() {
        let records = vec![
            Observation { frame: 0, agent: 1, x: 0.0, y: 0.0 },
            Observation { frame: 0, agent: 1, x: 1.0, y: 0.0 },
        ];
        assert!(ObservationTable::from_records(records, 2.5).is_err());
    }

    #[test]
    fn offsets_of_two_point_track() {
        let w = SceneWindow {
            start_frame: 0,
            agent_ids: vec![0],
            positions: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            obs_len: 2,
            pred_len: 1,
        };
        let s = normalize(&w);
        assert_eq!(s.offsets, vec![[1.0, 0.0]]);
        assert_eq!(s.origins, vec![[1.0, 0.0]]);
        assert_eq!(s.ground_truth, vec![[0.0, 1.0]]);
        assert_eq!(s.centered_position(0, 1), [0.0, 0.0]);
    }

    #[test]
    fn relative_position_uses_last_observed_step() {
        let w = SceneWindow {
            start_frame: 0,
            agent_ids: vec![0, 1],
            positions: vec![[9.0, 9.0], [3.0, 4.0], [5.0, 5.0], [1.0, 1.0], [0.0, 0.0], [2.0, 2.0]],
            obs_len: 2,
            pred_len: 1,
        };
        let s = normalize(&w);
        assert_eq!(s.relative_position(0, 1), [3.0, 4.0]);
    }

    #[test]
    fn leave_one_out_iterates_every_subset() {
        let names = ["eth", "hotel", "univ", "zara1", "zara2"];
        let subsets: Vec<(String, Vec<usize>)> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (String::from(*n), vec![i]))
            .collect();
        let (train, test) = leave_one_out_split(&subsets, "zara2").unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test, vec![4]);
        let mut seen = vec![0; 5];
        for n in names {
            let (_, test) = leave_one_out_split(&subsets, n).unwrap();
            for i in test {
                seen[i] += 1;
            }
        }
        assert_eq!(seen, vec![1; 5]);
        assert_eq!(
            leave_one_out_split(&subsets, "nowhere"),
            Err(Error::UnknownSubset("nowhere".into()))
        );
    }

    #[test]
    fn noise_free_single_exit_is_a_polyline() {
        let mut cfg = JunctionConfig::uniform(3, 1, 0.0, 5);
        cfg.speed_range = (0.5, 0.5);
        let data = synth_junction(&cfg).unwrap();
        let windows = build_windows(&data.table, 8, 12, 1).unwrap();
        assert_eq!(windows.len(), 3);
        for w in &windows {
            let j = w.position(0, 7);
            for t in 0..8 {
                let p = w.position(0, t);
                assert_eq!(p[1], j[1]);
                assert_eq!(j[0] - p[0], (7 - t) as f64 * 0.5);
            }
            for k in 1..=12 {
                let p = w.position(0, 7 + k);
                assert!(math::abs(p[0] - j[0]) < 1e-4);
                assert!(math::abs(p[1] - j[1] - 0.5 * k as f64) < 1e-4);
            }
        }
    }

    #[test]
    fn junction_is_deterministic_under_seed() {
        let cfg = JunctionConfig::uniform(20, 3, 0.05, 11);
        let a = synth_junction(&cfg).unwrap();
        let b = synth_junction(&cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.branches, b.branches);
    }

    #[test]
    fn junction_branch_frequencies_match_probabilities() {
        let cfg = JunctionConfig::uniform(3000, 3, 0.05, 2);
        let data = synth_junction(&cfg).unwrap();
        let mut counts = [0usize; 3];
        for &e in data.branches.values() {
            counts[e] += 1;
        }
        for c in counts {
            let freq = c as f64 / 3000.0;
            assert!(math::abs(freq - 1.0 / 3.0) <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn junction_rejects_bad_probabilities() {
        let mut cfg = JunctionConfig::uniform(5, 3, 0.0, 0);
        cfg.branch_probs = vec![0.5, 0.6, -0.1];
        assert!(synth_junction(&cfg).is_err());
        cfg.branch_probs = vec![0.5, 0.5];
        assert!(synth_junction(&cfg).is_err());
    }
}
