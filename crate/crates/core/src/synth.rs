//! Synthetic event logs with known, time-varying functional groups.
//!
//! Nodes are partitioned into groups; each group experiences cascades whose
//! onset times are uniform over the record. A cascade makes a weighted
//! selection of current group members emit one event each within `max_delay`
//! samples of the onset. Scheduled membership changes move nodes between
//! groups at evenly spaced step times.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::events::{EventError, EventLog};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {key}: {reason}")]
    BadConfig { key: &'static str, reason: String },
    #[error("cascade for group {group} selects zero devices (per_dev {per_dev} of {size})")]
    EmptyCascade { group: u32, per_dev: f64, size: usize },
    #[error("group {group} was emptied by membership churn at sample {sample}")]
    EmptyGroup { group: u32, sample: u64 },
    #[error("sample {0} outside the record")]
    SampleOutOfRange(u64),
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Generator configuration. Serialized as a key-value file with the keys
/// `N, n_fg, n_casc, per_dev, d_max, T, n_step, n_change, seed`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    /// Node count `N`; must be divisible by `num_groups`.
    pub num_nodes: u32,
    /// Functional group count `n_fg`.
    pub num_groups: u32,
    /// Cascades per group `n_casc`.
    pub cascades_per_group: u32,
    /// Proportion of current group members per cascade `per_dev`, in (0,1].
    pub device_fraction: f64,
    /// Maximal event delay after a cascade onset `d_max`, in samples.
    pub max_delay: u64,
    /// Record length `T` in samples.
    pub record_len: u64,
    /// Number of membership change steps `n_step`.
    pub change_steps: u32,
    /// Devices moved per step `n_change`.
    pub devices_per_change: u32,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |key: &'static str, reason: String| Err(SynthError::BadConfig { key, reason });
        if self.num_groups == 0 {
            return bad("n_fg", "must be at least 1".into());
        }
        if self.num_nodes == 0 || self.num_nodes % self.num_groups != 0 {
            return bad(
                "N",
                format!("{} is not divisible by n_fg={}", self.num_nodes, self.num_groups),
            );
        }
        if !(self.device_fraction > 0.0 && self.device_fraction <= 1.0) {
            return bad("per_dev", format!("{} not in (0,1]", self.device_fraction));
        }
        if self.record_len <= self.max_delay {
            return bad(
                "T",
                format!("{} must exceed d_max={}", self.record_len, self.max_delay),
            );
        }
        if self.change_steps as u64 + 1 > self.record_len {
            return bad("n_step", "more steps than samples".into());
        }
        let group_size = self.num_nodes / self.num_groups;
        if (self.device_fraction * group_size as f64).round() < 1.0 {
            return bad(
                "per_dev",
                format!(
                    "{} of a group of {group_size} rounds to zero devices",
                    self.device_fraction
                ),
            );
        }
        Ok(())
    }

    /// Key-value serialization, keys matching the published field names.
    pub fn write_kv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "N={}", self.num_nodes)?;
        writeln!(w, "n_fg={}", self.num_groups)?;
        writeln!(w, "n_casc={}", self.cascades_per_group)?;
        writeln!(w, "per_dev={}", self.device_fraction)?;
        writeln!(w, "d_max={}", self.max_delay)?;
        writeln!(w, "T={}", self.record_len)?;
        writeln!(w, "n_step={}", self.change_steps)?;
        writeln!(w, "n_change={}", self.devices_per_change)?;
        writeln!(w, "seed={}", self.seed)
    }

    pub fn read_kv(text: &str) -> Result<Self, SynthError> {
        let mut cfg = reference_config(0);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SynthError::BadConfig {
                key: "",
                reason: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_int = |k: &'static str| -> Result<u64, SynthError> {
                value.parse().map_err(|_| SynthError::BadConfig {
                    key: k,
                    reason: format!("invalid integer {value:?}"),
                })
            };
            match key {
                "N" => cfg.num_nodes = parse_int("N")? as u32,
                "n_fg" => cfg.num_groups = parse_int("n_fg")? as u32,
                "n_casc" => cfg.cascades_per_group = parse_int("n_casc")? as u32,
                "per_dev" => {
                    cfg.device_fraction = value.parse().map_err(|_| SynthError::BadConfig {
                        key: "per_dev",
                        reason: format!("invalid number {value:?}"),
                    })?
                }
                "d_max" => cfg.max_delay = parse_int("d_max")?,
                "T" => cfg.record_len = parse_int("T")?,
                "n_step" => cfg.change_steps = parse_int("n_step")? as u32,
                "n_change" => cfg.devices_per_change = parse_int("n_change")? as u32,
                "seed" => cfg.seed = parse_int("seed")?,
                other => {
                    return Err(SynthError::BadConfig {
                        key: "",
                        reason: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The benchmark reference network: 100 nodes in 10 groups, 200 cascades per
/// group over 10 days at 1 s sampling, half the group per cascade, 60 s
/// maximal delay, 50 change steps.
pub fn reference_config(devices_per_change: u32) -> SyntheticConfig {
    SyntheticConfig {
        num_nodes: 100,
        num_groups: 10,
        cascades_per_group: 200,
        device_fraction: 0.5,
        max_delay: 60,
        record_len: 10 * 86_400,
        change_steps: 50,
        devices_per_change,
        seed: 0,
    }
}

/// Time-resolved node-to-group membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    /// `(start_sample, end_sample_exclusive, group_of_node)`; intervals tile
    /// `[0, T)`.
    pub intervals: Vec<(u64, u64, Vec<u32>)>,
    pub change_times: Vec<u64>,
    pub num_groups: u32,
}

impl GroundTruth {
    pub fn record_len(&self) -> u64 {
        self.intervals.last().map(|i| i.1).unwrap_or(0)
    }

    pub fn num_nodes(&self) -> usize {
        self.intervals.first().map(|i| i.2.len()).unwrap_or(0)
    }

    /// Membership of the interval containing `t`.
    pub fn membership_at(&self, t: u64) -> Result<&[u32], SynthError> {
        self.intervals
            .iter()
            .find(|(s, e, _)| t >= *s && t < *e)
            .map(|(_, _, m)| m.as_slice())
            .ok_or(SynthError::SampleOutOfRange(t))
    }

    /// CSV rows `start_sample,end_sample,node_id,group_id`, one row per node
    /// per interval. Node ids follow the generator's naming.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "start_sample,end_sample,node_id,group_id")?;
        let width = node_name_width(self.num_nodes());
        for (start, end, members) in &self.intervals {
            for (node, group) in members.iter().enumerate() {
                writeln!(w, "{start},{end},n{node:0width$},{group}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, SynthError> {
        let mut rows: Vec<(u64, u64, String, u32)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 4 {
                return Err(SynthError::BadConfig {
                    key: "",
                    reason: format!("ground truth line {}: expected 4 fields", idx + 1),
                });
            }
            let parse = |s: &str| -> Result<u64, SynthError> {
                s.parse().map_err(|_| SynthError::BadConfig {
                    key: "",
                    reason: format!("ground truth line {}: bad number {s:?}", idx + 1),
                })
            };
            rows.push((
                parse(fields[0])?,
                parse(fields[1])?,
                fields[2].to_string(),
                parse(fields[3])? as u32,
            ));
        }
        // Node index = rank of its id within an interval (ids are
        // zero-padded, so lexicographic order matches the numeric one).
        let mut intervals: BTreeMap<(u64, u64), Vec<(String, u32)>> = BTreeMap::new();
        for (s, e, node, group) in rows {
            intervals.entry((s, e)).or_default().push((node, group));
        }
        let mut out = Vec::new();
        let mut num_groups = 0;
        for ((s, e), mut members) in intervals {
            members.sort_unstable();
            let groups: Vec<u32> = members.into_iter().map(|(_, g)| g).collect();
            num_groups = num_groups.max(groups.iter().copied().max().unwrap_or(0) + 1);
            out.push((s, e, groups));
        }
        let mut change_times: Vec<u64> = out.iter().skip(1).map(|(s, _, _)| *s).collect();
        change_times.dedup();
        Ok(Self {
            intervals: out,
            change_times,
            num_groups,
        })
    }
}

pub(crate) fn node_name_width(num_nodes: usize) -> usize {
    num_nodes.saturating_sub(1).max(1).to_string().len()
}

pub fn node_name(node: u32, num_nodes: usize) -> String {
    let width = node_name_width(num_nodes);
    format!("n{node:0width$}", node = node)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Selection {
    /// Weight 1 + events emitted so far (rich-get-richer).
    Preferential,
    /// Uniform over current members; only used to contrast distributions.
    #[allow(dead_code)]
    Uniform,
}

/// Generates an event log and its ground truth from a seeded generator.
/// Identical seeds give identical output.
pub fn generate(config: &SyntheticConfig) -> Result<(EventLog, GroundTruth), SynthError> {
    generate_with_selection(config, Selection::Preferential).map(|(log, gt, _)| (log, gt))
}

/// Like [`generate`], also returning the `(onset, group)` cascade schedule.
pub(crate) fn generate_with_selection(
    config: &SyntheticConfig,
    selection: Selection,
) -> Result<(EventLog, GroundTruth, Vec<(u64, u32)>), SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_nodes as usize;
    let n_fg = config.num_groups;

    // Step times are deterministic: step i at floor((i+1) * T / (n_step+1)).
    let change_times: Vec<u64> = (0..config.change_steps as u64)
        .map(|i| (i + 1) * config.record_len / (config.change_steps as u64 + 1))
        .collect();

    // Churn is drawn up front so cascades can interleave with it in time
    // order: each step moves `n_change` distinct nodes, each to a uniformly
    // chosen different group.
    let mut membership: Vec<u32> = (0..n as u32).map(|i| i % n_fg).collect();
    // Initial partition groups nodes round-robin; the initial size is N/n_fg.
    let mut moves_per_step: Vec<Vec<(u32, u32)>> = Vec::with_capacity(change_times.len());
    {
        let mut m = membership.clone();
        for _ in &change_times {
            let chosen = sample_indices(&mut rng, n, (config.devices_per_change as usize).min(n));
            let mut moves = Vec::with_capacity(chosen.len());
            for node in chosen {
                let old = m[node];
                let new = if n_fg == 1 {
                    old
                } else {
                    let mut g = rng.random_range(0..n_fg - 1);
                    if g >= old {
                        g += 1;
                    }
                    g
                };
                m[node] = new;
                moves.push((node as u32, new));
            }
            moves_per_step.push(moves);
        }
    }

    // Cascade onsets, uniform over [0, T - d_max) so every event stays in
    // record; sorted globally so preferential weights see prior events only.
    let mut cascades: Vec<(u64, u32)> = Vec::new();
    for group in 0..n_fg {
        for _ in 0..config.cascades_per_group {
            cascades.push((rng.random_range(0..config.record_len - config.max_delay), group));
        }
    }
    cascades.sort_unstable();

    let mut intervals: Vec<(u64, u64, Vec<u32>)> = Vec::new();
    let mut interval_start = 0u64;
    let mut events_per_node: Vec<u64> = vec![0; n];
    let mut event_sets: Vec<Vec<u64>> = vec![Vec::new(); n];
    let mut next_step = 0usize;

    let mut apply_steps_until = |t: u64,
                                 membership: &mut Vec<u32>,
                                 intervals: &mut Vec<(u64, u64, Vec<u32>)>,
                                 interval_start: &mut u64,
                                 next_step: &mut usize| {
        while *next_step < change_times.len() && change_times[*next_step] <= t {
            let step_time = change_times[*next_step];
            intervals.push((*interval_start, step_time, membership.clone()));
            for &(node, group) in &moves_per_step[*next_step] {
                membership[node as usize] = group;
            }
            *interval_start = step_time;
            *next_step += 1;
        }
    };

    for &(onset, group) in &cascades {
        apply_steps_until(
            onset,
            &mut membership,
            &mut intervals,
            &mut interval_start,
            &mut next_step,
        );
        let members: Vec<u32> = membership
            .iter()
            .enumerate()
            .filter_map(|(i, &g)| (g == group).then_some(i as u32))
            .collect();
        if members.is_empty() {
            return Err(SynthError::EmptyGroup {
                group,
                sample: onset,
            });
        }
        let want = (config.device_fraction * members.len() as f64).round() as usize;
        if want == 0 {
            return Err(SynthError::EmptyCascade {
                group,
                per_dev: config.device_fraction,
                size: members.len(),
            });
        }
        let want = want.max(1).min(members.len());

        let selected = match selection {
            Selection::Preferential => {
                select_weighted(&mut rng, &members, &events_per_node, want)
            }
            Selection::Uniform => sample_indices(&mut rng, members.len(), want)
                .into_iter()
                .map(|i| members[i])
                .collect(),
        };

        for node in selected {
            let delay = rng.random_range(0..=config.max_delay);
            let t = onset + delay;
            let times = &mut event_sets[node as usize];
            // Collisions (an event already at this sample) are dropped.
            match times.binary_search(&t) {
                Ok(_) => {}
                Err(pos) => {
                    times.insert(pos, t);
                    events_per_node[node as usize] += 1;
                }
            }
        }
    }
    // Flush remaining steps and close the last interval.
    apply_steps_until(
        config.record_len,
        &mut membership,
        &mut intervals,
        &mut interval_start,
        &mut next_step,
    );
    intervals.push((interval_start, config.record_len, membership));

    let events = event_sets
        .into_iter()
        .enumerate()
        .flat_map(|(node, times)| {
            let name = node_name(node as u32, n);
            times.into_iter().map(move |t| (name.clone(), t))
        })
        .collect::<Vec<_>>();
    let log = EventLog::from_events(events, 1.0, Some(config.record_len))?;

    Ok((
        log,
        GroundTruth {
            intervals,
            change_times,
            num_groups: n_fg,
        },
        cascades,
    ))
}

/// Sequential weighted sampling without replacement; weight is one plus the
/// events the device emitted so far.
fn select_weighted(
    rng: &mut ChaCha8Rng,
    members: &[u32],
    events_per_node: &[u64],
    want: usize,
) -> Vec<u32> {
    let mut pool: Vec<u32> = members.to_vec();
    let mut weights: Vec<u64> = pool
        .iter()
        .map(|&node| 1 + events_per_node[node as usize])
        .collect();
    let mut out = Vec::with_capacity(want);
    for _ in 0..want {
        let total: u64 = weights.iter().sum();
        let mut pick = rng.random_range(0..total);
        let mut idx = 0;
        while pick >= weights[idx] {
            pick -= weights[idx];
            idx += 1;
        }
        out.push(pool[idx]);
        pool.swap_remove(idx);
        weights.swap_remove(idx);
    }
    out
}
