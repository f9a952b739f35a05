//! Sparse per-node event series: ingestion, windowing and lag co-occurrence
//! histograms.
//!
//! Event times are integer sample indices (one sample = `sample_period`
//! seconds, 1 s by default). A node emits at most one event per sample, so a
//! series is a strictly increasing sequence of samples in `[0, T)`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

use crate::par;

/// Index of a node within an [`EventLog`] (nodes are sorted by id).
pub type NodeRef = u32;

/// Unordered node pair, kept with `a < b` under the log's node order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodePair {
    pub a: NodeRef,
    pub b: NodeRef,
}

impl NodePair {
    pub fn new(x: NodeRef, y: NodeRef) -> Self {
        if x <= y {
            Self { a: x, b: y }
        } else {
            Self { a: y, b: x }
        }
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("input contains no events")]
    Empty,
    #[error("series for node {node} is not strictly increasing at sample {sample}")]
    NotIncreasing { node: String, sample: u64 },
    #[error("event at sample {sample} is outside the record length {record_len}")]
    OutOfRecord { sample: u64, record_len: u64 },
    #[error("sample period must be positive and finite, got {0}")]
    BadSamplePeriod(f64),
    #[error("window index {index} out of range (have {count} windows)")]
    WindowOutOfRange { index: u32, count: u32 },
    #[error("invalid window spec: {0}")]
    BadWindowSpec(String),
    #[error("histogram has no co-occurrences")]
    EmptyHistogram,
    #[error("negligible fraction must be in (0,1), got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input format for [`EventLog::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    /// `node_id,timestamp` with a header row.
    Csv,
    /// One JSON object per line with `node_id` and `timestamp` fields.
    Ndjson,
}

/// One node's event times, strictly increasing sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSeries {
    pub node_id: String,
    times: Vec<u64>,
}

impl EventSeries {
    /// Builds a series, checking that times are strictly increasing.
    pub fn new(node_id: impl Into<String>, times: Vec<u64>) -> Result<Self, EventError> {
        let node_id = node_id.into();
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(EventError::NotIncreasing {
                    node: node_id,
                    sample: w[1],
                });
            }
        }
        Ok(Self { node_id, times })
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A collection of event series over a common record `[0, T)`.
///
/// Series are stored sorted by node id, so [`NodeRef`] indices are stable and
/// follow the lexicographic order of the ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    series: Vec<EventSeries>,
    record_len: u64,
    sample_period: f64,
}

impl EventLog {
    /// Builds a log from raw `(node_id, sample)` pairs.
    ///
    /// Duplicate `(node, sample)` pairs collapse to a single event. Unless
    /// `record_len` is given, `T` is the largest sample index plus one.
    pub fn from_events(
        events: impl IntoIterator<Item = (String, u64)>,
        sample_period: f64,
        record_len: Option<u64>,
    ) -> Result<Self, EventError> {
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(EventError::BadSamplePeriod(sample_period));
        }
        let mut rows: Vec<(String, u64)> = events.into_iter().collect();
        if rows.is_empty() {
            return Err(EventError::Empty);
        }
        rows.sort_unstable();
        rows.dedup();

        let max_sample = rows.iter().map(|r| r.1).max().unwrap();
        let record_len = match record_len {
            Some(t) => {
                if t <= max_sample {
                    return Err(EventError::OutOfRecord {
                        sample: max_sample,
                        record_len: t,
                    });
                }
                t
            }
            None => max_sample + 1,
        };

        let mut series: Vec<EventSeries> = Vec::new();
        for (node, sample) in rows {
            match series.last_mut() {
                Some(last) if last.node_id == node => last.times.push(sample),
                _ => series.push(EventSeries {
                    node_id: node,
                    times: vec![sample],
                }),
            }
        }
        Ok(Self {
            series,
            record_len,
            sample_period,
        })
    }

    /// Loads a log from a CSV or NDJSON stream.
    ///
    /// Timestamps are in seconds and quantized to sample indices by floor
    /// division with `sample_period`. Extra columns/fields (such as an event
    /// type) are ignored.
    pub fn load(
        source: impl Read,
        format: LogFormat,
        sample_period: f64,
        record_len: Option<u64>,
    ) -> Result<Self, EventError> {
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(EventError::BadSamplePeriod(sample_period));
        }
        let reader = BufReader::new(source);
        let mut events: Vec<(String, u64)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            match format {
                LogFormat::Csv => {
                    if idx == 0 {
                        if !trimmed.starts_with("node_id,timestamp") {
                            return Err(EventError::Parse {
                                line: lineno,
                                reason: "expected header starting with node_id,timestamp".into(),
                            });
                        }
                        continue;
                    }
                    let mut fields = trimmed.splitn(3, ',');
                    let node = fields.next().unwrap_or("");
                    let ts = fields.next().ok_or_else(|| EventError::Parse {
                        line: lineno,
                        reason: "missing timestamp field".into(),
                    })?;
                    if node.is_empty() {
                        return Err(EventError::Parse {
                            line: lineno,
                            reason: "empty node_id".into(),
                        });
                    }
                    let ts: f64 = ts.trim().parse().map_err(|_| EventError::Parse {
                        line: lineno,
                        reason: format!("invalid timestamp {ts:?}"),
                    })?;
                    let sample = quantize(ts, sample_period).ok_or_else(|| EventError::Parse {
                        line: lineno,
                        reason: format!("timestamp {ts} is negative or not finite"),
                    })?;
                    events.push((node.to_string(), sample));
                }
                LogFormat::Ndjson => {
                    let (node, ts) =
                        parse_ndjson_record(trimmed).map_err(|reason| EventError::Parse {
                            line: lineno,
                            reason,
                        })?;
                    let sample = quantize(ts, sample_period).ok_or_else(|| EventError::Parse {
                        line: lineno,
                        reason: format!("timestamp {ts} is negative or not finite"),
                    })?;
                    events.push((node, sample));
                }
            }
        }
        if events.is_empty() {
            return Err(EventError::Empty);
        }
        Self::from_events(events, sample_period, record_len)
    }

    /// Writes the log as CSV, rows sorted by `(node_id, timestamp)`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "node_id,timestamp")?;
        for s in &self.series {
            for &t in &s.times {
                writeln!(w, "{},{}", s.node_id, t as f64 * self.sample_period)?;
            }
        }
        Ok(())
    }

    pub fn record_len(&self) -> u64 {
        self.record_len
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn num_nodes(&self) -> usize {
        self.series.len()
    }

    pub fn total_events(&self) -> usize {
        self.series.iter().map(|s| s.times.len()).sum()
    }

    pub fn series(&self) -> &[EventSeries] {
        &self.series
    }

    pub fn node_name(&self, node: NodeRef) -> &str {
        &self.series[node as usize].node_id
    }

    pub fn node_index(&self, name: &str) -> Option<NodeRef> {
        self.series
            .binary_search_by(|s| s.node_id.as_str().cmp(name))
            .ok()
            .map(|i| i as NodeRef)
    }

    /// Events of window `w`, re-based to window-local time. Nodes with no
    /// events in the window are omitted.
    pub fn window_slice(&self, spec: &WindowSpec, w: u32) -> Result<EventLog, EventError> {
        let view = self.window_view(spec, w)?;
        let start = w as u64 * spec.window_length;
        let series = view
            .nodes
            .iter()
            .map(|(idx, times)| EventSeries {
                node_id: self.series[*idx as usize].node_id.clone(),
                times: times.iter().map(|t| t - start).collect(),
            })
            .collect();
        Ok(EventLog {
            series,
            record_len: spec.window_length,
            sample_period: self.sample_period,
        })
    }

    /// Zero-copy view of window `w`: active nodes with their in-window event
    /// slices (absolute times). Lag arithmetic only uses differences, so no
    /// re-basing is needed.
    pub fn window_view(&self, spec: &WindowSpec, w: u32) -> Result<WindowView<'_>, EventError> {
        spec.validate(self.record_len)?;
        if w >= spec.num_windows {
            return Err(EventError::WindowOutOfRange {
                index: w,
                count: spec.num_windows,
            });
        }
        let start = w as u64 * spec.window_length;
        let end = start + spec.window_length;
        let nodes = self
            .series
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let lo = s.times.partition_point(|&t| t < start);
                let hi = s.times.partition_point(|&t| t < end);
                (lo < hi).then(|| (i as NodeRef, &s.times[lo..hi]))
            })
            .collect();
        Ok(WindowView { window: w, nodes })
    }
}

/// Active nodes of one window with their event slices.
#[derive(Debug, Clone)]
pub struct WindowView<'a> {
    pub window: u32,
    /// Sorted by node index; every slice is non-empty.
    pub nodes: Vec<(NodeRef, &'a [u64])>,
}

/// Contiguous, non-overlapping windows starting at sample 0. Trailing samples
/// beyond `num_windows * window_length` are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub window_length: u64,
    pub num_windows: u32,
}

impl WindowSpec {
    pub fn new(window_length: u64, num_windows: u32) -> Result<Self, EventError> {
        if window_length == 0 {
            return Err(EventError::BadWindowSpec("window_length must be >= 1".into()));
        }
        if num_windows == 0 {
            return Err(EventError::BadWindowSpec("num_windows must be >= 1".into()));
        }
        Ok(Self {
            window_length,
            num_windows,
        })
    }

    /// Splits `[0, record_len)` into `n` equal windows of length `T / n`.
    pub fn by_count(record_len: u64, n: u32) -> Result<Self, EventError> {
        let len = record_len / n as u64;
        if len == 0 {
            return Err(EventError::BadWindowSpec(format!(
                "record of {record_len} samples cannot hold {n} windows"
            )));
        }
        Self::new(len, n)
    }

    /// As many windows of length `len` as fit in the record.
    pub fn by_length(record_len: u64, len: u64) -> Result<Self, EventError> {
        if len == 0 || len > record_len {
            return Err(EventError::BadWindowSpec(format!(
                "window length {len} does not fit a record of {record_len} samples"
            )));
        }
        Self::new(len, (record_len / len) as u32)
    }

    pub fn validate(&self, record_len: u64) -> Result<(), EventError> {
        if self.num_windows as u64 * self.window_length > record_len {
            return Err(EventError::BadWindowSpec(format!(
                "{} windows of {} samples exceed the record length {record_len}",
                self.num_windows, self.window_length
            )));
        }
        Ok(())
    }
}

/// Counts of cross-node event co-occurrences per absolute lag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagHistogram {
    /// `counts[dt]` for `dt` in `0..=max_lag`.
    pub counts: Vec<u64>,
}

impl LagHistogram {
    pub fn max_lag(&self) -> u64 {
        self.counts.len() as u64 - 1
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "lag,count")?;
        for (lag, c) in self.counts.iter().enumerate() {
            writeln!(w, "{lag},{c}")?;
        }
        Ok(())
    }
}

/// Histogram of `|t_i - t_j|` over all cross-node event pairs, up to
/// `max_lag`. Each unordered pair is counted once.
pub fn lag_cooccurrence_histogram(log: &EventLog, max_lag: u64) -> LagHistogram {
    let mut merged: Vec<(u64, NodeRef)> = Vec::with_capacity(log.total_events());
    for (i, s) in log.series.iter().enumerate() {
        merged.extend(s.times.iter().map(|&t| (t, i as NodeRef)));
    }
    par::sort_unstable(&mut merged);

    let counts = par::fold_counts(merged.len(), max_lag as usize + 1, |counts, i| {
        let (ti, ni) = merged[i];
        for &(tj, nj) in &merged[i + 1..] {
            if tj - ti > max_lag {
                break;
            }
            if ni != nj {
                counts[(tj - ti) as usize] += 1;
            }
        }
    });
    LagHistogram { counts }
}

/// Smallest `tau` whose tail mass (lags strictly above `tau`) is at most
/// `negligible_fraction` of the histogram total.
pub fn estimate_tau_max(hist: &LagHistogram, negligible_fraction: f64) -> Result<u64, EventError> {
    if !(negligible_fraction > 0.0 && negligible_fraction < 1.0) {
        return Err(EventError::BadFraction(negligible_fraction));
    }
    let total = hist.total();
    if total == 0 {
        return Err(EventError::EmptyHistogram);
    }
    let budget = negligible_fraction * total as f64;
    let mut tail = 0u64;
    // Scan from the largest lag down; the first time the tail exceeds the
    // budget the previous tau was the answer.
    for tau in (0..hist.counts.len()).rev() {
        let new_tail = tail + hist.counts[tau];
        if new_tail as f64 > budget {
            return Ok(tau as u64);
        }
        tail = new_tail;
    }
    Ok(0)
}

fn quantize(ts: f64, sample_period: f64) -> Option<u64> {
    if !ts.is_finite() || ts < 0.0 {
        return None;
    }
    Some((ts / sample_period).floor() as u64)
}

/// Minimal NDJSON record parser: `node_id` (string) and `timestamp` (number)
/// are extracted, everything else is ignored.
fn parse_ndjson_record(line: &str) -> Result<(String, f64), String> {
    let inner = line
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| "not a JSON object".to_string())?;

    let mut node: Option<String> = None;
    let mut ts: Option<f64> = None;
    let mut rest = inner.trim_start();
    while !rest.is_empty() {
        let (key, after_key) = parse_json_string(rest)?;
        let after_colon = after_key
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| format!("missing ':' after key {key:?}"))?
            .trim_start();
        let value_end = json_value_end(after_colon)?;
        let (value, tail) = after_colon.split_at(value_end);
        match key.as_str() {
            "node_id" => {
                let (s, leftover) = parse_json_string(value)?;
                if !leftover.trim().is_empty() {
                    return Err("trailing data after node_id".into());
                }
                node = Some(s);
            }
            "timestamp" => {
                ts = Some(
                    value
                        .trim()
                        .parse()
                        .map_err(|_| format!("timestamp {value:?} is not a number"))?,
                );
            }
            _ => {}
        }
        rest = tail.trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("unexpected content {rest:?}"));
        }
    }
    match (node, ts) {
        (Some(n), Some(t)) => Ok((n, t)),
        (None, _) => Err("missing node_id field".into()),
        (_, None) => Err("missing timestamp field".into()),
    }
}

fn parse_json_string(s: &str) -> Result<(String, &str), String> {
    let s = s
        .trim_start()
        .strip_prefix('"')
        .ok_or_else(|| format!("expected string at {s:?}"))?;
    let mut out = String::new();
    let mut chars = s.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Ok((out, &s[i + 1..])),
            '\\' => {
                let (_, esc) = chars.next().ok_or("truncated escape")?;
                match esc {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    '/' => out.push('/'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    other => return Err(format!("unsupported escape \\{other}")),
                }
            }
            c => out.push(c),
        }
    }
    Err("unterminated string".into())
}

fn json_value_end(s: &str) -> Result<usize, String> {
    if s.starts_with('"') {
        let (_, rest) = parse_json_string(s)?;
        Ok(s.len() - rest.len())
    } else {
        Ok(s
            .find(|c| c == ',' || c == '}')
            .unwrap_or(s.len()))
    }
}
