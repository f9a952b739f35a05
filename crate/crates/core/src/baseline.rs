//! Classical correlation-based inference used as a benchmark.
//!
//! Series are binned, pairs get a Pearson correlation over the binned counts,
//! the correlation is z-transformed and an edge is added when the z value
//! exceeds a multiple of the null standard deviation `1/sqrt(D-3)`.

use thiserror::Error;

use crate::events::{EventLog, EventSeries, NodePair};
use crate::model::TopologySnapshot;
use crate::par;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("bin width must be at least 1")]
    BadBinWidth,
    #[error("record of {record_len} samples with bin width {bin_width} gives {bins} bins; at least 4 required")]
    TooFewBins {
        record_len: u64,
        bin_width: u64,
        bins: u64,
    },
    #[error("bin counts of {0} and {1} have different lengths")]
    LengthMismatch(usize, usize),
    #[error("series {0} has zero variance, correlation undefined")]
    ZeroVariance(String),
    #[error("z threshold must be positive, got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaselineConfig {
    /// Bin duration in samples.
    pub bin_width: u64,
    /// Edge decision threshold: edge iff `z > z_alpha * sigma_z`.
    pub z_alpha: f64,
    /// Reproduce the published z formula verbatim instead of the standard
    /// Fisher transformation. Off by default; the verbatim form is not the
    /// Fisher transform (it is undefined at r = 0) and is kept only for
    /// strict reproduction attempts.
    pub paper_literal_z: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bin_width: 60,
            z_alpha: 2.33,
            paper_literal_z: false,
        }
    }
}

/// Event counts per bin, stored sparsely as `(bin, count)` for the non-zero
/// bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedSeries {
    pub node_id: String,
    pub num_bins: u64,
    entries: Vec<(u64, u64)>,
}

impl BinnedSeries {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn count(&self, bin: u64) -> u64 {
        self.entries
            .binary_search_by_key(&bin, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<u64> {
        let mut out = vec![0; self.num_bins as usize];
        for &(bin, c) in &self.entries {
            out[bin as usize] = c;
        }
        out
    }

    fn sums(&self) -> (f64, f64) {
        let sum: u64 = self.entries.iter().map(|e| e.1).sum();
        let sum_sq: u64 = self.entries.iter().map(|e| e.1 * e.1).sum();
        (sum as f64, sum_sq as f64)
    }
}

/// Bins one series: `counts[i]` counts events in `[i*bin_width, (i+1)*bin_width)`.
/// A trailing partial bin is dropped.
pub fn bin_series(
    series: &EventSeries,
    bin_width: u64,
    record_len: u64,
) -> Result<BinnedSeries, BaselineError> {
    if bin_width == 0 {
        return Err(BaselineError::BadBinWidth);
    }
    let num_bins = record_len / bin_width;
    if num_bins < 4 {
        return Err(BaselineError::TooFewBins {
            record_len,
            bin_width,
            bins: num_bins,
        });
    }
    let mut entries: Vec<(u64, u64)> = Vec::new();
    for &t in series.times() {
        let bin = t / bin_width;
        if bin >= num_bins {
            continue; // trailing partial bin
        }
        match entries.last_mut() {
            Some(last) if last.0 == bin => last.1 += 1,
            _ => entries.push((bin, 1)),
        }
    }
    Ok(BinnedSeries {
        node_id: series.node_id.clone(),
        num_bins,
        entries,
    })
}

/// Pearson correlation over binned counts with the sample standard deviation
/// (divisor `D - 1`).
pub fn pearson_r(x: &BinnedSeries, y: &BinnedSeries) -> Result<f64, BaselineError> {
    if x.num_bins != y.num_bins {
        return Err(BaselineError::LengthMismatch(
            x.num_bins as usize,
            y.num_bins as usize,
        ));
    }
    let d = x.num_bins as f64;
    let (sx, sxx) = x.sums();
    let (sy, syy) = y.sums();
    let var_x = (sxx - sx * sx / d) / (d - 1.0);
    let var_y = (syy - sy * sy / d) / (d - 1.0);
    if var_x <= 0.0 {
        return Err(BaselineError::ZeroVariance(x.node_id.clone()));
    }
    if var_y <= 0.0 {
        return Err(BaselineError::ZeroVariance(y.node_id.clone()));
    }
    // Cross sum over the intersection of non-zero bins.
    let mut sxy = 0u64;
    let mut i = 0;
    let mut j = 0;
    while i < x.entries.len() && j < y.entries.len() {
        match x.entries[i].0.cmp(&y.entries[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sxy += x.entries[i].1 * y.entries[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let cov = (sxy as f64 - sx * sy / d) / (d - 1.0);
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Fisher z-transformation `0.5 * ln((1+r)/(1-r))`; `|r|` is clamped just
/// inside 1 first.
pub fn fisher_z(r: f64) -> f64 {
    let r = r.clamp(-(1.0 - 1e-12), 1.0 - 1e-12);
    0.5 * ((1.0 + r) / (1.0 - r)).ln()
}

/// The published formula, verbatim: `ln(1 - r) / ln(1 + r)`.
pub fn literal_z(r: f64) -> f64 {
    (1.0 - r).ln() / (1.0 + r).ln()
}

/// Null standard deviation of the z statistic for D bins.
pub fn sigma_z(num_bins: u64) -> f64 {
    1.0 / ((num_bins as f64 - 3.0).sqrt())
}

/// Whole-record correlation topology: an edge for every pair with defined
/// correlation and `z > z_alpha * sigma_z`. Zero-variance series yield no
/// edges.
pub fn baseline_infer(
    log: &EventLog,
    config: &BaselineConfig,
) -> Result<TopologySnapshot, BaselineError> {
    if !(config.z_alpha > 0.0) {
        return Err(BaselineError::BadThreshold(config.z_alpha));
    }
    let binned: Vec<BinnedSeries> = log
        .series()
        .iter()
        .map(|s| bin_series(s, config.bin_width, log.record_len()))
        .collect::<Result<_, _>>()?;
    let num_bins = log.record_len() / config.bin_width;
    let cutoff = config.z_alpha * sigma_z(num_bins);

    let n = binned.len();
    let firsts: Vec<u32> = (0..n as u32).collect();
    let per_node: Vec<Vec<NodePair>> = par::map(&firsts, |&i| {
        let mut edges = Vec::new();
        for j in (i + 1)..n as u32 {
            let Ok(r) = pearson_r(&binned[i as usize], &binned[j as usize]) else {
                continue;
            };
            let z = if config.paper_literal_z {
                literal_z(r)
            } else {
                fisher_z(r)
            };
            if z.is_finite() && z > cutoff {
                edges.push(NodePair::new(i, j));
            }
        }
        edges
    });

    let edges: Vec<NodePair> = per_node.into_iter().flatten().collect();
    Ok(TopologySnapshot {
        window: 0,
        threshold: config.z_alpha,
        edges,
    })
}
