//! Time-varying edge probabilities driven by window scores.
//!
//! Each pair carries a probability that a functional edge exists. A window
//! with a positive score pushes the probability up through the evidence
//! function [`h`], a non-positive score decays it by `k`, and a window without
//! information leaves only the global decay `d`. The four parameters
//! `(alpha, beta, d, k)` are fitted by projected gradient descent on a
//! misclassification error that compares the previous probability against the
//! sign of the next score.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::events::{EventLog, NodePair};
use crate::par;
use crate::scoring::{ScoreStatus, ScoreTable};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {name}: {value}")]
    BadParam { name: &'static str, value: f64 },
    #[error("nothing to fit: no pair has an informative window")]
    NothingToFit,
    #[error("edge threshold must be in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("window index {0} out of range")]
    WindowOutOfRange(u32),
    #[error("malformed params file: {0}")]
    BadParamsFile(String),
}

/// Model parameters.
///
/// `th` (classifier threshold) and `p0` (initial probability) are held fixed
/// during fitting. `decay_on_silence` selects whether the global decay `d`
/// also applies to windows without information (the default) or leaves the
/// probability untouched.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
    pub k: f64,
    pub th: f64,
    pub p0: f64,
    pub decay_on_silence: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            d: 0.999,
            k: 0.9,
            th: 0.5,
            p0: 0.5,
            decay_on_silence: true,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("alpha", self.alpha, self.alpha >= 0.0),
            ("beta", self.beta, self.beta >= 0.0),
            ("d", self.d, (0.0..=1.0).contains(&self.d)),
            ("k", self.k, (0.0..=1.0).contains(&self.k)),
            ("th", self.th, self.th > 0.0 && self.th < 1.0),
            ("p0", self.p0, (0.0..=1.0).contains(&self.p0)),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ModelError::BadParam { name, value });
            }
        }
        Ok(())
    }

    /// Key-value serialization with 17 significant digits.
    pub fn write_kv(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "alpha={:.16e}", self.alpha);
        let _ = writeln!(s, "beta={:.16e}", self.beta);
        let _ = writeln!(s, "d={:.16e}", self.d);
        let _ = writeln!(s, "k={:.16e}", self.k);
        let _ = writeln!(s, "th={:.16e}", self.th);
        let _ = writeln!(s, "p0={:.16e}", self.p0);
        w.write_all(s.as_bytes())
    }

    pub fn read_kv(text: &str) -> Result<Self, ModelError> {
        let mut params = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ModelError::BadParamsFile(format!("expected key=value, got {line:?}")))?;
            let value: f64 = value.trim().parse().map_err(|_| {
                ModelError::BadParamsFile(format!("invalid number for {key}: {value:?}"))
            })?;
            match key.trim() {
                "alpha" => params.alpha = value,
                "beta" => params.beta = value,
                "d" => params.d = value,
                "k" => params.k = value,
                "th" => params.th = value,
                "p0" => params.p0 = value,
                other => {
                    return Err(ModelError::BadParamsFile(format!("unknown key {other:?}")))
                }
            }
        }
        params.validate()?;
        Ok(params)
    }
}

/// Gradient descent settings. `convergence_tol` is absolute; when `None` it
/// defaults to `1e-8` times the initial error. `seed` is recorded for
/// reproducibility; the descent itself is deterministic.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iterations: u32,
    pub convergence_tol: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iterations: 500,
            convergence_tol: None,
            seed: 0,
        }
    }
}

/// Per-pair probability trajectory; `p[0]` is the prior `p0` and `p[t]` the
/// value after processing window `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySeries {
    pub pair: NodePair,
    pub p: Vec<f64>,
}

/// Edges whose probability after window `window` reached `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySnapshot {
    pub window: u32,
    pub threshold: f64,
    pub edges: Vec<NodePair>,
}

impl TopologySnapshot {
    /// Edge list CSV with a leading metadata line.
    pub fn write_csv(
        &self,
        log: &EventLog,
        window_length: u64,
        mut w: impl Write,
    ) -> std::io::Result<()> {
        writeln!(
            w,
            "# window={},window_length={},threshold={}",
            self.window, window_length, self.threshold
        )?;
        writeln!(w, "node_a,node_b")?;
        for e in &self.edges {
            writeln!(w, "{},{}", log.node_name(e.a), log.node_name(e.b))?;
        }
        Ok(())
    }
}

/// Evidence strength of a positive score: `alpha + beta * ln(1 + s)` clamped
/// to `[0, 1]`.
pub fn h(s: f64, alpha: f64, beta: f64) -> f64 {
    (alpha + beta * (1.0 + s).ln()).clamp(0.0, 1.0)
}

/// One probability update step.
pub fn update_probability(p: f64, status: ScoreStatus, params: &ModelParams) -> f64 {
    match status {
        ScoreStatus::Positive(s) => {
            params.d * (1.0 - (1.0 - p) * (1.0 - h(s, params.alpha, params.beta)))
        }
        ScoreStatus::NonPositive(_) => params.d * params.k * p,
        ScoreStatus::NoInformation => {
            if params.decay_on_silence {
                params.d * p
            } else {
                p
            }
        }
    }
}

/// Full trajectory for one status sequence: `p[0] = p0`, then one update per
/// window.
pub fn evolve(statuses: &[ScoreStatus], params: &ModelParams) -> Vec<f64> {
    let mut p = Vec::with_capacity(statuses.len() + 1);
    p.push(params.p0);
    let mut cur = params.p0;
    for &st in statuses {
        cur = update_probability(cur, st, params);
        p.push(cur);
    }
    p
}

/// Informative observations of all pairs, grouped per pair in CSR layout.
///
/// Only windows where both nodes were active appear; everything between is a
/// no-information stretch handled in closed form. Pairs that are never
/// informative carry no evidence and are not tracked.
#[derive(Debug, Clone)]
pub struct PairHistories {
    pub num_windows: u32,
    /// Sorted pairs.
    pairs: Vec<NodePair>,
    /// `offsets[i]..offsets[i+1]` indexes `obs` for pair `i`.
    offsets: Vec<u32>,
    /// `(window, score)` sorted by pair then window.
    obs: Vec<(u32, f64)>,
}

impl PairHistories {
    /// Gathers the per-pair observation lists from per-window score tables.
    /// `tables[w]` must describe window `w`.
    pub fn from_tables(tables: &[ScoreTable]) -> Self {
        let mut flat: Vec<(NodePair, u32, f64)> = Vec::new();
        for table in tables {
            flat.extend(
                table
                    .entries()
                    .iter()
                    .map(|&(pair, s)| (pair, table.window, s)),
            );
        }
        let mut keyed: Vec<((NodePair, u32), f64)> =
            flat.into_iter().map(|(p, w, s)| ((p, w), s)).collect();
        par::sort_unstable_by_key(&mut keyed, |e| e.0);

        let mut pairs: Vec<NodePair> = Vec::new();
        let mut offsets: Vec<u32> = Vec::new();
        let mut obs = Vec::with_capacity(keyed.len());
        for ((pair, w), s) in keyed {
            if pairs.last() != Some(&pair) {
                pairs.push(pair);
                offsets.push(obs.len() as u32);
            }
            obs.push((w, s));
        }
        offsets.push(obs.len() as u32);
        Self {
            num_windows: tables.len() as u32,
            pairs,
            offsets,
            obs,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[NodePair] {
        &self.pairs
    }

    pub fn observations(&self, idx: usize) -> &[(u32, f64)] {
        let s = self.offsets[idx] as usize;
        let e = self.offsets[idx + 1] as usize;
        &self.obs[s..e]
    }

    /// Dense status sequence of one pair over all windows.
    pub fn statuses(&self, idx: usize) -> Vec<ScoreStatus> {
        let mut out = vec![ScoreStatus::NoInformation; self.num_windows as usize];
        for &(w, s) in self.observations(idx) {
            out[w as usize] = if s > 0.0 {
                ScoreStatus::Positive(s)
            } else {
                ScoreStatus::NonPositive(s)
            };
        }
        out
    }

    /// Probability trajectory of one pair (length `num_windows + 1`).
    pub fn evolve_pair(&self, idx: usize, params: &ModelParams) -> Vec<f64> {
        evolve(&self.statuses(idx), params)
    }
}

/// Decay across a stretch of `gap` windows without information.
fn silence_decay(gap: u32, params: &ModelParams) -> f64 {
    if gap == 0 || !params.decay_on_silence {
        1.0
    } else {
        params.d.powi(gap as i32)
    }
}

/// Error contribution of one pair, walking its informative windows with
/// closed-form silent stretches.
fn pair_error(obs: &[(u32, f64)], params: &ModelParams) -> f64 {
    let mut e = 0.0;
    let mut p = params.p0;
    let mut prev_w = 0u32;
    for &(w, s) in obs {
        p *= silence_decay(w - prev_w, params);
        if s <= 0.0 {
            if p >= params.th {
                e += p - params.th;
            }
            p = params.d * params.k * p;
        } else {
            if p < params.th {
                e += params.th - p;
            }
            p = params.d * (1.0 - (1.0 - p) * (1.0 - h(s, params.alpha, params.beta)));
        }
        prev_w = w + 1;
    }
    e
}

/// Misclassification error: for every informative window, a positive score
/// with a previous probability below `th` (or a non-positive score with a
/// previous probability at or above `th`) costs the distance to `th`.
pub fn classification_error(histories: &PairHistories, params: &ModelParams) -> f64 {
    par::chunked_sum(
        histories.num_pairs(),
        || 0.0,
        |acc, i| acc + pair_error(histories.observations(i), params),
        |a, b| a + b,
    )
}

/// Forward-mode state: probability plus its partials w.r.t.
/// `(alpha, beta, d, k)`.
#[derive(Debug, Clone, Copy, Default)]
struct Dual {
    p: f64,
    dp: [f64; 4],
}

fn pair_error_gradient(obs: &[(u32, f64)], params: &ModelParams) -> (f64, [f64; 4]) {
    let mut e = 0.0;
    let mut de = [0.0f64; 4];
    let mut st = Dual {
        p: params.p0,
        dp: [0.0; 4],
    };
    let mut prev_w = 0u32;
    for &(w, s) in obs {
        let gap = w - prev_w;
        if gap > 0 && params.decay_on_silence {
            // p' = d^gap * p
            let decay = params.d.powi(gap as i32);
            let ddecay = gap as f64 * params.d.powi(gap as i32 - 1);
            for t in 0..4 {
                st.dp[t] *= decay;
            }
            st.dp[2] += ddecay * st.p;
            st.p *= decay;
        }

        // Error term uses the pre-update probability; the case indicator is
        // frozen at the current iterate (subgradient).
        if s <= 0.0 {
            if st.p >= params.th {
                e += st.p - params.th;
                for t in 0..4 {
                    de[t] += st.dp[t];
                }
            }
            // p' = d * k * p
            let dk = params.d * params.k;
            st.dp[2] = params.k * st.p + dk * st.dp[2];
            st.dp[3] = params.d * st.p + dk * st.dp[3];
            st.dp[0] *= dk;
            st.dp[1] *= dk;
            st.p *= dk;
        } else {
            if st.p < params.th {
                e += params.th - st.p;
                for t in 0..4 {
                    de[t] -= st.dp[t];
                }
            }
            // p' = d * (1 - (1 - p)(1 - h)); in h's clamped regions the
            // partials w.r.t. alpha and beta vanish.
            let v = params.alpha + params.beta * (1.0 + s).ln();
            let hv = v.clamp(0.0, 1.0);
            let interior = v > 0.0 && v < 1.0;
            let dh_da = if interior { 1.0 } else { 0.0 };
            let dh_db = if interior { (1.0 + s).ln() } else { 0.0 };
            let q = (1.0 - st.p) * (1.0 - hv);
            let new_p = params.d * (1.0 - q);
            let da = params.d * ((1.0 - hv) * st.dp[0] + (1.0 - st.p) * dh_da);
            let db = params.d * ((1.0 - hv) * st.dp[1] + (1.0 - st.p) * dh_db);
            let dd = (1.0 - q) + params.d * (1.0 - hv) * st.dp[2];
            let dk = params.d * (1.0 - hv) * st.dp[3];
            st = Dual {
                p: new_p,
                dp: [da, db, dd, dk],
            };
        }
        prev_w = w + 1;
    }
    (e, de)
}

/// Error and its gradient w.r.t. `(alpha, beta, d, k)` by forward
/// accumulation through the probability recursion.
pub fn error_gradient(histories: &PairHistories, params: &ModelParams) -> (f64, [f64; 4]) {
    par::chunked_sum(
        histories.num_pairs(),
        || (0.0, [0.0f64; 4]),
        |(mut e, mut g), i| {
            let (pe, pg) = pair_error_gradient(histories.observations(i), params);
            e += pe;
            for t in 0..4 {
                g[t] += pg[t];
            }
            (e, g)
        },
        |(ea, ga), (eb, gb)| {
            (
                ea + eb,
                [ga[0] + gb[0], ga[1] + gb[1], ga[2] + gb[2], ga[3] + gb[3]],
            )
        },
    )
}

/// Result of a fit.
#[derive(Debug, Clone, Copy)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub initial_error: f64,
    pub final_error: f64,
    pub iterations: u32,
}

fn project(params: &mut ModelParams) {
    params.alpha = params.alpha.max(0.0);
    params.beta = params.beta.max(0.0);
    params.d = params.d.clamp(0.0, 1.0);
    params.k = params.k.clamp(0.0, 1.0);
}

/// Projected gradient descent on the misclassification error over
/// `(alpha, beta, d, k)`; `th` and `p0` stay fixed.
///
/// Steps follow the normalised gradient with a backtracking step size seeded
/// by `learning_rate` (the raw gradient scales with the number of pairs, so a
/// fixed step would not transfer across instance sizes). The best visited
/// parameters are returned.
pub fn fit(
    histories: &PairHistories,
    config: &FitConfig,
    init: &ModelParams,
) -> Result<FitOutcome, ModelError> {
    init.validate()?;
    if histories.num_pairs() == 0 {
        return Err(ModelError::NothingToFit);
    }

    let initial_error = classification_error(histories, init);
    if initial_error == 0.0 {
        return Ok(FitOutcome {
            params: *init,
            initial_error,
            final_error: 0.0,
            iterations: 1,
        });
    }
    let tol = config.convergence_tol.unwrap_or(1e-8 * initial_error);

    let mut current = *init;
    let mut current_e = initial_error;
    let mut best = *init;
    let mut best_e = initial_error;
    let mut step = config.learning_rate;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        let (_, grad) = error_gradient(histories, &current);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let dir = [grad[0] / norm, grad[1] / norm, grad[2] / norm, grad[3] / norm];

        // Backtrack until the error decreases.
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = current;
            trial.alpha -= step * dir[0];
            trial.beta -= step * dir[1];
            trial.d -= step * dir[2];
            trial.k -= step * dir[3];
            project(&mut trial);
            let trial_e = classification_error(histories, &trial);
            if trial_e < current_e {
                let delta = current_e - trial_e;
                current = trial;
                current_e = trial_e;
                if current_e < best_e {
                    best = current;
                    best_e = current_e;
                }
                step = (step * 1.5).min(1.0);
                accepted = delta >= tol;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(FitOutcome {
        params: best,
        initial_error,
        final_error: best_e,
        iterations,
    })
}

/// Thresholded edge set at one window from full probability trajectories.
pub fn infer_topology(
    series: &[ProbabilitySeries],
    window: u32,
    edge_threshold: f64,
) -> Result<TopologySnapshot, ModelError> {
    if !(edge_threshold > 0.0 && edge_threshold < 1.0) {
        return Err(ModelError::BadThreshold(edge_threshold));
    }
    let mut edges = Vec::new();
    for s in series {
        let idx = window as usize + 1;
        if idx >= s.p.len() {
            return Err(ModelError::WindowOutOfRange(window));
        }
        if s.p[idx] >= edge_threshold {
            edges.push(s.pair);
        }
    }
    edges.sort_unstable();
    Ok(TopologySnapshot {
        window,
        threshold: edge_threshold,
        edges,
    })
}

/// Per-window probabilities of every tracked pair, visiting them in pair
/// order. `emit(pair, window, p_after_window)` is called for each window.
pub fn for_each_window_probability(
    histories: &PairHistories,
    params: &ModelParams,
    mut emit: impl FnMut(NodePair, u32, f64),
) {
    for idx in 0..histories.num_pairs() {
        let pair = histories.pairs()[idx];
        let mut p = params.p0;
        let mut obs = histories.observations(idx).iter().peekable();
        for w in 0..histories.num_windows {
            p = match obs.peek() {
                Some(&&(ow, s)) if ow == w => {
                    obs.next();
                    let st = if s > 0.0 {
                        ScoreStatus::Positive(s)
                    } else {
                        ScoreStatus::NonPositive(s)
                    };
                    update_probability(p, st, params)
                }
                _ => update_probability(p, ScoreStatus::NoInformation, params),
            };
            emit(pair, w, p);
        }
    }
}

/// Edge sets of every tracked pair per window above a floor threshold,
/// suitable for sweeping higher thresholds afterwards.
pub fn window_edge_candidates(
    histories: &PairHistories,
    params: &ModelParams,
    floor: f64,
) -> Vec<BTreeMap<NodePair, f64>> {
    let indices: Vec<usize> = (0..histories.num_pairs()).collect();
    let per_pair: Vec<Vec<(u32, NodePair, f64)>> = par::map(&indices, |&idx| {
        let pair = histories.pairs()[idx];
        let mut out = Vec::new();
        let mut p = params.p0;
        let mut obs = histories.observations(idx).iter().peekable();
        for w in 0..histories.num_windows {
            p = match obs.peek() {
                Some(&&(ow, s)) if ow == w => {
                    obs.next();
                    let st = if s > 0.0 {
                        ScoreStatus::Positive(s)
                    } else {
                        ScoreStatus::NonPositive(s)
                    };
                    update_probability(p, st, params)
                }
                _ => update_probability(p, ScoreStatus::NoInformation, params),
            };
            if p >= floor {
                out.push((w, pair, p));
            }
        }
        out
    });
    let mut windows = vec![BTreeMap::new(); histories.num_windows as usize];
    for chunk in per_pair {
        for (w, pair, p) in chunk {
            windows[w as usize].insert(pair, p);
        }
    }
    windows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreStatus::*;

    fn params(alpha: f64, beta: f64, d: f64, k: f64) -> ModelParams {
        ModelParams {
            alpha,
            beta,
            d,
            k,
            ..ModelParams::default()
        }
    }

    #[test]
    fn h_examples() {
        assert_eq!(h(3.0, 0.5, 0.0), 0.5);
        let s = std::f64::consts::E - 1.0;
        assert_eq!(h(s, 0.0, 1.0), 1.0);
        assert_eq!(h(1.0, 2.0, 0.1), 1.0);
    }

    #[test]
    fn update_examples() {
        let p = params(0.1, 0.1, 1.0, 0.9);
        assert_eq!(update_probability(0.42, NoInformation, &p), 0.42);

        let p = params(0.1, 0.1, 0.9, 0.8);
        let got = update_probability(0.5, NonPositive(-1.0), &p);
        assert!((got - 0.36).abs() < 1e-15);

        // h(s) = 0.5 via alpha = 0.5, beta = 0.
        let p = params(0.5, 0.0, 1.0, 0.9);
        let got = update_probability(0.5, Positive(2.0), &p);
        assert!((got - 0.75).abs() < 1e-15);
    }

    #[test]
    fn evolve_examples() {
        let p = params(0.1, 0.1, 1.0, 0.9);
        let traj = evolve(&[NoInformation; 5], &p);
        assert!(traj.iter().all(|&x| x == 0.5));

        let p = params(0.1, 0.1, 0.9, 0.9);
        let traj = evolve(&[NoInformation; 4], &p);
        for (t, &x) in traj.iter().enumerate() {
            assert!((x - 0.5 * 0.9f64.powi(t as i32)).abs() < 1e-15);
        }

        // Alternating positive (h = 1) and non-positive with d = 1 gives
        // probabilities 1, k, 1, k, ...
        let p = params(1.0, 0.0, 1.0, 0.7);
        let traj = evolve(
            &[Positive(1.0), NonPositive(-1.0), Positive(1.0), NonPositive(-1.0)],
            &p,
        );
        assert_eq!(&traj[1..], &[1.0, 0.7, 1.0, 0.7]);
    }

    #[test]
    fn silence_without_decay_keeps_probability() {
        let mut p = params(0.1, 0.1, 0.9, 0.9);
        p.decay_on_silence = false;
        let traj = evolve(&[NoInformation; 3], &p);
        assert!(traj.iter().all(|&x| x == 0.5));
    }

    fn histories_from(seqs: &[Vec<(u32, f64)>], num_windows: u32) -> PairHistories {
        // Build score tables window by window from per-pair observations.
        let mut tables = Vec::new();
        for w in 0..num_windows {
            let mut entries = Vec::new();
            for (i, seq) in seqs.iter().enumerate() {
                if let Some(&(_, s)) = seq.iter().find(|&&(ow, _)| ow == w) {
                    entries.push((NodePair::new(i as u32, i as u32 + 100), s));
                }
            }
            tables.push(ScoreTable::new(w, entries));
        }
        PairHistories::from_tables(&tables)
    }

    #[test]
    fn error_examples() {
        // A single pair, single window: previous probability 0.8, th 0.5,
        // non-positive score costs 0.3.
        let mut p = params(0.1, 0.1, 1.0, 0.9);
        p.p0 = 0.8;
        let hist = histories_from(&[vec![(0, -0.5)]], 1);
        let e = classification_error(&hist, &p);
        assert!((e - 0.3).abs() < 1e-15);

        // Correctly classified everywhere: zero error.
        let hist = histories_from(&[vec![(0, 1.0)], vec![(0, 1.5)]], 1);
        let mut p = params(0.5, 0.1, 1.0, 0.9);
        p.p0 = 0.6;
        assert_eq!(classification_error(&hist, &p), 0.0);
    }

    /// Direct re-implementation of the error from dense status sequences.
    fn naive_error(hist: &PairHistories, params: &ModelParams) -> f64 {
        let mut total = 0.0;
        for i in 0..hist.num_pairs() {
            let statuses = hist.statuses(i);
            let traj = evolve(&statuses, params);
            for (w, st) in statuses.iter().enumerate() {
                let prev = traj[w];
                match st {
                    NonPositive(_) if prev >= params.th => total += prev - params.th,
                    Positive(_) if prev < params.th => total += params.th - prev,
                    _ => {}
                }
            }
        }
        total
    }

    #[test]
    fn error_matches_naive_reimplementation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let pairs = rng.random_range(1..6usize);
            let windows = rng.random_range(1..15u32);
            let seqs: Vec<Vec<(u32, f64)>> = (0..pairs)
                .map(|_| {
                    (0..windows)
                        .filter(|_| rng.random_bool(0.6))
                        .map(|w| (w, rng.random_range(-2.0..4.0)))
                        .collect()
                })
                .collect();
            let hist = histories_from(&seqs, windows);
            let p = params(
                rng.random_range(0.0..0.5),
                rng.random_range(0.0..0.5),
                rng.random_range(0.5..1.0),
                rng.random_range(0.5..1.0),
            );
            let fast = classification_error(&hist, &p);
            let slow = naive_error(&hist, &p);
            assert!(
                (fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()),
                "{fast} vs {slow}"
            );
        }
    }

    fn finite_difference(hist: &PairHistories, p: &ModelParams, step: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for t in 0..4 {
            let mut hi = *p;
            let mut lo = *p;
            match t {
                0 => {
                    hi.alpha += step;
                    lo.alpha -= step;
                }
                1 => {
                    hi.beta += step;
                    lo.beta -= step;
                }
                2 => {
                    hi.d += step;
                    lo.d -= step;
                }
                _ => {
                    hi.k += step;
                    lo.k -= step;
                }
            }
            out[t] = (classification_error(hist, &hi) - classification_error(hist, &lo))
                / (2.0 * step);
        }
        out
    }

    /// Margin check: all indicator and clamp decisions are comfortably far
    /// from their boundaries so finite differences cannot flip a branch.
    fn is_interior(hist: &PairHistories, p: &ModelParams, margin: f64) -> bool {
        if p.alpha < margin
            || p.beta < margin
            || p.d < margin
            || p.d > 1.0 - margin
            || p.k < margin
            || p.k > 1.0 - margin
        {
            return false;
        }
        for i in 0..hist.num_pairs() {
            let statuses = hist.statuses(i);
            let traj = evolve(&statuses, p);
            for (w, st) in statuses.iter().enumerate() {
                match st {
                    Positive(s) => {
                        if (traj[w] - p.th).abs() < margin {
                            return false;
                        }
                        let v = p.alpha + p.beta * (1.0 + s).ln();
                        if v < margin || v > 1.0 - margin {
                            return false;
                        }
                    }
                    NonPositive(_) => {
                        if (traj[w] - p.th).abs() < margin {
                            return false;
                        }
                    }
                    NoInformation => {}
                }
            }
        }
        true
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 25 {
            let seqs: Vec<Vec<(u32, f64)>> = (0..5)
                .map(|_| {
                    (0..10u32)
                        .filter(|_| rng.random_bool(0.7))
                        .map(|w| (w, rng.random_range(-2.0..3.0)))
                        .collect()
                })
                .collect();
            let hist = histories_from(&seqs, 10);
            let p = params(
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
                rng.random_range(0.85..0.99),
                rng.random_range(0.5..0.95),
            );
            if !is_interior(&hist, &p, 1e-3) {
                continue;
            }
            checked += 1;
            let (_, grad) = error_gradient(&hist, &p);
            let fd = finite_difference(&hist, &p, 1e-6);
            for t in 0..4 {
                let denom = grad[t].abs().max(fd[t].abs());
                let diff = (grad[t] - fd[t]).abs();
                assert!(
                    diff <= 1e-4 * denom || diff <= 1e-6,
                    "component {t}: {} vs {}",
                    grad[t],
                    fd[t]
                );
            }
        }
    }

    #[test]
    fn gradient_zero_without_misclassification() {
        let mut p = params(0.5, 0.1, 1.0, 0.9);
        p.p0 = 0.6;
        let hist = histories_from(&[vec![(0, 1.0), (1, 2.0)]], 2);
        let (e, grad) = error_gradient(&hist, &p);
        assert_eq!(e, 0.0);
        assert_eq!(grad, [0.0; 4]);
    }

    #[test]
    fn k_gradient_zero_without_nonpositive_entries() {
        let mut p = params(0.2, 0.1, 0.95, 0.7);
        p.p0 = 0.3;
        let hist = histories_from(&[vec![(0, 1.0), (3, 2.0), (5, 0.5)]], 6);
        let (_, grad) = error_gradient(&hist, &p);
        assert_eq!(grad[3], 0.0);
    }

    #[test]
    fn fit_returns_init_when_perfect() {
        let mut p = params(0.5, 0.1, 1.0, 0.9);
        p.p0 = 0.6;
        let hist = histories_from(&[vec![(0, 1.0)]], 1);
        let out = fit(&hist, &FitConfig::default(), &p).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.params, p);
        assert_eq!(out.final_error, 0.0);
    }

    #[test]
    fn fit_never_increases_error() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let seqs: Vec<Vec<(u32, f64)>> = (0..8)
                .map(|_| {
                    (0..12u32)
                        .filter(|_| rng.random_bool(0.5))
                        .map(|w| (w, rng.random_range(-1.0..3.0)))
                        .collect()
                })
                .collect();
            let hist = histories_from(&seqs, 12);
            let init = ModelParams::default();
            let cfg = FitConfig {
                max_iterations: 50,
                ..FitConfig::default()
            };
            let out = fit(&hist, &cfg, &init).unwrap();
            assert!(out.final_error <= out.initial_error);
        }
    }

    #[test]
    fn fit_rejects_empty() {
        let hist = histories_from(&[], 4);
        assert!(matches!(
            fit(&hist, &FitConfig::default(), &ModelParams::default()),
            Err(ModelError::NothingToFit)
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let seqs: Vec<Vec<(u32, f64)>> = (0..6)
            .map(|_| {
                (0..10u32)
                    .filter(|_| rng.random_bool(0.5))
                    .map(|w| (w, rng.random_range(-1.0..3.0)))
                    .collect()
            })
            .collect();
        let hist = histories_from(&seqs, 10);
        let a = fit(&hist, &FitConfig::default(), &ModelParams::default()).unwrap();
        let b = fit(&hist, &FitConfig::default(), &ModelParams::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.final_error.to_bits() == b.final_error.to_bits());
    }

    #[test]
    fn topology_examples() {
        let series = vec![
            ProbabilitySeries {
                pair: NodePair::new(0, 1),
                p: vec![0.5, 0.6, 0.8],
            },
            ProbabilitySeries {
                pair: NodePair::new(0, 2),
                p: vec![0.5, 0.4, 0.2],
            },
        ];
        let snap = infer_topology(&series, 1, 0.9).unwrap();
        assert!(snap.edges.is_empty());

        let loose = infer_topology(&series, 1, 0.3).unwrap();
        let strict = infer_topology(&series, 1, 0.7).unwrap();
        assert!(strict.edges.iter().all(|e| loose.edges.contains(e)));
    }

    #[test]
    fn params_kv_roundtrip() {
        let p = ModelParams {
            alpha: 0.123456789,
            beta: 1.0 / 3.0,
            d: 0.999,
            k: 0.9,
            th: 0.5,
            p0: 0.25,
            decay_on_silence: true,
        };
        let mut buf = Vec::new();
        p.write_kv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let q = ModelParams::read_kv(&text).unwrap();
        assert_eq!(p, q);
    }
}
