//! Node-level accuracy of an inferred topology against functional groups.
//!
//! The inferred graph's connected components are matched to the ground-truth
//! groups: every group picks the component maximising the per-component,
//! per-group F1. A component may be claimed by several groups, and its size
//! then counts once per claim in the overall precision denominator.

use std::collections::BTreeMap;
use std::io::Write;

use crate::events::NodePair;
use crate::model::TopologySnapshot;
use crate::synth::{GroundTruth, SynthError};

/// One group's match.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatch {
    pub group: u32,
    /// Index into the component list; `None` when there are no components.
    pub component: Option<usize>,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingReport {
    pub per_group: Vec<GroupMatch>,
    pub overall_precision: f64,
    pub overall_sensitivity: f64,
    pub overall_f1: f64,
}

pub const REPORT_CSV_HEADER: &str = "window,overall_precision,overall_sensitivity,overall_f1";
pub const GROUP_CSV_HEADER: &str =
    "window,group_id,component,pccfg_precision,pccfg_sensitivity,pccfg_f1";

impl MatchingReport {
    pub fn write_csv_row(&self, window: u32, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "{window},{},{},{}",
            self.overall_precision, self.overall_sensitivity, self.overall_f1
        )
    }

    pub fn write_group_rows(&self, window: u32, mut w: impl Write) -> std::io::Result<()> {
        for g in &self.per_group {
            let comp = g
                .component
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".to_string());
            writeln!(
                w,
                "{window},{},{comp},{},{},{}",
                g.group, g.precision, g.sensitivity, g.f1
            )?;
        }
        Ok(())
    }
}

fn harmonic_mean(p: f64, s: f64) -> f64 {
    if p + s == 0.0 {
        0.0
    } else {
        2.0 * p * s / (p + s)
    }
}

/// Connected components of the undirected graph over `universe`, isolated
/// nodes included as singletons. Components are sorted node lists, ordered by
/// their smallest node.
pub fn connected_components(universe: &[u32], edges: &[NodePair]) -> Vec<Vec<u32>> {
    let index: BTreeMap<u32, usize> = universe.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut parent: Vec<usize> = (0..universe.len()).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for e in edges {
        let (Some(&a), Some(&b)) = (index.get(&e.a), index.get(&e.b)) else {
            continue;
        };
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }

    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for i in 0..universe.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(universe[i]);
    }
    groups.into_values().collect()
}

/// Overlap-based precision, sensitivity and F1 of one component against one
/// group. Both are sorted node lists.
pub fn pccfg_scores(component: &[u32], group: &[u32]) -> (f64, f64, f64) {
    let overlap = sorted_intersection_size(component, group);
    let precision = overlap as f64 / component.len() as f64;
    let sensitivity = overlap as f64 / group.len() as f64;
    (precision, sensitivity, harmonic_mean(precision, sensitivity))
}

fn sorted_intersection_size(a: &[u32], b: &[u32]) -> usize {
    let mut i = 0;
    let mut j = 0;
    let mut count = 0;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Matches every group to its best component and aggregates the overall
/// precision and sensitivity.
///
/// Ties break on higher precision, then on the lexicographically smallest
/// component, so identical inputs give identical reports.
pub fn match_and_score(
    components: &[Vec<u32>],
    groups: &BTreeMap<u32, Vec<u32>>,
) -> MatchingReport {
    let total_nodes: usize = groups.values().map(|g| g.len()).sum();
    let mut per_group = Vec::with_capacity(groups.len());
    let mut matched_overlap = 0usize;
    let mut matched_size = 0usize;

    for (&group_id, members) in groups {
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for (ci, comp) in components.iter().enumerate() {
            let (p, s, f1) = pccfg_scores(comp, members);
            let better = match &best {
                None => true,
                Some(&(bi, bp, _, bf1)) => {
                    f1 > bf1
                        || (f1 == bf1 && p > bp)
                        || (f1 == bf1 && p == bp && comp < &components[bi])
                }
            };
            if better {
                best = Some((ci, p, s, f1));
            }
        }
        match best {
            Some((ci, p, s, f1)) => {
                matched_overlap += sorted_intersection_size(&components[ci], members);
                matched_size += components[ci].len();
                per_group.push(GroupMatch {
                    group: group_id,
                    component: Some(ci),
                    precision: p,
                    sensitivity: s,
                    f1,
                });
            }
            None => per_group.push(GroupMatch {
                group: group_id,
                component: None,
                precision: 0.0,
                sensitivity: 0.0,
                f1: 0.0,
            }),
        }
    }

    let overall_precision = if matched_size == 0 {
        0.0
    } else {
        matched_overlap as f64 / matched_size as f64
    };
    let overall_sensitivity = if total_nodes == 0 {
        0.0
    } else {
        matched_overlap as f64 / total_nodes as f64
    };
    MatchingReport {
        per_group,
        overall_precision,
        overall_sensitivity,
        overall_f1: harmonic_mean(overall_precision, overall_sensitivity),
    }
}

/// Groups a membership vector into sorted member lists.
pub fn groups_from_membership(membership: &[u32]) -> BTreeMap<u32, Vec<u32>> {
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (node, &g) in membership.iter().enumerate() {
        groups.entry(g).or_default().push(node as u32);
    }
    groups
}

/// Evaluates a snapshot against the ground truth taken at the end sample of
/// window `w` (`(w+1) * window_length - 1`).
///
/// Snapshot edges must already be expressed in ground-truth node indices.
pub fn evaluate_at_window(
    snapshot: &TopologySnapshot,
    gt: &GroundTruth,
    w: u32,
    window_length: u64,
) -> Result<MatchingReport, SynthError> {
    let end_sample = (w as u64 + 1) * window_length - 1;
    let membership = gt.membership_at(end_sample)?;
    let universe: Vec<u32> = (0..membership.len() as u32).collect();
    let components = connected_components(&universe, &snapshot.edges);
    Ok(match_and_score(
        &components,
        &groups_from_membership(membership),
    ))
}
