//! Grouping of level-wise survival curves into homogeneous clusters.
//!
//! Levels are ordered by restricted mean survival time (RMST) up to the
//! largest event time common to all levels. For each candidate group count
//! an exact dynamic program finds the contiguous partition of that ordering
//! with the smallest total within-group k-sample statistic. The smallest
//! count whose within-group tests all survive Benjamini-Hochberg adjustment
//! at `alpha` is returned.

use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::km::{km_from_slices, BandKind};
use crate::rank_tests::{bh_adjust, weighted_logrank_groups, WeightSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveGroup {
    /// 1-based, ascending in group RMST.
    pub index: usize,
    pub levels: Vec<String>,
    /// Raw within-group k-sample p-value; 1 for single-level groups.
    pub within_p: f64,
    /// BH-adjusted across the groups of the chosen partition.
    pub adjusted_p: f64,
    pub statistic: f64,
    pub mean_rmst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAssignment {
    #[serde(rename = "G")]
    pub group_count: usize,
    pub groups: Vec<CurveGroup>,
    /// `false` when no partition up to `max_groups` passed.
    pub homogeneous: bool,
    pub weight: WeightSpec,
    pub alpha: f64,
    /// (level, RMST) in ascending RMST order.
    pub rmst: Vec<(String, f64)>,
    pub horizon: f64,
}

impl GroupAssignment {
    /// Group index of a level, if present.
    pub fn group_of(&self, level: &str) -> Option<usize> {
        self.groups.iter().find(|g| g.levels.iter().any(|l| l == level)).map(|g| g.index)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GroupingOptions {
    pub weight: WeightSpec,
    pub alpha: f64,
    /// Defaults to the number of non-empty levels.
    pub max_groups: Option<usize>,
}

impl Default for GroupingOptions {
    fn default() -> Self {
        GroupingOptions {
            weight: WeightSpec::PetoPeto,
            alpha: 0.05,
            max_groups: None,
        }
    }
}

struct BlockTest {
    statistic: f64,
    p: f64,
}

pub fn group_curves(cohort: &Cohort, variable: &str, options: GroupingOptions) -> Result<GroupAssignment> {
    let GroupingOptions { weight, alpha, .. } = options;
    weight.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::usage(format!("alpha {alpha} outside (0, 1)")));
    }
    let (codes, labels) = cohort.level_indices(variable)?;
    let durations = cohort.durations();
    let events = cohort.events();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for (i, &c) in codes.iter().enumerate() {
        members[c].push(i);
    }
    let levels: Vec<usize> = (0..labels.len()).filter(|&l| !members[l].is_empty()).collect();
    let k = levels.len();
    if k < 2 {
        return Err(Error::usage(format!("'{variable}' needs at least two non-empty levels to group")));
    }
    let max_groups = options.max_groups.unwrap_or(k);
    if max_groups < 1 || max_groups > k {
        return Err(Error::usage(format!("max_groups {max_groups} outside [1, {k}]")));
    }

    // (1) RMST ordering
    let curves: Vec<_> = levels
        .iter()
        .map(|&l| {
            let d: Vec<f64> = members[l].iter().map(|&i| durations[i]).collect();
            let e: Vec<bool> = members[l].iter().map(|&i| events[i]).collect();
            km_from_slices(&d, &e, BandKind::LogLog)
        })
        .collect();
    let horizon = curves
        .iter()
        .map(|c| c.last_event_time().unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    let rmst: Vec<f64> = curves.iter().map(|c| c.restricted_mean(horizon)).collect();
    let mut ordered: Vec<usize> = (0..k).collect();
    ordered.sort_by(|&a, &b| rmst[a].total_cmp(&rmst[b]).then(a.cmp(&b)));

    // within-group test for every contiguous block [i, j] of the ordering
    let blocks: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let tests: Vec<BlockTest> = blocks
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                return Ok(BlockTest { statistic: 0.0, p: 1.0 });
            }
            let mut d = Vec::new();
            let mut e = Vec::new();
            let mut g = Vec::new();
            for (slot, &pos) in ordered[i..=j].iter().enumerate() {
                for &r in &members[levels[pos]] {
                    d.push(durations[r]);
                    e.push(events[r]);
                    g.push(slot);
                }
            }
            if !e.iter().any(|&x| x) {
                return Ok(BlockTest { statistic: 0.0, p: 1.0 });
            }
            let names: Vec<String> = (0..=j - i).map(|s| s.to_string()).collect();
            let r = weighted_logrank_groups(&d, &e, &g, &names, weight)?;
            Ok(BlockTest {
                statistic: r.chi_square,
                p: r.p_value,
            })
        })
        .collect::<Result<_>>()?;
    let block = |i: usize, j: usize| -> &BlockTest { &tests[triangle_index(k, i, j)] };

    // (2)-(3) dynamic program per group count
    let mut chosen: Option<(Vec<(usize, usize)>, Vec<f64>)> = None;
    let mut fallback = None;
    for g in 1..=max_groups {
        let parts = best_partition(k, g, |i, j| block(i, j).statistic);
        let raw: Vec<f64> = parts.iter().map(|&(i, j)| block(i, j).p).collect();
        let adjusted = bh_adjust(&raw)?;
        if adjusted.iter().all(|&p| p >= alpha) {
            chosen = Some((parts, adjusted));
            break;
        }
        fallback = Some((parts, adjusted));
    }
    let homogeneous = chosen.is_some();
    let (parts, adjusted) = chosen.or(fallback).expect("max_groups >= 1");

    let groups = parts
        .iter()
        .zip(&adjusted)
        .enumerate()
        .map(|(idx, (&(i, j), &adj))| {
            let positions = &ordered[i..=j];
            CurveGroup {
                index: idx + 1,
                levels: positions.iter().map(|&p| labels[levels[p]].clone()).collect(),
                within_p: block(i, j).p,
                adjusted_p: adj,
                statistic: block(i, j).statistic,
                mean_rmst: positions.iter().map(|&p| rmst[p]).sum::<f64>() / positions.len() as f64,
            }
        })
        .collect();

    Ok(GroupAssignment {
        group_count: parts.len(),
        groups,
        homogeneous,
        weight,
        alpha,
        rmst: ordered.iter().map(|&p| (labels[levels[p]].clone(), rmst[p])).collect(),
        horizon,
    })
}

/// Position of (i, j), i <= j, in the row-major upper triangle of a k x k matrix.
fn triangle_index(k: usize, i: usize, j: usize) -> usize {
    i * (2 * k - i + 1) / 2 + (j - i)
}

/// Contiguous partition of 0..k into exactly `g` blocks minimizing the sum
/// of `cost(i, j)` over blocks [i, j].
fn best_partition(k: usize, g: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // best[m][j]: minimal cost of splitting the first j items into m blocks
    let inf = f64::INFINITY;
    let mut best = vec![vec![inf; k + 1]; g + 1];
    let mut cut = vec![vec![0usize; k + 1]; g + 1];
    best[0][0] = 0.0;
    for m in 1..=g {
        for j in m..=k {
            for s in (m - 1)..j {
                let c = best[m - 1][s] + cost(s, j - 1);
                // strict comparison keeps the earliest split on ties
                if c < best[m][j] {
                    best[m][j] = c;
                    cut[m][j] = s;
                }
            }
        }
    }
    let mut parts = Vec::with_capacity(g);
    let mut j = k;
    for m in (1..=g).rev() {
        let s = cut[m][j];
        parts.push((s, j - 1));
        j = s;
    }
    parts.reverse();
    parts
}
