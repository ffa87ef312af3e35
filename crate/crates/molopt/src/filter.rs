//! Two-stage trajectory filtering ahead of each policy update.
//!
//! Stage 1 partitions the batch by lead molecule and keeps the groups whose
//! cumulative-reward standard deviation is at least the median (ties kept:
//! high-variance groups carry the learning signal). Stage 2 keeps the top
//! `ceil(0.75 * n)` trajectories of each surviving group by cumulative
//! reward. On batches with distinct deviations and rewards this retains
//! exactly 37.5% of trajectories; ties only ever retain more.

use crate::pgpo::{TrajectoryBatch, TrajectoryRecord};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("no trajectories left after filtering")]
    EmptyAfterFilter,
}

/// Rollouts sharing a lead molecule, with the group's reward standard
/// deviation computed over the full group before any filtering.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryGroup {
    pub lead_id: usize,
    /// Indices into the source batch.
    pub members: Vec<usize>,
    pub sigma: f64,
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Partition a batch into per-lead groups, ordered by lead id.
pub fn group_by_lead(batch: &TrajectoryBatch) -> Vec<TrajectoryGroup> {
    let mut by_lead: std::collections::BTreeMap<usize, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (idx, traj) in batch.trajectories.iter().enumerate() {
        by_lead.entry(traj.lead_id).or_default().push(idx);
    }
    by_lead
        .into_iter()
        .map(|(lead_id, members)| {
            let rewards: Vec<f64> = members
                .iter()
                .map(|&i| batch.trajectories[i].cumulative_reward())
                .collect();
            TrajectoryGroup {
                lead_id,
                members,
                sigma: std_dev(&rewards),
            }
        })
        .collect()
}

/// Median with the midpoint convention for even counts.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Apply both filter stages. `variance_keep_ratio` of 0.5 reproduces the
/// sigma >= median rule; other ratios move the cutoff to the matching
/// order statistic (always tie-inclusive). `score_keep_ratio` controls the
/// within-group ceiling keep count.
pub fn filter_batch(
    batch: &TrajectoryBatch,
    variance_keep_ratio: f64,
    score_keep_ratio: f64,
) -> Result<TrajectoryBatch, FilterError> {
    let groups = group_by_lead(batch);
    if groups.is_empty() {
        return Err(FilterError::EmptyAfterFilter);
    }

    let mut sigmas: Vec<f64> = groups.iter().map(|g| g.sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    let cutoff = if (variance_keep_ratio - 0.5).abs() < 1e-12 {
        median(&sigmas)
    } else {
        let keep = ((groups.len() as f64 * variance_keep_ratio).ceil() as usize)
            .clamp(1, groups.len());
        sigmas[groups.len() - keep]
    };

    let mut out: Vec<TrajectoryRecord> = Vec::new();
    for group in &groups {
        if group.sigma < cutoff {
            continue;
        }
        let mut ranked: Vec<usize> = group.members.clone();
        ranked.sort_by(|&a, &b| {
            let ra = batch.trajectories[a].cumulative_reward();
            let rb = batch.trajectories[b].cumulative_reward();
            rb.total_cmp(&ra)
                .then(batch.trajectories[a].id.cmp(&batch.trajectories[b].id))
        });
        let keep = ((ranked.len() as f64 * score_keep_ratio).ceil() as usize)
            .clamp(1, ranked.len());
        for &idx in ranked.iter().take(keep) {
            out.push(batch.trajectories[idx].clone());
        }
    }
    if out.is_empty() {
        return Err(FilterError::EmptyAfterFilter);
    }
    Ok(TrajectoryBatch { trajectories: out })
}

/// Fraction of trajectories that survived filtering.
pub fn retention_ratio(before: usize, after: usize) -> f64 {
    assert!(before > 0, "retention ratio needs a non-empty input");
    after as f64 / before as f64
}
