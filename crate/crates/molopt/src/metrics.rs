//! Evaluation metrics over per-lead optimization results.
//!
//! Conventions for failed optimizations follow the reporting protocol:
//! failures contribute similarity 1.0 (the molecule defaults to the lead)
//! and relative improvement 0. A zero baseline score makes the relative
//! term undefined; such terms are skipped with a warning count and the
//! remaining properties are averaged.

use crate::oracle::{Direction, PropertySpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no results to aggregate")]
    EmptyResults,
}

/// Outcome of optimizing one lead molecule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub lead: String,
    /// Best molecule satisfying all success criteria; absent on failure.
    pub optimized: Option<String>,
    pub success: bool,
    /// Tanimoto similarity of the optimized molecule to the lead.
    pub similarity: Option<f64>,
    pub property_names: Vec<String>,
    pub lead_scores: Vec<f64>,
    pub final_scores: Option<Vec<f64>>,
    pub oracle_calls_used: u64,
    /// Budget position at which the success criteria were first met.
    pub calls_at_success: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Percentage of leads successfully optimized.
pub fn success_rate(results: &[OptimizationResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let successes = results.iter().filter(|r| r.success).count();
    Ok(100.0 * successes as f64 / results.len() as f64)
}

/// Mean Tanimoto similarity; failures contribute the maximal 1.0.
pub fn avg_similarity(results: &[OptimizationResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            if r.success {
                r.similarity.unwrap_or(1.0)
            } else {
                1.0
            }
        })
        .sum();
    Ok(total / results.len() as f64)
}

/// Mean sign-adjusted relative property improvement. Returns the mean and
/// the number of zero-baseline terms that had to be skipped.
pub fn relative_improvement(
    results: &[OptimizationResult],
    props: &[PropertySpec],
) -> Result<(f64, usize), MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let mut skipped = 0usize;
    let mut total = 0.0;
    for r in results {
        let (Some(finals), true) = (&r.final_scores, r.success) else {
            continue; // failed optimizations contribute 0
        };
        let mut acc = 0.0;
        let mut counted = 0usize;
        for (j, p) in props.iter().enumerate() {
            let baseline = r.lead_scores[j];
            if baseline == 0.0 {
                skipped += 1;
                continue;
            }
            let sign = match p.direction {
                Direction::Maximize => 1.0,
                Direction::Minimize => -1.0,
            };
            acc += sign * (finals[j] - baseline) / baseline.abs();
            counted += 1;
        }
        if counted > 0 {
            total += acc / counted as f64;
        }
    }
    Ok((total / results.len() as f64, skipped))
}

/// Aggregated metrics for a result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub count: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_similarity: f64,
    pub relative_improvement: f64,
    pub zero_baseline_skips: usize,
    pub mean_oracle_calls: f64,
}

pub fn summarize(
    results: &[OptimizationResult],
    props: &[PropertySpec],
) -> Result<MetricsSummary, MetricsError> {
    let sr = success_rate(results)?;
    let sim = avg_similarity(results)?;
    let (ri, skips) = relative_improvement(results, props)?;
    let calls: u64 = results.iter().map(|r| r.oracle_calls_used).sum();
    Ok(MetricsSummary {
        count: results.len(),
        successes: results.iter().filter(|r| r.success).count(),
        success_rate: sr,
        avg_similarity: sim,
        relative_improvement: ri,
        zero_baseline_skips: skips,
        mean_oracle_calls: calls as f64 / results.len() as f64,
    })
}

/// Success rate as a function of oracle calls: at each budget point `c`,
/// the fraction of leads whose success criteria were met within `c` calls.
pub fn success_curve(results: &[OptimizationResult], budget: u64) -> Vec<(u64, f64)> {
    let n = results.len().max(1) as f64;
    (0..=budget)
        .map(|c| {
            let hits = results
                .iter()
                .filter(|r| r.calls_at_success.is_some_and(|at| at <= c))
                .count();
            (c, 100.0 * hits as f64 / n)
        })
        .collect()
}
