//! Dual-level policy optimization.
//!
//! Training combines two signals computed from the same rollouts:
//!
//! - trajectory level: a clipped importance-sampling surrogate over GAE
//!   advantages, `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`;
//! - turn level: listwise preference learning over intra-trajectory pairs
//!   `(i, j)` with `r_j > r_i`, weighted by Lambda weights
//!   `|G(r_i) - G(r_j)| * |1/D(rho_i) - 1/D(rho_j)|` with gain
//!   `G(r) = 2^r - 1` and rank discount `D(rho) = ln(1 + rho)`.
//!
//! The implementation minimizes
//! `total = -J_traj + preference_weight * L_pref`, where each pair
//! contributes `Lambda * ln(1 + exp(-(psi_j - psi_i)))` and
//! `psi_t = beta * (log pi_theta - log pi_ref)`.
//!
//! Per-trajectory loss/gradient evaluation is data-parallel with a fixed
//! trajectory-order reduction, so results are identical for any worker
//! count. No learned critic: the GAE baseline is the batch mean of
//! discounted returns-to-go at each turn index.

use crate::par;
use crate::policy::{grad_logprob, logprob_of, PolicyParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgpoError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite gradient; update aborted")]
    NonFiniteGradient,
    #[error("empty batch")]
    EmptyBatch,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PGPOConfig {
    pub clip_epsilon: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    /// Weight of the preference loss in the combined objective.
    pub preference_weight: f64,
    /// Scale of the log-ratio preference score.
    pub beta: f64,
    pub max_pairs: usize,
    pub pair_keep_ratio: f64,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub grad_clip: f64,
}

impl Default for PGPOConfig {
    fn default() -> Self {
        PGPOConfig {
            clip_epsilon: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            preference_weight: 0.3,
            beta: 0.1,
            max_pairs: 6,
            pair_keep_ratio: 0.75,
            learning_rate: 5e-5,
            minibatch_size: 32,
            grad_clip: 1.0,
        }
    }
}

/// One decision recorded at collection time. `old_logp` is the behavior
/// policy's exact log-probability; `tau` is the sampling temperature in
/// force, reused when re-evaluating the action under updated parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnRecord {
    pub features: Vec<f64>,
    pub rows: Vec<usize>,
    pub chosen: usize,
    pub old_logp: f64,
    pub tau: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: usize,
    /// Group key: index of the lead molecule this rollout started from.
    pub lead_id: usize,
    pub turns: Vec<TurnRecord>,
}

impl TrajectoryRecord {
    pub fn cumulative_reward(&self) -> f64 {
        self.turns.iter().map(|t| t.reward).sum()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub trajectories: Vec<TrajectoryRecord>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// GAE advantages and returns.
///
/// `values` must hold one entry per reward plus the bootstrap value of the
/// terminal state. The backward recursion `A_t = delta_t + g*l*A_{t+1}`
/// equals the explicit double sum `sum_k (g*l)^k delta_{t+k}`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    discount: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PgpoError> {
    if values.len() != rewards.len() + 1 {
        return Err(PgpoError::LengthMismatch {
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + discount * values[t + 1] - values[t];
        acc = delta + discount * gae_lambda * acc;
        advantages[t] = acc;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, returns))
}

/// Clipped importance-sampling objective for one turn (to be maximized).
pub fn ppo_surrogate(old_logp: f64, new_logp: f64, advantage: f64, epsilon: f64) -> f64 {
    let ratio = (new_logp - old_logp).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// An intra-trajectory ordered comparison: turn `better` outperformed turn
/// `worse` (`r_better > r_worse`, strictly).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub worse: usize,
    pub better: usize,
    pub rank_worse: usize,
    pub rank_better: usize,
    pub weight: f64,
}

/// Rank positions (1 = best) by reward descending. Ties are broken so the
/// earlier turn takes the worse (larger) rank.
pub fn rank_turns(rewards: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| {
        rewards[b]
            .total_cmp(&rewards[a])
            .then(b.cmp(&a))
    });
    let mut ranks = vec![0usize; rewards.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

/// LambdaLoss-style pair weight. Always non-negative, zero when the rewards
/// tie, and symmetric under swapping the pair.
pub fn lambda_weight(r_i: f64, r_j: f64, rank_i: usize, rank_j: usize) -> f64 {
    let gain = |r: f64| r.exp2() - 1.0;
    let discount = |rank: usize| ((1 + rank) as f64).ln();
    (gain(r_i) - gain(r_j)).abs() * (1.0 / discount(rank_i) - 1.0 / discount(rank_j)).abs()
}

/// Enumerate ordered preference pairs, keep the top fraction by reward gap
/// (at least one when any pair exists), cap at `max_pairs`, and attach
/// Lambda weights from the full-trajectory ranking.
pub fn select_pairs(rewards: &[f64], keep_ratio: f64, max_pairs: usize) -> Vec<PreferencePair> {
    if rewards.len() < 2 {
        return Vec::new();
    }
    let ranks = rank_turns(rewards);
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..rewards.len() {
        for b in (a + 1)..rewards.len() {
            if rewards[a] == rewards[b] {
                continue;
            }
            let (worse, better) = if rewards[b] > rewards[a] {
                (a, b)
            } else {
                (b, a)
            };
            pairs.push((worse, better, (rewards[better] - rewards[worse]).abs()));
        }
    }
    if pairs.is_empty() {
        return Vec::new();
    }
    pairs.sort_by(|x, y| {
        y.2.total_cmp(&x.2)
            .then((x.0, x.1).cmp(&(y.0, y.1)))
    });
    let keep = (((pairs.len() as f64) * keep_ratio).floor() as usize).max(1);
    pairs.truncate(keep.min(max_pairs));
    pairs
        .into_iter()
        .map(|(worse, better, _)| PreferencePair {
            worse,
            better,
            rank_worse: ranks[worse],
            rank_better: ranks[better],
            weight: lambda_weight(rewards[worse], rewards[better], ranks[worse], ranks[better]),
        })
        .collect()
}

/// Per-pair preference loss `ln(1 + exp(-(psi_better - psi_worse)))`,
/// computed in a numerically stable form.
pub fn pair_loss(psi_worse: f64, psi_better: f64) -> f64 {
    softplus(-(psi_better - psi_worse))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Total preference loss for a set of pairs with precomputed psi values.
pub fn preference_loss(pairs: &[PreferencePair], psi: &[f64]) -> f64 {
    pairs
        .iter()
        .map(|p| p.weight * pair_loss(psi[p.worse], psi[p.better]))
        .sum()
}

/// Batch baseline: mean discounted return-to-go at each turn index across
/// trajectories that reach it. Stands in for a learned critic while keeping
/// the GAE interface intact.
pub fn batch_baselines(batch: &TrajectoryBatch, discount: f64) -> Vec<f64> {
    let max_len = batch
        .trajectories
        .iter()
        .map(|t| t.turns.len())
        .max()
        .unwrap_or(0);
    let mut sums = vec![0.0; max_len];
    let mut counts = vec![0usize; max_len];
    for traj in &batch.trajectories {
        let mut rtg = 0.0;
        let mut per_turn = vec![0.0; traj.turns.len()];
        for (t, turn) in traj.turns.iter().enumerate().rev() {
            rtg = turn.reward + discount * rtg;
            per_turn[t] = rtg;
        }
        for (t, g) in per_turn.iter().enumerate() {
            sums[t] += g;
            counts[t] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// Advantages and selected pairs, fixed before any gradient step so the
/// objective is a pure function of the parameters.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub advantages: Vec<Vec<f64>>,
    pub pairs: Vec<Vec<PreferencePair>>,
}

pub fn prepare_batch(batch: &TrajectoryBatch, cfg: &PGPOConfig) -> PreparedBatch {
    let baselines = batch_baselines(batch, cfg.discount);
    let advantages = batch
        .trajectories
        .iter()
        .map(|traj| {
            let rewards: Vec<f64> = traj.turns.iter().map(|t| t.reward).collect();
            let mut values: Vec<f64> = (0..rewards.len()).map(|t| baselines[t]).collect();
            values.push(0.0); // terminal bootstrap
            let (adv, _) = compute_gae(&rewards, &values, cfg.discount, cfg.gae_lambda)
                .expect("values sized rewards+1");
            adv
        })
        .collect();
    let pairs = batch
        .trajectories
        .iter()
        .map(|traj| {
            let rewards: Vec<f64> = traj.turns.iter().map(|t| t.reward).collect();
            select_pairs(&rewards, cfg.pair_keep_ratio, cfg.max_pairs)
        })
        .collect();
    PreparedBatch { advantages, pairs }
}

/// Loss components and diagnostics of one evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub trajectory_objective: f64,
    pub preference_loss: f64,
    pub total_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub pair_count: usize,
    pub grad_norm: f64,
}

struct TrajEval {
    objective: f64,
    pref_loss: f64,
    ratio_sum: f64,
    clipped: usize,
    turns: usize,
    pairs: usize,
    grad: Vec<f64>,
}

/// Scalar objective and analytic gradient of the combined loss over a
/// prepared batch. Trajectories evaluate in parallel; the reduction runs in
/// trajectory order.
pub fn pgpo_loss_and_grad(
    batch: &TrajectoryBatch,
    prepared: &PreparedBatch,
    params: &PolicyParams,
    reference: &PolicyParams,
    cfg: &PGPOConfig,
) -> (Diagnostics, Vec<f64>) {
    let n = batch.trajectories.len().max(1) as f64;
    let evals: Vec<TrajEval> = par::map_indexed(batch.trajectories.len(), |ti| {
        let traj = &batch.trajectories[ti];
        let advantages = &prepared.advantages[ti];
        let pairs = &prepared.pairs[ti];
        let mut grad = vec![0.0; params.theta.len()];
        let mut objective = 0.0;
        let mut ratio_sum = 0.0;
        let mut clipped = 0usize;

        let new_logps: Vec<f64> = traj
            .turns
            .iter()
            .map(|turn| logprob_of(params, &turn.features, &turn.rows, turn.chosen, turn.tau))
            .collect();

        for (t, turn) in traj.turns.iter().enumerate() {
            let ratio = (new_logps[t] - turn.old_logp).exp();
            let adv = advantages[t];
            let unclipped = ratio * adv;
            let clipped_term = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
            objective += unclipped.min(clipped_term);
            ratio_sum += ratio;
            if unclipped > clipped_term {
                clipped += 1;
                // min picked the clipped branch outside the band: zero grad
                continue;
            }
            let coeff = adv * ratio / n;
            let g = grad_logprob(params, &turn.features, &turn.rows, turn.chosen, turn.tau);
            for (acc, gi) in grad.iter_mut().zip(&g) {
                // minimizing -J_traj
                *acc -= coeff * gi;
            }
        }

        let mut pref_loss = 0.0;
        if cfg.preference_weight != 0.0 && !pairs.is_empty() {
            let ref_logps: Vec<f64> = traj
                .turns
                .iter()
                .map(|turn| {
                    logprob_of(reference, &turn.features, &turn.rows, turn.chosen, turn.tau)
                })
                .collect();
            let psi: Vec<f64> = new_logps
                .iter()
                .zip(&ref_logps)
                .map(|(new, re)| cfg.beta * (new - re))
                .collect();
            for pair in pairs {
                let d = psi[pair.better] - psi[pair.worse];
                pref_loss += pair.weight * softplus(-d);
                let dloss_dd = -pair.weight * sigmoid(-d);
                let scale = cfg.preference_weight * dloss_dd * cfg.beta / n;
                for (t, sign) in [(pair.better, 1.0), (pair.worse, -1.0)] {
                    let turn = &traj.turns[t];
                    let g =
                        grad_logprob(params, &turn.features, &turn.rows, turn.chosen, turn.tau);
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += scale * sign * gi;
                    }
                }
            }
        }

        TrajEval {
            objective,
            pref_loss,
            ratio_sum,
            clipped,
            turns: traj.turns.len(),
            pairs: pairs.len(),
            grad,
        }
    });

    let mut grad = vec![0.0; params.theta.len()];
    let mut objective = 0.0;
    let mut pref_loss = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut turns = 0usize;
    let mut pair_count = 0usize;
    for e in &evals {
        objective += e.objective;
        pref_loss += e.pref_loss;
        ratio_sum += e.ratio_sum;
        clipped += e.clipped;
        turns += e.turns;
        pair_count += e.pairs;
        for (acc, gi) in grad.iter_mut().zip(&e.grad) {
            *acc += gi;
        }
    }
    let j_traj = objective / n;
    let l_pref = pref_loss / n;
    let total = -j_traj + cfg.preference_weight * l_pref;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    (
        Diagnostics {
            trajectory_objective: j_traj,
            preference_loss: l_pref,
            total_loss: total,
            mean_ratio: if turns == 0 {
                1.0
            } else {
                ratio_sum / turns as f64
            },
            clip_fraction: if turns == 0 {
                0.0
            } else {
                clipped as f64 / turns as f64
            },
            pair_count,
            grad_norm,
        },
        grad,
    )
}

/// Count of trajectory-level and turn-level learning signals in a batch.
/// Per trajectory the pair count is bounded by `max_pairs` and by the
/// number of strictly ordered pairs available.
pub fn signal_count(batch: &TrajectoryBatch, cfg: &PGPOConfig) -> (usize, usize) {
    let mut pref = 0usize;
    for traj in &batch.trajectories {
        let rewards: Vec<f64> = traj.turns.iter().map(|t| t.reward).collect();
        let k = select_pairs(&rewards, cfg.pair_keep_ratio, cfg.max_pairs).len();
        let available = (0..rewards.len())
            .flat_map(|a| ((a + 1)..rewards.len()).map(move |b| (a, b)))
            .filter(|&(a, b)| rewards[a] != rewards[b])
            .count();
        assert!(k <= cfg.max_pairs.min(available.max(k)));
        assert!(k <= cfg.max_pairs);
        pref += k;
    }
    (batch.trajectories.len(), pref)
}

/// Adam-based trainer holding the live parameters and the frozen reference.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub cfg: PGPOConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Trainer {
    pub fn new(params: PolicyParams, cfg: PGPOConfig) -> Self {
        let reference = crate::policy::snapshot_reference(&params);
        let dim = params.theta.len();
        Trainer {
            params,
            reference,
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            steps: 0,
        }
    }

    /// One gradient step on a (filtered) batch. Returns diagnostics; a
    /// non-finite gradient aborts the step without touching parameters.
    pub fn update(&mut self, batch: &TrajectoryBatch) -> Result<Diagnostics, PgpoError> {
        if batch.is_empty() {
            return Err(PgpoError::EmptyBatch);
        }
        let prepared = prepare_batch(batch, &self.cfg);
        let (diag, mut grad) =
            pgpo_loss_and_grad(batch, &prepared, &self.params, &self.reference, &self.cfg);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PgpoError::NonFiniteGradient);
        }
        if diag.grad_norm > self.cfg.grad_clip && diag.grad_norm > 0.0 {
            let scale = self.cfg.grad_clip / diag.grad_norm;
            for g in &mut grad {
                *g *= scale;
            }
        }
        self.adam_step(&grad);
        Ok(diag)
    }

    fn adam_step(&mut self, grad: &[f64]) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.steps += 1;
        let t = self.steps as i32;
        let lr = self.cfg.learning_rate;
        for k in 0..grad.len() {
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * grad[k];
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * grad[k] * grad[k];
            let m_hat = self.m[k] / (1.0 - BETA1.powi(t));
            let v_hat = self.v[k] / (1.0 - BETA2.powi(t));
            self.params.theta[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}
