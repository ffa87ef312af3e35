//! The multi-turn optimization environment.
//!
//! An episode starts from a lead molecule. Each turn the policy emits action
//! text in the `<think>...</think><answer>SMILES</answer>` protocol (or the
//! `[DONE]` sentinel); the environment extracts the proposal, classifies it
//! through a fixed gate sequence, and emits a reward:
//!
//! | outcome                        | reward            |
//! |--------------------------------|-------------------|
//! | invalid SMILES / guard reject  | -0.5              |
//! | identical to current molecule  | -0.3              |
//! | similarity below threshold     | -2 (gamma - sim)  |
//! | weighted property degradation  | -|dF|             |
//! | weighted property improvement  | 5 |dF|            |
//!
//! `dF` is the weighted signed change against the *current* molecule;
//! similarity is always measured against the original lead. Proposals
//! rejected before the similarity gate never touch the oracle, and sub-gamma
//! proposals are not charged either. After any negative reward the
//! environment reverts to the best-scoring molecule seen so far, keeping the
//! tracked score monotone.

use crate::chemgraph::{parse_smiles, tanimoto, Element, Fingerprint, MolecularGraph, ParseError};
use crate::oracle::{OracleError, OracleLedger, OracleSet, PropertySpec};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

pub const FP_RADIUS: u32 = 2;
pub const FP_BITS: usize = 2048;
pub const DONE_SENTINEL: &str = "[DONE]";
const MAX_CHAIN: usize = 10;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("no <answer> tag in action text")]
    NoAnswerTag,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub properties: Vec<PropertySpec>,
    pub mode: TaskMode,
    #[serde(default = "default_gamma")]
    pub similarity_threshold: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Reject proposals with acyclic carbon chains longer than 10 atoms.
    #[serde(default = "default_true")]
    pub chain_guard: bool,
}

fn default_gamma() -> f64 {
    0.4
}

fn default_horizon() -> usize {
    5
}

fn default_true() -> bool {
    true
}

impl EnvConfig {
    pub fn single(prop: PropertySpec) -> Self {
        EnvConfig {
            properties: vec![prop],
            mode: TaskMode::Single,
            similarity_threshold: default_gamma(),
            horizon: default_horizon(),
            chain_guard: true,
        }
    }

    /// Weighted scalar score used for best-molecule tracking and reward
    /// deltas; minimize-direction properties count negated.
    pub fn weighted_score(&self, scores: &[f64]) -> f64 {
        self.properties
            .iter()
            .zip(scores)
            .map(|(p, &s)| p.signed_weight() * s)
            .sum()
    }
}

/// Why a turn received its reward; one row of the reward table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardCase {
    Invalid,
    NoModification,
    SimilarityViolation,
    Degradation,
    Improvement,
    DoneSignal,
    BudgetExhausted,
}

/// One environment transition, serializable as a JSON line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Turn {
    pub action_text: String,
    pub extracted: Option<String>,
    pub case: RewardCase,
    pub reward: f64,
    pub similarity: Option<f64>,
    /// Reward-table success status: true only for property improvements.
    pub improved: bool,
    /// Task success criteria satisfied this turn.
    pub solved: bool,
    pub feedback: String,
}

#[derive(Debug, Clone)]
pub struct MolState {
    pub graph: MolecularGraph,
    pub canonical: String,
    pub scores: Arc<Vec<f64>>,
    pub weighted: f64,
    pub similarity_to_lead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub case: RewardCase,
    pub solved: bool,
}

/// Extract the SMILES payload from the final `<answer>...</answer>` span.
/// The `[DONE]` sentinel is detected separately via [`contains_done`].
pub fn extract_answer(text: &str) -> Result<String, EnvError> {
    let close = text.rfind("</answer>").ok_or(EnvError::NoAnswerTag)?;
    let open = text[..close].rfind("<answer>").ok_or(EnvError::NoAnswerTag)?;
    Ok(text[open + "<answer>".len()..close].trim().to_string())
}

pub fn contains_done(text: &str) -> bool {
    text.contains(DONE_SENTINEL)
}

/// Longest path (in atoms) through the acyclic-carbon subgraph; ring atoms
/// are exempt. Returns the offending length when it exceeds the limit.
pub fn structural_guard(m: &MolecularGraph) -> Option<usize> {
    let n = m.heavy_atom_count();
    let chain_atom: Vec<bool> = (0..n)
        .map(|i| m.atoms()[i].element == Element::C && !m.atoms()[i].in_ring)
        .collect();
    // The chain subgraph is a forest; two BFS sweeps per tree find the
    // longest path.
    let bfs_far = |start: usize| -> (usize, usize) {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 1;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut far = (start, 1usize);
        while let Some(v) = queue.pop_front() {
            for (nbr, _) in m.neighbors(v) {
                if chain_atom[nbr] && dist[nbr] == usize::MAX {
                    dist[nbr] = dist[v] + 1;
                    if dist[nbr] > far.1 {
                        far = (nbr, dist[nbr]);
                    }
                    queue.push_back(nbr);
                }
            }
        }
        far
    };
    let mut seen = vec![false; n];
    let mut longest = 0usize;
    for start in 0..n {
        if !chain_atom[start] || seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            for (nbr, _) in m.neighbors(v) {
                if chain_atom[nbr] && !seen[nbr] {
                    seen[nbr] = true;
                    queue.push_back(nbr);
                }
            }
        }
        let (tip, _) = bfs_far(start);
        let (_, length) = bfs_far(tip);
        longest = longest.max(length);
    }
    (longest > MAX_CHAIN).then_some(longest)
}

/// Per-property and overall success. Single-property mode tests absolute
/// thresholds on the new scores; multi-property mode tests improvement
/// deltas against the lead. Both are conjoined with the similarity gate.
pub fn check_success(
    cfg: &EnvConfig,
    lead_scores: &[f64],
    scores: &[f64],
    similarity: f64,
) -> (Vec<bool>, bool) {
    let per: Vec<bool> = cfg
        .properties
        .iter()
        .enumerate()
        .map(|(i, p)| match cfg.mode {
            TaskMode::Single => p.meets_single_threshold(scores[i]),
            TaskMode::Multi => p.meets_multi_improvement(scores[i] - lead_scores[i]),
        })
        .collect();
    let all = per.iter().all(|&b| b) && similarity >= cfg.similarity_threshold;
    (per, all)
}

/// Classification of a proposal before reward assignment.
#[derive(Debug)]
pub enum Verdict {
    Invalid { reason: String },
    NoModification,
    SimilarityViolation { similarity: f64 },
    Scored(MolState),
    OutOfBudget,
}

/// Run the gate sequence for a proposal: parse, structural guard, identity,
/// similarity, then oracle scoring. Sub-threshold proposals are never
/// charged against the budget.
pub fn classify_proposal(
    smiles: &str,
    current_canonical: &str,
    lead_fp: &Fingerprint,
    cfg: &EnvConfig,
    oracle: &OracleSet,
    ledger: &OracleLedger,
) -> Result<Verdict, EnvError> {
    let graph = match parse_smiles(smiles) {
        Ok(g) => g,
        Err(e) => {
            return Ok(Verdict::Invalid {
                reason: e.to_string(),
            })
        }
    };
    if cfg.chain_guard {
        if let Some(len) = structural_guard(&graph) {
            return Ok(Verdict::Invalid {
                reason: format!("Carbon chain too long: {len} atoms (limit <= {MAX_CHAIN})"),
            });
        }
    }
    let canonical = graph.canonical_smiles();
    if canonical == current_canonical {
        return Ok(Verdict::NoModification);
    }
    let fp = graph.fingerprint(FP_RADIUS, FP_BITS);
    let similarity = tanimoto(lead_fp, &fp).expect("fixed fingerprint width");
    if similarity < cfg.similarity_threshold {
        return Ok(Verdict::SimilarityViolation { similarity });
    }
    match ledger.query(oracle, &cfg.properties, &graph, &canonical) {
        Ok(scores) => {
            let weighted = cfg.weighted_score(&scores);
            Ok(Verdict::Scored(MolState {
                graph,
                canonical,
                scores,
                weighted,
                similarity_to_lead: similarity,
            }))
        }
        Err(OracleError::BudgetExhausted) => Ok(Verdict::OutOfBudget),
        Err(e) => Err(EnvError::Oracle(e)),
    }
}

/// Reward for a classified proposal, given the current weighted score.
pub fn reward_for(verdict: &Verdict, current_weighted: f64, cfg: &EnvConfig) -> (RewardCase, f64) {
    match verdict {
        Verdict::Invalid { .. } => (RewardCase::Invalid, -0.5),
        Verdict::NoModification => (RewardCase::NoModification, -0.3),
        Verdict::SimilarityViolation { similarity } => (
            RewardCase::SimilarityViolation,
            -2.0 * (cfg.similarity_threshold - similarity),
        ),
        Verdict::Scored(state) => {
            let delta = state.weighted - current_weighted;
            if delta > 0.0 {
                (RewardCase::Improvement, 5.0 * delta.abs())
            } else {
                (RewardCase::Degradation, -delta.abs())
            }
        }
        Verdict::OutOfBudget => (RewardCase::BudgetExhausted, 0.0),
    }
}

/// A live optimization episode.
#[derive(Debug, Clone)]
pub struct Episode {
    cfg: EnvConfig,
    lead: MolState,
    lead_fp: Fingerprint,
    current: MolState,
    best: MolState,
    turn: usize,
    done: bool,
    solved: bool,
    last_reward: f64,
    last_feedback: String,
    transcript: Vec<Turn>,
}

impl Episode {
    /// Start an episode on a lead molecule; the lead is scored immediately
    /// (one budget unit unless cached).
    pub fn reset(
        lead: &str,
        cfg: &EnvConfig,
        oracle: &OracleSet,
        ledger: &OracleLedger,
    ) -> Result<Self, EnvError> {
        Self::reset_from(lead, lead, cfg, oracle, ledger)
    }

    /// Start from `start` while measuring similarity against `lead`; used by
    /// evolutionary inference where rollouts begin at an elite parent.
    pub fn reset_from(
        lead: &str,
        start: &str,
        cfg: &EnvConfig,
        oracle: &OracleSet,
        ledger: &OracleLedger,
    ) -> Result<Self, EnvError> {
        let lead_graph = parse_smiles(lead)?;
        let lead_canonical = lead_graph.canonical_smiles();
        let lead_fp = lead_graph.fingerprint(FP_RADIUS, FP_BITS);
        let lead_scores = ledger.query(oracle, &cfg.properties, &lead_graph, &lead_canonical)?;
        let lead_state = MolState {
            weighted: cfg.weighted_score(&lead_scores),
            graph: lead_graph,
            canonical: lead_canonical,
            scores: lead_scores,
            similarity_to_lead: 1.0,
        };
        let current = if start == lead {
            lead_state.clone()
        } else {
            let graph = parse_smiles(start)?;
            let canonical = graph.canonical_smiles();
            let scores = ledger.query(oracle, &cfg.properties, &graph, &canonical)?;
            let fp = graph.fingerprint(FP_RADIUS, FP_BITS);
            MolState {
                weighted: cfg.weighted_score(&scores),
                similarity_to_lead: tanimoto(&lead_fp, &fp).expect("fixed width"),
                graph,
                canonical,
                scores,
            }
        };
        Ok(Episode {
            cfg: cfg.clone(),
            lead: lead_state,
            lead_fp,
            best: current.clone(),
            current,
            turn: 0,
            done: false,
            solved: false,
            last_reward: 0.0,
            last_feedback: String::new(),
            transcript: Vec::new(),
        })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn lead(&self) -> &MolState {
        &self.lead
    }

    pub fn lead_fingerprint(&self) -> &Fingerprint {
        &self.lead_fp
    }

    pub fn current(&self) -> &MolState {
        &self.current
    }

    pub fn best(&self) -> &MolState {
        &self.best
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn solved(&self) -> bool {
        self.solved
    }

    pub fn last_reward(&self) -> f64 {
        self.last_reward
    }

    pub fn transcript(&self) -> &[Turn] {
        &self.transcript
    }

    /// Transcript as line-delimited JSON, one turn per line.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for turn in &self.transcript {
            out.push_str(&serde_json::to_string(turn).expect("serializable turn"));
            out.push('\n');
        }
        out
    }

    /// Deterministic text observation for text-based policies.
    pub fn observation(&self) -> String {
        let mut obs = String::new();
        obs.push_str(&format!("Step {} of {}\n", self.turn, self.cfg.horizon));
        obs.push_str(&format!("Current molecule: {}\n", self.current.canonical));
        for (prop, score) in self.cfg.properties.iter().zip(self.current.scores.iter()) {
            obs.push_str(&format!("{}: {:.3}\n", prop.name, score));
        }
        obs.push_str(&format!(
            "Similarity to original: {:.3} (required >= {:.3})\n",
            self.current.similarity_to_lead, self.cfg.similarity_threshold
        ));
        obs.push_str(&format!(
            "You have {} actions left.\n",
            self.cfg.horizon - self.turn
        ));
        if !self.last_feedback.is_empty() {
            obs.push_str(&self.last_feedback);
            obs.push('\n');
        }
        obs
    }

    /// Advance one turn on raw action text.
    pub fn step(
        &mut self,
        action_text: &str,
        oracle: &OracleSet,
        ledger: &OracleLedger,
    ) -> Result<StepOutcome, EnvError> {
        if self.done || self.turn >= self.cfg.horizon {
            return Err(EnvError::EpisodeFinished);
        }

        if contains_done(action_text) {
            self.turn += 1;
            let outcome = StepOutcome {
                reward: 0.0,
                done: true,
                case: RewardCase::DoneSignal,
                solved: false,
            };
            self.record(
                action_text,
                None,
                outcome,
                None,
                "Episode ended by [DONE].".into(),
            );
            return Ok(outcome);
        }

        let (extracted, verdict) = match extract_answer(action_text) {
            Ok(smiles) => {
                let verdict = classify_proposal(
                    &smiles,
                    &self.current.canonical,
                    &self.lead_fp,
                    &self.cfg,
                    oracle,
                    ledger,
                )?;
                (Some(smiles), verdict)
            }
            Err(EnvError::NoAnswerTag) => (
                None,
                Verdict::Invalid {
                    reason: "no <answer> tag found".to_string(),
                },
            ),
            Err(e) => return Err(e),
        };

        let (case, reward) = reward_for(&verdict, self.current.weighted, &self.cfg);
        let mut feedback = String::new();
        let mut similarity = None;
        let mut solved = false;

        match verdict {
            Verdict::Invalid { reason } => {
                feedback.push_str(&format!(
                    "Invalid proposal: {reason}. Please propose a valid molecule."
                ));
            }
            Verdict::NoModification => {
                feedback.push_str(
                    "No modification detected. Your proposed SMILES matches the current \
                     molecule. Please propose a different modification.",
                );
            }
            Verdict::SimilarityViolation { similarity: sim } => {
                similarity = Some(sim);
                feedback.push_str(&format!(
                    "Similarity too low: {sim:.3} < required {:.3}. Consider smaller, more \
                     conservative changes.",
                    self.cfg.similarity_threshold
                ));
            }
            Verdict::OutOfBudget => {
                feedback.push_str("Oracle budget exhausted.");
            }
            Verdict::Scored(state) => {
                similarity = Some(state.similarity_to_lead);
                feedback.push_str(&format!(
                    "Similarity to Original: {:.3} (required >= {:.3})\n",
                    state.similarity_to_lead, self.cfg.similarity_threshold
                ));
                for ((prop, new), old) in self
                    .cfg
                    .properties
                    .iter()
                    .zip(state.scores.iter())
                    .zip(self.current.scores.iter())
                {
                    feedback.push_str(&format!(
                        "{}: {:.3} (change: {:+.3})\n",
                        prop.name,
                        new,
                        new - old
                    ));
                }
                let (_, all_met) = check_success(
                    &self.cfg,
                    &self.lead.scores,
                    &state.scores,
                    state.similarity_to_lead,
                );
                solved = all_met;

                // MDP transition: the scored proposal becomes the current
                // molecule and the best snapshot advances when outdone.
                let new_best = state.weighted > self.best.weighted;
                self.current = state;
                if new_best {
                    self.best = self.current.clone();
                    feedback.push_str("Great job! New best score achieved! Keep refining.");
                } else if case == RewardCase::Improvement {
                    feedback.push_str("Score improved. Keep refining.");
                } else {
                    feedback.push_str(
                        "Score decreased. Valid modification, but negatively impacted \
                         property. Consider alternative strategies.",
                    );
                }
                if solved {
                    feedback.push_str("\nAll targets achieved!");
                }
            }
        }

        // Rollback: after a failed modification, revert to the best-scoring
        // molecule when it strictly outperforms the current one.
        if reward < 0.0
            && self.best.canonical != self.current.canonical
            && self.best.weighted > self.current.weighted
        {
            self.current = self.best.clone();
            feedback.push_str("\nEnvironment reverted to best molecule.");
        }

        self.turn += 1;
        let done =
            solved || case == RewardCase::BudgetExhausted || self.turn >= self.cfg.horizon;
        let outcome = StepOutcome {
            reward,
            done,
            case,
            solved,
        };
        self.record(action_text, extracted, outcome, similarity, feedback);
        Ok(outcome)
    }

    fn record(
        &mut self,
        action_text: &str,
        extracted: Option<String>,
        outcome: StepOutcome,
        similarity: Option<f64>,
        feedback: String,
    ) {
        self.done = outcome.done;
        self.solved |= outcome.solved;
        self.last_reward = outcome.reward;
        self.last_feedback = format!("{feedback}\nReward: {:.3}", outcome.reward);
        self.transcript.push(Turn {
            action_text: action_text.to_string(),
            extracted,
            case: outcome.case,
            reward: outcome.reward,
            similarity,
            improved: outcome.case == RewardCase::Improvement,
            solved: outcome.solved,
            feedback,
        });
    }
}
