//! Inference-time evolutionary refinement.
//!
//! Each generation samples one parent uniformly from the elite pool, runs
//! `N` policy rollouts from it at a scheduled temperature, then evaluates
//! the unique candidates against the budgeted ledger and inserts survivors
//! into the pool. Similarity is always measured against the original lead.
//!
//! Rollouts within a generation may run in parallel: they score molecules
//! through an unmetered scratch memo, and the real ledger is charged
//! afterwards in deterministic (rollout index, turn index) order. The budget
//! cutoff therefore lands on the same molecule for any worker count, and a
//! molecule seen in several rollouts is charged once.

use crate::chemgraph::{canonicalize, parse_smiles, MolecularGraph};
use crate::env::{check_success, EnvConfig, Episode, EnvError, RewardCase};
use crate::oracle::{OracleError, OracleLedger, OracleSet, PropertySpec};
use crate::par;
use crate::policy::EditPolicy;
use crate::rng::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;


#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub budget: u64,
    pub generations: usize,
    pub rollouts_per_parent: usize,
    pub horizon: usize,
    pub tau_base: f64,
    pub tau_increment: f64,
    pub tau_max: f64,
    pub pool_capacity: usize,
    pub elite_similarity: f64,
    /// Difficulty weights for fitness, by property name; unnamed properties
    /// fall back to the built-in table, then to their task weight.
    pub fitness_weights: BTreeMap<String, f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            budget: 500,
            generations: 10,
            rollouts_per_parent: 32,
            horizon: 5,
            tau_base: 0.9,
            tau_increment: 0.1,
            tau_max: 2.0,
            pool_capacity: 5,
            elite_similarity: 0.4,
            fitness_weights: BTreeMap::new(),
        }
    }
}

/// Sampling temperature for generation `g` (1-based):
/// `min(tau_base + (g-1) * increment, tau_max)`.
pub fn temperature_at(generation: usize, cfg: &EvolveConfig) -> f64 {
    assert!(generation >= 1, "generations are 1-based");
    (cfg.tau_base + (generation - 1) as f64 * cfg.tau_increment).min(cfg.tau_max)
}

/// Difficulty weight for a property: explicit configuration first, then the
/// built-in difficulty table, then the task weight.
pub fn fitness_weight(prop: &PropertySpec, cfg: &EvolveConfig) -> f64 {
    if let Some(&w) = cfg.fitness_weights.get(&prop.name) {
        return w;
    }
    match prop.name.as_str() {
        "jnk3" => 12.0,
        "qed" | "qed_proxy" => 10.0,
        "drd2" => 4.0,
        "sa" | "sa_proxy" => 2.0,
        "logp" | "logp_proxy" | "plogp" => 1.0,
        _ => prop.weight,
    }
}

/// Difficulty-weighted improvement over the lead; minimize-direction
/// properties count sign-flipped so improvement is always positive.
pub fn fitness(
    scores: &[f64],
    lead_scores: &[f64],
    props: &[PropertySpec],
    cfg: &EvolveConfig,
) -> f64 {
    props
        .iter()
        .zip(scores.iter().zip(lead_scores))
        .map(|(p, (&s, &l))| {
            let direction = match p.direction {
                crate::oracle::Direction::Maximize => 1.0,
                crate::oracle::Direction::Minimize => -1.0,
            };
            fitness_weight(p, cfg) * direction * (s - l)
        })
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EliteEntry {
    pub smiles: String,
    pub fitness: f64,
    pub similarity: f64,
    pub scores: Vec<f64>,
}

/// Capacity-bounded best-molecule set gated by similarity to the lead.
/// Entries stay sorted by fitness descending (ties by SMILES) and are
/// unique by canonical SMILES.
#[derive(Debug, Clone, Serialize)]
pub struct ElitePool {
    pub capacity: usize,
    pub elite_similarity: f64,
    entries: Vec<EliteEntry>,
}

impl ElitePool {
    pub fn new(capacity: usize, elite_similarity: f64) -> Self {
        ElitePool {
            capacity,
            elite_similarity,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[EliteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&EliteEntry> {
        self.entries.first()
    }

    pub fn contains(&self, smiles: &str) -> bool {
        self.entries.iter().any(|e| e.smiles == smiles)
    }

    /// Insert if the candidate passes the similarity gate, is not a
    /// duplicate, and either the pool has room or it beats the worst member.
    pub fn insert(&mut self, entry: EliteEntry) -> bool {
        if entry.similarity < self.elite_similarity || self.contains(&entry.smiles) {
            return false;
        }
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            let worst = self.entries.last().expect("non-empty at capacity");
            if entry.fitness <= worst.fitness {
                return false;
            }
            *self.entries.last_mut().unwrap() = entry;
        }
        self.entries.sort_by(|a, b| {
            b.fitness
                .total_cmp(&a.fitness)
                .then_with(|| a.smiles.cmp(&b.smiles))
        });
        true
    }
}

/// Per-generation record of the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub temperature: f64,
    pub parent: String,
    pub new_evaluations: usize,
    pub calls_used: u64,
    pub pool: Vec<EliteEntry>,
}

/// A molecule that satisfied the task success criteria, with the budget
/// position at which it was charged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvedRecord {
    pub smiles: String,
    pub similarity: f64,
    pub scores: Vec<f64>,
    pub fitness: f64,
    pub calls_at_success: u64,
}

#[derive(Debug)]
pub struct EvolutionOutcome {
    pub pool: ElitePool,
    pub log: Vec<GenerationLog>,
    pub solved: Option<SolvedRecord>,
    pub calls_used: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

struct ScoredProposal {
    canonical: String,
    graph: MolecularGraph,
    similarity: f64,
}

/// Run the evolutionary loop for one lead molecule.
pub fn run_evolution(
    policy: &EditPolicy,
    lead: &str,
    env_cfg: &EnvConfig,
    cfg: &EvolveConfig,
    oracle: &OracleSet,
    ledger: &OracleLedger,
    seed: u64,
) -> Result<EvolutionOutcome, EnvError> {
    let lead_graph = parse_smiles(lead)?;
    let lead_canonical = canonicalize(&lead_graph);
    let lead_scores = ledger.query(oracle, &env_cfg.properties, &lead_graph, &lead_canonical)?;

    let mut episode_cfg = env_cfg.clone();
    episode_cfg.horizon = cfg.horizon;

    let mut pool = ElitePool::new(cfg.pool_capacity, cfg.elite_similarity);
    pool.insert(EliteEntry {
        smiles: lead_canonical.clone(),
        fitness: 0.0,
        similarity: 1.0,
        scores: lead_scores.to_vec(),
    });

    let mut solved: Option<SolvedRecord> = None;
    let (_, lead_solved) = check_success(env_cfg, &lead_scores, &lead_scores, 1.0);
    if lead_solved {
        solved = Some(SolvedRecord {
            smiles: lead_canonical.clone(),
            similarity: 1.0,
            scores: lead_scores.to_vec(),
            fitness: 0.0,
            calls_at_success: ledger.calls_used(),
        });
    }

    // Scratch memo for in-rollout feedback; the real ledger is charged in
    // replay order below.
    let scratch = OracleLedger::unmetered();
    let mut root_rng = stream_rng(seed, "evolution-root", &[]);
    let mut log = Vec::new();

    'generations: for generation in 1..=cfg.generations {
        if ledger.calls_used() >= cfg.budget {
            break;
        }
        let parent_idx = root_rng.random_range(0..pool.len());
        let parent = pool.entries()[parent_idx].smiles.clone();
        let temperature = temperature_at(generation, cfg);

        let rollouts: Vec<Vec<ScoredProposal>> =
            par::map_indexed(cfg.rollouts_per_parent, |rollout_idx| {
                let mut rng = stream_rng(
                    seed,
                    "evolution-rollout",
                    &[generation as u64, rollout_idx as u64],
                );
                let mut scored = Vec::new();
                let Ok(mut episode) =
                    Episode::reset_from(&lead_canonical, &parent, &episode_cfg, oracle, &scratch)
                else {
                    return scored;
                };
                while !episode.done() {
                    let action = policy.act(&episode, Some(temperature), &mut rng);
                    let Ok(outcome) = episode.step(&action.text, oracle, &scratch) else {
                        break;
                    };
                    if matches!(
                        outcome.case,
                        RewardCase::Improvement | RewardCase::Degradation
                    ) {
                        let turn = episode.transcript().last().expect("turn recorded");
                        let raw = turn.extracted.as_deref().expect("scored turn has SMILES");
                        let graph = parse_smiles(raw).expect("scored turn parsed");
                        scored.push(ScoredProposal {
                            canonical: canonicalize(&graph),
                            graph,
                            similarity: turn.similarity.expect("scored turn has similarity"),
                        });
                    }
                }
                scored
            });

        // Deterministic replay: charge unique candidates in rollout order,
        // then consider each for the pool.
        let calls_before = ledger.calls_used();
        let mut budget_done = false;
        for proposal in rollouts.iter().flatten() {
            match ledger.query(
                oracle,
                &env_cfg.properties,
                &proposal.graph,
                &proposal.canonical,
            ) {
                Ok(scores) => {
                    let fit = fitness(&scores, &lead_scores, &env_cfg.properties, cfg);
                    if proposal.similarity >= cfg.elite_similarity {
                        pool.insert(EliteEntry {
                            smiles: proposal.canonical.clone(),
                            fitness: fit,
                            similarity: proposal.similarity,
                            scores: scores.to_vec(),
                        });
                    }
                    if solved.is_none() {
                        let (_, ok) =
                            check_success(env_cfg, &lead_scores, &scores, proposal.similarity);
                        if ok {
                            solved = Some(SolvedRecord {
                                smiles: proposal.canonical.clone(),
                                similarity: proposal.similarity,
                                scores: scores.to_vec(),
                                fitness: fit,
                                calls_at_success: ledger.calls_used(),
                            });
                        }
                    }
                }
                Err(OracleError::BudgetExhausted) => {
                    budget_done = true;
                    break;
                }
                Err(e) => return Err(EnvError::Oracle(e)),
            }
        }

        log.push(GenerationLog {
            generation,
            temperature,
            parent,
            new_evaluations: (ledger.calls_used() - calls_before) as usize,
            calls_used: ledger.calls_used(),
            pool: pool.entries().to_vec(),
        });
        if budget_done {
            break 'generations;
        }
    }

    Ok(EvolutionOutcome {
        pool,
        log,
        solved,
        calls_used: ledger.calls_used(),
        cache_hits: ledger.cache_hits(),
        cache_misses: ledger.cache_misses(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::FragmentLibrary;

    fn heavy_env(threshold: f64) -> EnvConfig {
        let mut prop = PropertySpec::builtin("heavyatoms").unwrap();
        prop.single_threshold = threshold;
        EnvConfig::single(prop)
    }

    #[test]
    fn temperature_schedule_reference_points() {
        let cfg = EvolveConfig::default();
        assert_eq!(temperature_at(1, &cfg), 0.9);
        assert_eq!(temperature_at(5, &cfg), 1.3);
        assert_eq!(temperature_at(12, &cfg), 2.0);
        assert_eq!(temperature_at(20, &cfg), 2.0);
    }

    #[test]
    fn fitness_uses_difficulty_weights() {
        let cfg = EvolveConfig::default();
        let props = vec![
            PropertySpec::builtin("qed_proxy").unwrap(),
            PropertySpec::builtin("logp_proxy").unwrap(),
        ];
        // dQED = 0.1 at weight 10, dlogP = 1.0 at weight 1
        let f = fitness(&[0.8, 2.0], &[0.7, 1.0], &props, &cfg);
        assert!((f - 2.0).abs() < 1e-12);
        // identical molecule scores zero
        assert_eq!(fitness(&[0.7, 1.0], &[0.7, 1.0], &props, &cfg), 0.0);
        // minimized property improvement is sign-flipped
        let sa = vec![PropertySpec::builtin("sa_proxy").unwrap()];
        let f = fitness(&[2.5], &[3.0], &sa, &cfg);
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn elite_pool_insert_rules() {
        let mut pool = ElitePool::new(5, 0.4);
        let entry = |s: &str, fit: f64, sim: f64| EliteEntry {
            smiles: s.to_string(),
            fitness: fit,
            similarity: sim,
            scores: vec![],
        };
        assert!(pool.insert(entry("A", 0.0, 1.0)));
        // similarity gate
        assert!(!pool.insert(entry("B", 9.0, 0.39)));
        // duplicates rejected
        assert!(!pool.insert(entry("A", 5.0, 1.0)));
        for (s, f) in [("C", 5.0), ("D", 4.0), ("E", 3.0), ("F", 2.0)] {
            assert!(pool.insert(entry(s, f, 0.8)));
        }
        assert_eq!(pool.len(), 5);
        // full pool: replaces the worst only when strictly better
        assert!(!pool.insert(entry("G", -1.0, 0.9)));
        assert!(pool.insert(entry("H", 3.5, 0.9)));
        assert_eq!(pool.len(), 5);
        let fits: Vec<f64> = pool.entries().iter().map(|e| e.fitness).collect();
        assert_eq!(fits, vec![5.0, 4.0, 3.5, 3.0, 2.0]);
    }

    #[test]
    fn budget_one_evaluates_only_the_lead() {
        let env_cfg = heavy_env(99.0);
        let cfg = EvolveConfig {
            budget: 1,
            generations: 5,
            rollouts_per_parent: 2,
            horizon: 2,
            ..EvolveConfig::default()
        };
        let oracle = OracleSet::builtin_only();
        let ledger = OracleLedger::new(1);
        let policy = EditPolicy::new(FragmentLibrary::builtin());
        let out =
            run_evolution(&policy, "CCO", &env_cfg, &cfg, &oracle, &ledger, 7).unwrap();
        assert_eq!(out.calls_used, 1);
        assert_eq!(out.pool.len(), 1);
        assert!(out.log.is_empty(), "no generation may evaluate anything");
    }

    #[test]
    fn pool_best_fitness_is_monotone_across_generations() {
        let env_cfg = heavy_env(99.0);
        let cfg = EvolveConfig {
            budget: 100,
            generations: 6,
            rollouts_per_parent: 4,
            horizon: 3,
            ..EvolveConfig::default()
        };
        let oracle = OracleSet::builtin_only();
        let ledger = OracleLedger::new(cfg.budget);
        let policy = EditPolicy::new(FragmentLibrary::builtin());
        let out =
            run_evolution(&policy, "CCO", &env_cfg, &cfg, &oracle, &ledger, 11).unwrap();
        let mut last = f64::NEG_INFINITY;
        for gen in &out.log {
            let best = gen.pool.first().map(|e| e.fitness).unwrap_or(0.0);
            assert!(best >= last);
            last = best;
        }
        assert!(out.calls_used <= cfg.budget);
        assert!(out.pool.best().unwrap().fitness >= 0.0);
    }

    #[test]
    fn every_pool_member_satisfies_the_similarity_gate() {
        let env_cfg = heavy_env(99.0);
        let cfg = EvolveConfig {
            budget: 60,
            generations: 4,
            rollouts_per_parent: 4,
            horizon: 3,
            ..EvolveConfig::default()
        };
        let oracle = OracleSet::builtin_only();
        let ledger = OracleLedger::new(cfg.budget);
        let policy = EditPolicy::new(FragmentLibrary::builtin());
        let out = run_evolution(&policy, "CCCCO", &env_cfg, &cfg, &oracle, &ledger, 13).unwrap();
        for entry in out.pool.entries() {
            assert!(entry.similarity >= cfg.elite_similarity);
        }
    }

    #[test]
    fn reruns_with_same_seed_are_identical() {
        let env_cfg = heavy_env(99.0);
        let cfg = EvolveConfig {
            budget: 40,
            generations: 3,
            rollouts_per_parent: 3,
            horizon: 3,
            ..EvolveConfig::default()
        };
        let oracle = OracleSet::builtin_only();
        let policy = EditPolicy::new(FragmentLibrary::builtin());
        let run = || {
            let ledger = OracleLedger::new(cfg.budget);
            let out =
                run_evolution(&policy, "CCO", &env_cfg, &cfg, &oracle, &ledger, 17).unwrap();
            serde_json::to_string(&out.log).unwrap()
        };
        assert_eq!(run(), run());
    }
}
