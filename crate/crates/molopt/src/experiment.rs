//! Experiment orchestration: lead generation, the training loop, held-out
//! evaluation, and result-file emission.
//!
//! Determinism contract: every stochastic step draws from a stream derived
//! from the run seed and structural indices, rollout collection preserves
//! index order, and all reductions are sequential in fixed order. Repeating
//! a run with the same seed produces byte-identical files for any worker
//! count.

use crate::chemgraph::{canonicalize, parse_smiles};
use crate::config::{Arm, ExperimentConfig, InferenceMode, LeadSource};
use crate::env::{EnvConfig, EnvError, Episode};
use crate::evolve::run_evolution;
use crate::filter::{filter_batch, FilterError};
use crate::ga::ga_baseline;
use crate::metrics::{summarize, MetricsSummary, OptimizationResult};
use crate::oracle::{builtin_property, OracleError, OracleLedger, OracleSet};
use crate::par;
use crate::pgpo::{
    signal_count, Diagnostics, Trainer, TrajectoryBatch, TrajectoryRecord, TurnRecord,
};
use crate::policy::{
    load_checkpoint, save_checkpoint, EditPolicy, FragmentLibrary, PolicyError, PolicyParams,
};
use crate::rng::stream_rng;
use rand::Rng;
use serde::Serialize;
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("lead generation stalled: produced {got} of {wanted} leads")]
    LeadGeneration { wanted: usize, got: usize },
    #[error("leads file has no valid molecules")]
    NoLeads,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scaffolds that seed the random lead generator. The polar tail keeps
/// low-lipophilicity bands reachable by rejection sampling.
const LEAD_SCAFFOLDS: &[&str] = &[
    "CCO", "CCN", "CC(C)O", "CCOC", "CCNC", "C1CCCCC1", "c1ccccc1C", "CC(=O)N", "CCSC", "OCCO",
    "OCC(O)CO", "OCCOCCO", "NCC(O)CO", "OCC(N)C(O)CO", "OC1CCC(O)C(O)C1",
];

/// Deterministically generate `count` distinct lead molecules obeying the
/// size and property-band constraints, excluding any canonical SMILES in
/// `exclude`.
pub fn generate_leads(
    cfg: &ExperimentConfig,
    library: &FragmentLibrary,
    stream: &str,
    count: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<String>, ExperimentError> {
    let leads_cfg = &cfg.leads;
    let mut out = Vec::with_capacity(count);
    let mut seen: HashSet<String> = exclude.clone();
    let mut attempt = 0u64;
    let max_attempts = (count as u64) * 500 + 10_000;
    while out.len() < count && attempt < max_attempts {
        let mut rng = stream_rng(cfg.seed, stream, &[attempt]);
        attempt += 1;
        let scaffold = LEAD_SCAFFOLDS[rng.random_range(0..LEAD_SCAFFOLDS.len())];
        let mut mol = parse_smiles(scaffold).expect("scaffolds are valid");
        let band_target = leads_cfg
            .property_band
            .as_ref()
            .map(|b| (b.name.clone(), 0.5 * (b.min + b.max)));
        let steps = rng.random_range(4..=10);
        for _ in 0..steps {
            let edits = crate::policy::enumerate_legal_edits(&mol, library);
            let pick = rng.random_range(0..edits.len());
            if edits[pick] == crate::policy::EditAction::Done {
                continue;
            }
            if let Ok(next) = crate::policy::apply_edit(&mol, &edits[pick], library) {
                if next.heavy_atom_count() > leads_cfg.max_heavy_atoms {
                    continue;
                }
                // Biased walk: keep moves toward the band center, and a
                // quarter of the drifting moves for diversity.
                let keep = match &band_target {
                    None => true,
                    Some((name, target)) => {
                        let cur = builtin_property(name, &mol)
                            .map_err(ExperimentError::Oracle)?;
                        let new = builtin_property(name, &next)
                            .map_err(ExperimentError::Oracle)?;
                        (new - target).abs() <= (cur - target).abs()
                            || rng.random::<f64>() < 0.25
                    }
                };
                if keep {
                    mol = next;
                }
            }
        }
        let heavy = mol.heavy_atom_count();
        if heavy < leads_cfg.min_heavy_atoms || heavy > leads_cfg.max_heavy_atoms {
            continue;
        }
        if crate::env::structural_guard(&mol).is_some() {
            continue;
        }
        if let Some(band) = &leads_cfg.property_band {
            let value = builtin_property(&band.name, &mol).map_err(ExperimentError::Oracle)?;
            if value < band.min || value > band.max {
                continue;
            }
        }
        let canonical = canonicalize(&mol);
        if seen.insert(canonical.clone()) {
            out.push(canonical);
        }
    }
    if out.len() < count {
        return Err(ExperimentError::LeadGeneration {
            wanted: count,
            got: out.len(),
        });
    }
    Ok(out)
}

/// Load leads from a one-SMILES-per-line file, canonicalizing and
/// deduplicating.
pub fn load_leads(path: &Path) -> Result<Vec<String>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut leads = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let graph = parse_smiles(line).map_err(EnvError::Parse)?;
        let canonical = canonicalize(&graph);
        if seen.insert(canonical.clone()) {
            leads.push(canonical);
        }
    }
    if leads.is_empty() {
        return Err(ExperimentError::NoLeads);
    }
    Ok(leads)
}

/// Run one training episode and record the per-turn learning data.
fn collect_trajectory(
    policy: &EditPolicy,
    lead: &str,
    lead_id: usize,
    traj_id: usize,
    env_cfg: &EnvConfig,
    oracle: &OracleSet,
    ledger: &OracleLedger,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TrajectoryRecord, EnvError> {
    let mut episode = Episode::reset(lead, env_cfg, oracle, ledger)?;
    let mut turns = Vec::with_capacity(env_cfg.horizon);
    while !episode.done() {
        let action = policy.act(&episode, None, rng);
        let outcome = episode.step(&action.text, oracle, ledger)?;
        turns.push(TurnRecord {
            features: action.features,
            rows: action.rows,
            chosen: action.chosen,
            old_logp: action.logp,
            tau: policy.params.tau,
            reward: outcome.reward,
        });
    }
    Ok(TrajectoryRecord {
        id: traj_id,
        lead_id,
        turns,
    })
}

/// Per-iteration training record.
#[derive(Debug, Clone, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub collected: usize,
    pub retained: usize,
    pub retention_ratio: f64,
    pub mean_cumulative_reward: f64,
    pub trajectory_signals: usize,
    pub preference_signals: usize,
    pub updates: Vec<Diagnostics>,
    pub skipped: bool,
}

/// One line of the training diagnostics log: a single update step together
/// with its iteration context.
#[derive(Debug, Clone, Serialize)]
struct UpdateLogLine<'a> {
    iteration: usize,
    update: Option<usize>,
    collected: usize,
    retained: usize,
    retention_ratio: f64,
    mean_cumulative_reward: f64,
    trajectory_signals: usize,
    preference_signals: usize,
    skipped: bool,
    #[serde(flatten)]
    diagnostics: Option<&'a Diagnostics>,
}

/// Render the per-update-step line-delimited JSON diagnostics log.
pub fn diagnostics_jsonl(diagnostics: &[IterationDiagnostics]) -> String {
    let mut out = String::new();
    for iter in diagnostics {
        let base = |update, diag| UpdateLogLine {
            iteration: iter.iteration,
            update,
            collected: iter.collected,
            retained: iter.retained,
            retention_ratio: iter.retention_ratio,
            mean_cumulative_reward: iter.mean_cumulative_reward,
            trajectory_signals: iter.trajectory_signals,
            preference_signals: iter.preference_signals,
            skipped: iter.skipped,
            diagnostics: diag,
        };
        if iter.updates.is_empty() {
            out.push_str(&serde_json::to_string(&base(None, None)).expect("serializable"));
            out.push('\n');
        } else {
            for (k, diag) in iter.updates.iter().enumerate() {
                out.push_str(
                    &serde_json::to_string(&base(Some(k), Some(diag))).expect("serializable"),
                );
                out.push('\n');
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub params: PolicyParams,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Train the edit policy with the dual-level objective.
pub fn train(
    cfg: &ExperimentConfig,
    library: &FragmentLibrary,
    leads: &[String],
) -> Result<TrainArtifacts, ExperimentError> {
    let oracle = OracleSet::for_task(&cfg.task.properties)?;
    // training-time oracle use is unmetered; the ledger serves as the memo
    let ledger = OracleLedger::unmetered();
    let tcfg = &cfg.training;
    let mut params = PolicyParams::for_library(library);
    params.tau = tcfg.sampling_temperature;
    params.beta = tcfg.pgpo.beta;
    let mut trainer = Trainer::new(params, tcfg.pgpo.clone());
    let mut diagnostics = Vec::with_capacity(tcfg.iterations);

    for iteration in 0..tcfg.iterations {
        let behavior = EditPolicy::with_params(trainer.params.clone(), library.clone())?;
        let total = leads.len() * tcfg.rollouts_per_lead;
        let collected: Vec<Result<TrajectoryRecord, EnvError>> = par::map_indexed(total, |k| {
            let lead_idx = k / tcfg.rollouts_per_lead;
            let rollout = k % tcfg.rollouts_per_lead;
            let mut rng = stream_rng(
                cfg.seed,
                "train-rollout",
                &[iteration as u64, lead_idx as u64, rollout as u64],
            );
            collect_trajectory(
                &behavior,
                &leads[lead_idx],
                lead_idx,
                k,
                &cfg.task,
                &oracle,
                &ledger,
                &mut rng,
            )
        });
        let mut trajectories = Vec::with_capacity(total);
        for t in collected {
            trajectories.push(t?);
        }
        let batch = TrajectoryBatch { trajectories };
        let mean_reward = batch
            .trajectories
            .iter()
            .map(TrajectoryRecord::cumulative_reward)
            .sum::<f64>()
            / batch.len().max(1) as f64;

        let filtered = match filter_batch(&batch, tcfg.variance_keep_ratio, tcfg.score_keep_ratio)
        {
            Ok(f) => f,
            Err(FilterError::EmptyAfterFilter) => {
                diagnostics.push(IterationDiagnostics {
                    iteration,
                    collected: batch.len(),
                    retained: 0,
                    retention_ratio: 0.0,
                    mean_cumulative_reward: mean_reward,
                    trajectory_signals: 0,
                    preference_signals: 0,
                    updates: Vec::new(),
                    skipped: true,
                });
                continue;
            }
        };
        let (traj_signals, pref_signals) = signal_count(&filtered, &tcfg.pgpo);

        let mut updates = Vec::new();
        for chunk in filtered.trajectories.chunks(tcfg.pgpo.minibatch_size) {
            let minibatch = TrajectoryBatch {
                trajectories: chunk.to_vec(),
            };
            match trainer.update(&minibatch) {
                Ok(diag) => updates.push(diag),
                Err(crate::pgpo::PgpoError::NonFiniteGradient) => {
                    // abort this step, keep training
                    continue;
                }
                Err(crate::pgpo::PgpoError::EmptyBatch) => continue,
                Err(e) => panic!("unexpected update failure: {e}"),
            }
        }
        diagnostics.push(IterationDiagnostics {
            iteration,
            collected: batch.len(),
            retained: filtered.len(),
            retention_ratio: filtered.len() as f64 / batch.len().max(1) as f64,
            mean_cumulative_reward: mean_reward,
            trajectory_signals: traj_signals,
            preference_signals: pref_signals,
            updates,
            skipped: false,
        });
    }

    Ok(TrainArtifacts {
        params: trainer.params,
        diagnostics,
    })
}

/// Which optimizer evaluates the held-out leads.
pub enum EvalArm<'a> {
    Policy(&'a PolicyParams),
    Ga,
}

fn result_from_parts(
    lead: &str,
    names: Vec<String>,
    lead_scores: Vec<f64>,
    solved: Option<crate::evolve::SolvedRecord>,
    calls_used: u64,
    error: Option<String>,
) -> OptimizationResult {
    match solved {
        Some(s) => OptimizationResult {
            lead: lead.to_string(),
            optimized: Some(s.smiles),
            success: true,
            similarity: Some(s.similarity),
            property_names: names,
            lead_scores,
            final_scores: Some(s.scores),
            oracle_calls_used: calls_used,
            calls_at_success: Some(s.calls_at_success),
            error,
        },
        None => OptimizationResult {
            lead: lead.to_string(),
            optimized: None,
            success: false,
            similarity: None,
            property_names: names,
            lead_scores,
            final_scores: None,
            oracle_calls_used: calls_used,
            calls_at_success: None,
            error,
        },
    }
}

/// Direct-mode inference: independent rollouts from the lead, charged
/// against the ledger in rollout order, until success, budget exhaustion,
/// or the rollout cap.
fn direct_inference(
    policy: &EditPolicy,
    lead: &str,
    env_cfg: &EnvConfig,
    max_rollouts: usize,
    oracle: &OracleSet,
    ledger: &OracleLedger,
    seed: u64,
) -> Result<Option<crate::evolve::SolvedRecord>, EnvError> {
    use crate::env::check_success;
    let lead_graph = parse_smiles(lead)?;
    let lead_canonical = canonicalize(&lead_graph);
    let lead_scores = ledger.query(oracle, &env_cfg.properties, &lead_graph, &lead_canonical)?;
    let (_, lead_ok) = check_success(env_cfg, &lead_scores, &lead_scores, 1.0);
    if lead_ok {
        return Ok(Some(crate::evolve::SolvedRecord {
            smiles: lead_canonical,
            similarity: 1.0,
            scores: lead_scores.to_vec(),
            fitness: 0.0,
            calls_at_success: ledger.calls_used(),
        }));
    }
    for rollout in 0..max_rollouts {
        if ledger.exhausted() {
            break;
        }
        let mut rng = stream_rng(seed, "direct-rollout", &[rollout as u64]);
        let mut episode = Episode::reset(&lead_canonical, env_cfg, oracle, ledger)?;
        while !episode.done() {
            let action = policy.act(&episode, None, &mut rng);
            let outcome = episode.step(&action.text, oracle, ledger)?;
            if outcome.solved {
                let state = episode.current();
                return Ok(Some(crate::evolve::SolvedRecord {
                    smiles: state.canonical.clone(),
                    similarity: state.similarity_to_lead,
                    scores: state.scores.to_vec(),
                    fitness: 0.0,
                    calls_at_success: ledger.calls_used(),
                }));
            }
        }
    }
    Ok(None)
}

/// Evaluate an arm over held-out leads, one fresh budgeted ledger per lead.
/// Leads run in parallel; each produces its result independently.
pub fn evaluate(
    arm: &EvalArm,
    leads: &[String],
    cfg: &ExperimentConfig,
    library: &FragmentLibrary,
    stream: &str,
) -> Result<Vec<OptimizationResult>, ExperimentError> {
    evaluate_with_logs(arm, leads, cfg, library, stream, None)
}

/// [`evaluate`], optionally writing each lead's per-generation evolution
/// run log (line-delimited JSON) into `run_log_dir`.
pub fn evaluate_with_logs(
    arm: &EvalArm,
    leads: &[String],
    cfg: &ExperimentConfig,
    library: &FragmentLibrary,
    stream: &str,
    run_log_dir: Option<&Path>,
) -> Result<Vec<OptimizationResult>, ExperimentError> {
    if let Some(dir) = run_log_dir {
        std::fs::create_dir_all(dir)?;
    }
    let oracle = OracleSet::for_task(&cfg.task.properties)?;
    let names: Vec<String> = cfg
        .task
        .properties
        .iter()
        .map(|p| p.name.clone())
        .collect();
    let results: Vec<OptimizationResult> = par::map_indexed(leads.len(), |idx| {
        let lead = &leads[idx];
        let seed = crate::rng::derive_seed(cfg.seed, stream, &[idx as u64]);
        let ledger = OracleLedger::new(cfg.inference.evolve.budget);
        let lead_scores = parse_smiles(lead)
            .ok()
            .and_then(|g| {
                oracle
                    .score_all(&cfg.task.properties, &g, &canonicalize(&g))
                    .ok()
            })
            .unwrap_or_default();
        let run = || -> Result<(Option<crate::evolve::SolvedRecord>, u64), ExperimentError> {
            match arm {
                EvalArm::Policy(params) => {
                    let policy =
                        EditPolicy::with_params((*params).clone(), library.clone())?;
                    match cfg.inference.mode {
                        InferenceMode::Evolution => {
                            let out = run_evolution(
                                &policy,
                                lead,
                                &cfg.task,
                                &cfg.inference.evolve,
                                &oracle,
                                &ledger,
                                seed,
                            )?;
                            if let Some(dir) = run_log_dir {
                                let mut text = String::new();
                                for record in &out.log {
                                    text.push_str(
                                        &serde_json::to_string(record)
                                            .expect("serializable generation log"),
                                    );
                                    text.push('\n');
                                }
                                std::fs::write(
                                    dir.join(format!("run_log_{idx:04}.ndjson")),
                                    text,
                                )?;
                            }
                            Ok((out.solved, out.calls_used))
                        }
                        InferenceMode::Direct => {
                            let solved = direct_inference(
                                &policy,
                                lead,
                                &cfg.task,
                                cfg.inference.direct_rollouts,
                                &oracle,
                                &ledger,
                                seed,
                            )?;
                            Ok((solved, ledger.calls_used()))
                        }
                    }
                }
                EvalArm::Ga => {
                    let out = ga_baseline(
                        library,
                        lead,
                        &cfg.task,
                        &cfg.inference.evolve,
                        &cfg.inference.ga,
                        &oracle,
                        &ledger,
                        seed,
                    )?;
                    Ok((out.solved, out.calls_used))
                }
            }
        };
        match run() {
            Ok((solved, calls)) => {
                result_from_parts(lead, names.clone(), lead_scores, solved, calls, None)
            }
            Err(e) => result_from_parts(
                lead,
                names.clone(),
                lead_scores,
                None,
                ledger.calls_used(),
                Some(e.to_string()),
            ),
        }
    });
    Ok(results)
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub metrics: MetricsSummary,
    pub results_path: PathBuf,
    pub metrics_path: PathBuf,
    pub summary_csv_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
}

fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

fn task_label(cfg: &ExperimentConfig) -> String {
    cfg.task
        .properties
        .iter()
        .map(|p| p.name.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

/// Emit the result files for one evaluation: line-delimited JSON results,
/// a metrics JSON, and a one-row CSV summary.
pub fn write_result_files(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    results: &[OptimizationResult],
) -> Result<RunSummary, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    let metrics = summarize(results, &cfg.task.properties)
        .map_err(|_| ExperimentError::NoLeads)?;
    let results_path = out_dir.join("results.ndjson");
    write_ndjson(&results_path, results)?;
    let metrics_path = out_dir.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics).expect("serializable metrics") + "\n",
    )?;
    let summary_csv_path = out_dir.join("summary.csv");
    let mode = match cfg.task.mode {
        crate::env::TaskMode::Single => "single",
        crate::env::TaskMode::Multi => "multi",
    };
    let arm = match cfg.inference.arm {
        Arm::Policy => "policy",
        Arm::Ga => "ga",
    };
    let csv = format!(
        "task,mode,arm,seed,count,success_rate,avg_similarity,relative_improvement,mean_oracle_calls\n{},{},{},{},{},{},{},{},{}\n",
        task_label(cfg),
        mode,
        arm,
        cfg.seed,
        metrics.count,
        metrics.success_rate,
        metrics.avg_similarity,
        metrics.relative_improvement,
        metrics.mean_oracle_calls,
    );
    std::fs::write(&summary_csv_path, csv)?;
    Ok(RunSummary {
        metrics,
        results_path,
        metrics_path,
        summary_csv_path,
        checkpoint_path: None,
    })
}

/// Resolve the evaluation lead set: from file when configured, otherwise
/// generated disjointly from the training leads.
pub fn resolve_leads(
    cfg: &ExperimentConfig,
    library: &FragmentLibrary,
) -> Result<(Vec<String>, Vec<String>), ExperimentError> {
    let train_leads = if cfg.training.iterations > 0 {
        generate_leads(
            cfg,
            library,
            "train-leads",
            cfg.training.num_leads,
            &HashSet::new(),
        )?
    } else {
        Vec::new()
    };
    let eval_leads = match cfg.leads.source {
        LeadSource::File => {
            let path = cfg.leads.file.as_ref().expect("validated");
            load_leads(path)?
        }
        LeadSource::Generated => {
            let exclude: HashSet<String> = train_leads.iter().cloned().collect();
            generate_leads(
                cfg,
                library,
                "eval-leads",
                cfg.inference.num_eval_leads,
                &exclude,
            )?
        }
    };
    Ok((train_leads, eval_leads))
}

pub fn load_library(cfg: &ExperimentConfig) -> Result<FragmentLibrary, ExperimentError> {
    Ok(match &cfg.fragments_file {
        Some(path) => FragmentLibrary::from_file(path)?,
        None => FragmentLibrary::builtin(),
    })
}

/// Full experiment: (optionally) train, evaluate the configured arm on
/// held-out leads, and write all artifacts under `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    par::with_workers(workers, || {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(
            out_dir.join("run_config.json"),
            serde_json::to_string_pretty(cfg).expect("serializable config") + "\n",
        )?;
        let library = load_library(cfg)?;
        let (train_leads, eval_leads) = resolve_leads(cfg, &library)?;

        let params = if cfg.training.iterations > 0 {
            let artifacts = train(cfg, &library, &train_leads)?;
            std::fs::write(
                out_dir.join("train_diagnostics.ndjson"),
                diagnostics_jsonl(&artifacts.diagnostics),
            )?;
            artifacts.params
        } else {
            // ablation arm: no training, reference policy as-is
            let mut p = PolicyParams::for_library(&library);
            p.tau = cfg.training.sampling_temperature;
            p.beta = cfg.training.pgpo.beta;
            p
        };
        let checkpoint_path = out_dir.join("checkpoint.json");
        save_checkpoint(&params, &checkpoint_path)?;

        let arm = match cfg.inference.arm {
            Arm::Policy => EvalArm::Policy(&params),
            Arm::Ga => EvalArm::Ga,
        };
        let results = evaluate(&arm, &eval_leads, cfg, &library, "eval")?;
        let mut summary = write_result_files(out_dir, cfg, &results)?;
        summary.checkpoint_path = Some(checkpoint_path);
        Ok(summary)
    })
}

/// `optimize` entry point: evaluate an existing checkpoint (or the
/// untrained policy, or the GA baseline) on a leads file. With `run_logs`
/// set, per-lead evolution logs are written under `out_dir/run_logs/`.
pub fn optimize_leads(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    leads_path: &Path,
    out_dir: &Path,
    workers: Option<usize>,
    run_logs: bool,
) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    par::with_workers(workers, || {
        std::fs::create_dir_all(out_dir)?;
        let library = load_library(cfg)?;
        let leads = load_leads(leads_path)?;
        let params = match checkpoint {
            Some(path) => load_checkpoint(path)?,
            None => {
                let mut p = PolicyParams::for_library(&library);
                p.tau = cfg.training.sampling_temperature;
                p.beta = cfg.training.pgpo.beta;
                p
            }
        };
        let arm = match cfg.inference.arm {
            Arm::Policy => EvalArm::Policy(&params),
            Arm::Ga => EvalArm::Ga,
        };
        let log_dir = run_logs.then(|| out_dir.join("run_logs"));
        let results =
            evaluate_with_logs(&arm, &leads, cfg, &library, "eval", log_dir.as_deref())?;
        write_result_files(out_dir, cfg, &results)
    })
}

/// Read results back from a results.ndjson file.
pub fn load_results(path: &Path) -> Result<Vec<OptimizationResult>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let r: OptimizationResult =
            serde_json::from_str(line).map_err(crate::config::ConfigError::Schema)?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(ExperimentError::NoLeads);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::PropertySpec;

    /// A deliberately tiny configuration so orchestration tests run fast.
    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::example();
        cfg.seed = 7;
        cfg.task = EnvConfig::single(PropertySpec::builtin("heavyatoms").unwrap());
        cfg.task.properties[0].single_threshold = 12.0;
        cfg.task.horizon = 3;
        cfg.training.iterations = 2;
        cfg.training.num_leads = 4;
        cfg.training.rollouts_per_lead = 4;
        cfg.training.pgpo.minibatch_size = 8;
        cfg.training.pgpo.learning_rate = 0.01;
        cfg.inference.num_eval_leads = 4;
        cfg.inference.evolve.budget = 30;
        cfg.inference.evolve.generations = 3;
        cfg.inference.evolve.rollouts_per_parent = 4;
        cfg.inference.evolve.horizon = 3;
        cfg.leads.property_band = None;
        cfg.leads.min_heavy_atoms = 3;
        cfg.leads.max_heavy_atoms = 10;
        cfg
    }

    #[test]
    fn lead_generation_is_deterministic_and_respects_constraints() {
        let cfg = tiny_config();
        let library = FragmentLibrary::builtin();
        let a = generate_leads(&cfg, &library, "train-leads", 8, &HashSet::new()).unwrap();
        let b = generate_leads(&cfg, &library, "train-leads", 8, &HashSet::new()).unwrap();
        assert_eq!(a, b);
        let unique: HashSet<&String> = a.iter().collect();
        assert_eq!(unique.len(), 8);
        for lead in &a {
            let m = parse_smiles(lead).unwrap();
            assert!((3..=10).contains(&m.heavy_atom_count()));
        }
        // a different stream yields different leads
        let c = generate_leads(&cfg, &library, "eval-leads", 8, &HashSet::new()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn train_and_eval_leads_are_disjoint() {
        let cfg = tiny_config();
        let library = FragmentLibrary::builtin();
        let (train_leads, eval_leads) = resolve_leads(&cfg, &library).unwrap();
        let train_set: HashSet<&String> = train_leads.iter().collect();
        assert!(eval_leads.iter().all(|l| !train_set.contains(l)));
        assert_eq!(eval_leads.len(), cfg.inference.num_eval_leads);
    }

    #[test]
    fn training_produces_diagnostics_and_finite_params() {
        let cfg = tiny_config();
        let library = FragmentLibrary::builtin();
        let leads =
            generate_leads(&cfg, &library, "train-leads", cfg.training.num_leads, &HashSet::new())
                .unwrap();
        let artifacts = train(&cfg, &library, &leads).unwrap();
        assert_eq!(artifacts.diagnostics.len(), cfg.training.iterations);
        assert!(artifacts.params.theta.iter().all(|w| w.is_finite()));
        for diag in &artifacts.diagnostics {
            assert!(diag.retention_ratio > 0.0 && diag.retention_ratio <= 1.0);
        }
    }

    #[test]
    fn run_experiment_writes_consistent_artifacts() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), Some(2)).unwrap();
        assert!(summary.results_path.exists());
        assert!(summary.metrics_path.exists());
        assert!(summary.summary_csv_path.exists());
        assert!(summary.checkpoint_path.as_ref().unwrap().exists());

        // reloaded results reproduce the written metrics exactly
        let results = load_results(&summary.results_path).unwrap();
        let recomputed = summarize(&results, &cfg.task.properties).unwrap();
        let stored: crate::metrics::MetricsSummary = serde_json::from_str(
            &std::fs::read_to_string(&summary.metrics_path).unwrap(),
        )
        .unwrap();
        assert_eq!(recomputed, stored);
        for r in &results {
            assert!(r.oracle_calls_used <= cfg.inference.evolve.budget);
        }
    }

    #[test]
    fn same_seed_same_workers_byte_identical() {
        let cfg = tiny_config();
        let run = |workers| {
            let dir = tempfile::tempdir().unwrap();
            run_experiment(&cfg, dir.path(), Some(workers)).unwrap();
            (
                std::fs::read(dir.path().join("results.ndjson")).unwrap(),
                std::fs::read(dir.path().join("metrics.json")).unwrap(),
                std::fs::read(dir.path().join("checkpoint.json")).unwrap(),
            )
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.0, b.0, "results differ across worker counts");
        assert_eq!(a.1, b.1, "metrics differ across worker counts");
        assert_eq!(a.2, b.2, "checkpoints differ across worker counts");
    }

    #[test]
    fn zero_iteration_config_runs_untrained_policy() {
        let mut cfg = tiny_config();
        cfg.training.iterations = 0;
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), Some(2)).unwrap();
        assert_eq!(summary.metrics.count, cfg.inference.num_eval_leads);
    }

    #[test]
    fn ga_arm_runs_from_config_alone() {
        let mut cfg = tiny_config();
        cfg.training.iterations = 0;
        cfg.inference.arm = Arm::Ga;
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&cfg, dir.path(), Some(2)).unwrap();
        assert_eq!(summary.metrics.count, cfg.inference.num_eval_leads);
    }
}
