//! Built-in invariant checks, printing one line per suite.

use anyhow::{anyhow, Result};
use molopt::chemgraph::{canonicalize, parse_smiles};
use molopt::env::{classify_proposal, reward_for, EnvConfig, RewardCase, FP_BITS, FP_RADIUS};
use molopt::evolve::{temperature_at, EvolveConfig};
use molopt::filter;
use molopt::oracle::{OracleLedger, OracleSet, PropertySpec};
use molopt::pgpo;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool) {
        if ok {
            println!("ok   - {name}");
        } else {
            println!("FAIL - {name}");
            self.failures += 1;
        }
    }
}

pub fn run() -> Result<()> {
    let mut report = Report { failures: 0 };

    report.check("reward table rows", reward_table_rows());
    report.check("lambda weights and preference loss", lambda_checks());
    report.check("gae backward pass equals double sum", gae_equivalence());
    report.check("temperature schedule", temperature_schedule());
    report.check("oracle ledger dedup and budget", ledger_discipline());
    report.check("filter retention on distinct batches", filter_retention());

    if report.failures == 0 {
        println!("all checks passed");
        Ok(())
    } else {
        Err(anyhow!("{} selftest check(s) failed", report.failures))
    }
}

fn reward_table_rows() -> bool {
    let mut prop = PropertySpec::builtin("heavyatoms").expect("builtin");
    prop.single_threshold = 99.0;
    let cfg = EnvConfig::single(prop);
    let oracle = OracleSet::builtin_only();
    let ledger = OracleLedger::unmetered();
    let lead = parse_smiles("CCCCO").expect("lead");
    let lead_fp = lead.fingerprint(FP_RADIUS, FP_BITS);
    let canonical = canonicalize(&lead);
    let scores = ledger
        .query(&oracle, &cfg.properties, &lead, &canonical)
        .expect("score");
    let weighted = cfg.weighted_score(&scores);

    let classify = |smiles: &str| {
        classify_proposal(smiles, &canonical, &lead_fp, &cfg, &oracle, &ledger).expect("classify")
    };
    let cases = [
        ("C(", RewardCase::Invalid, -0.5),
        ("OCCCC", RewardCase::NoModification, -0.3),
        ("CCCCCO", RewardCase::Improvement, 5.0),
        ("CCCO", RewardCase::Degradation, -1.0),
    ];
    cases.iter().all(|(smiles, case, reward)| {
        let verdict = classify(smiles);
        let (got_case, got_reward) = reward_for(&verdict, weighted, &cfg);
        got_case == *case && (got_reward - reward).abs() < 1e-12
    })
}

fn lambda_checks() -> bool {
    let weight = pgpo::lambda_weight(0.0, 1.0, 2, 1);
    let expected = (1.0 / 3f64.ln() - 1.0 / 2f64.ln()).abs();
    (weight - expected).abs() < 1e-15
        && (weight - 0.5325).abs() < 1e-4
        && pgpo::lambda_weight(0.5, 0.5, 1, 2) == 0.0
        && (pgpo::pair_loss(0.0, 0.0) - 2f64.ln()).abs() < 1e-12
        && pgpo::pair_loss(0.0, 40.0) < 1e-6
}

fn gae_equivalence() -> bool {
    let rewards = [1.0, 1.0, 1.0];
    let values = [0.0, 0.0, 0.0, 0.0];
    let Ok((adv, _)) = pgpo::compute_gae(&rewards, &values, 0.99, 0.95) else {
        return false;
    };
    let brute: Vec<f64> = (0..3)
        .map(|t| {
            (t..3)
                .map(|k| (0.99f64 * 0.95).powi((k - t) as i32) * rewards[k])
                .sum()
        })
        .collect();
    adv.iter().zip(&brute).all(|(a, b)| (a - b).abs() < 1e-12)
}

fn temperature_schedule() -> bool {
    let cfg = EvolveConfig::default();
    temperature_at(1, &cfg) == 0.9 && temperature_at(5, &cfg) == 1.3 && temperature_at(12, &cfg) == 2.0
}

fn ledger_discipline() -> bool {
    let ledger = OracleLedger::new(1);
    let oracle = OracleSet::builtin_only();
    let props = vec![PropertySpec::builtin("heavyatoms").expect("builtin")];
    let a = parse_smiles("OCC").expect("a");
    let b = parse_smiles("CCO").expect("b");
    let ca = canonicalize(&a);
    let cb = canonicalize(&b);
    let first = ledger.query(&oracle, &props, &a, &ca).is_ok();
    let second = ledger.query(&oracle, &props, &b, &cb).is_ok();
    first && second && ledger.calls_used() == 1
}

fn filter_retention() -> bool {
    use molopt::pgpo::{TrajectoryBatch, TrajectoryRecord, TurnRecord};
    let mut trajectories = Vec::new();
    let mut id = 0;
    for g in 0..8 {
        for t in 0..16 {
            trajectories.push(TrajectoryRecord {
                id,
                lead_id: g,
                turns: vec![TurnRecord {
                    features: vec![1.0],
                    rows: vec![0],
                    chosen: 0,
                    old_logp: 0.0,
                    tau: 1.0,
                    reward: (g as f64 + 1.0) * t as f64 + 0.01 * g as f64,
                }],
            });
            id += 1;
        }
    }
    let batch = TrajectoryBatch { trajectories };
    match filter::filter_batch(&batch, 0.5, 0.75) {
        Ok(filtered) => filter::retention_ratio(batch.len(), filtered.len()) == 0.375,
        Err(_) => false,
    }
}
