//! Throughput benches for the data-parallel inner loops.
//!
//! The same benchmarks run in both execution modes; bench IDs carry the
//! mode so reports can be compared side by side:
//!
//! ```text
//! cargo bench -p molopt                          # parallel (rayon)
//! cargo bench -p molopt --no-default-features    # sequential fallback
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use molopt::chemgraph::{parse_smiles, tanimoto};
use molopt::env::{EnvConfig, Episode};
use molopt::oracle::{OracleLedger, OracleSet, PropertySpec};
use molopt::par;
use molopt::policy::{EditPolicy, FragmentLibrary};
use std::hint::black_box;

const MODE: &str = if cfg!(feature = "parallel") {
    "parallel"
} else {
    "sequential"
};

fn bench_molecules() -> Vec<String> {
    let library = FragmentLibrary::builtin();
    let mut cfg = molopt::config::ExperimentConfig::example();
    cfg.seed = 99;
    cfg.leads.property_band = None;
    cfg.leads.min_heavy_atoms = 5;
    cfg.leads.max_heavy_atoms = 18;
    molopt::experiment::generate_leads(&cfg, &library, "bench-leads", 256, &Default::default())
        .expect("bench leads")
}

fn fingerprint_similarity(c: &mut Criterion) {
    let smiles = bench_molecules();
    let probe = parse_smiles("CC(=O)Nc1ccccc1").unwrap().fingerprint(2, 2048);
    c.bench_with_input(
        BenchmarkId::new("fingerprint_tanimoto_batch", MODE),
        &smiles,
        |b, smiles| {
            b.iter(|| {
                let sims = par::map_slice(smiles, |s| {
                    let fp = parse_smiles(s).unwrap().fingerprint(2, 2048);
                    tanimoto(&probe, &fp).unwrap()
                });
                black_box(sims)
            })
        },
    );
}

fn rollout_batch(c: &mut Criterion) {
    let leads = bench_molecules()[..64].to_vec();
    let mut prop = PropertySpec::builtin("logp_proxy").unwrap();
    prop.weight = 0.25;
    let env_cfg = EnvConfig::single(prop);
    let policy = EditPolicy::new(FragmentLibrary::builtin());
    let oracle = OracleSet::builtin_only();
    c.bench_with_input(
        BenchmarkId::new("rollout_batch_64x5", MODE),
        &leads,
        |b, leads| {
            b.iter(|| {
                let ledger = OracleLedger::unmetered();
                let rewards = par::map_indexed(leads.len(), |i| {
                    let mut rng = molopt::rng::stream_rng(7, "bench-rollout", &[i as u64]);
                    let mut ep = Episode::reset(&leads[i], &env_cfg, &oracle, &ledger).unwrap();
                    let mut total = 0.0;
                    while !ep.done() {
                        let action = policy.act(&ep, None, &mut rng);
                        total += ep.step(&action.text, &oracle, &ledger).unwrap().reward;
                    }
                    total
                });
                black_box(rewards)
            })
        },
    );
}

fn canonicalization(c: &mut Criterion) {
    let smiles = bench_molecules();
    c.bench_with_input(
        BenchmarkId::new("canonicalize_batch", MODE),
        &smiles,
        |b, smiles| {
            b.iter(|| {
                let canon = par::map_slice(smiles, |s| {
                    molopt::chemgraph::canonicalize(&parse_smiles(s).unwrap())
                });
                black_box(canon)
            })
        },
    );
}

criterion_group!(benches, fingerprint_similarity, rollout_batch, canonicalization);
criterion_main!(benches);
