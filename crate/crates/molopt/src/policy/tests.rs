use super::*;
use crate::chemgraph::{canonicalize, parse_smiles};
use crate::env::{EnvConfig, Episode};
use crate::oracle::{OracleLedger, OracleSet, PropertySpec};
use rand::Rng;

fn episode(lead: &str) -> Episode {
    let cfg = EnvConfig::single(PropertySpec::builtin("heavyatoms").unwrap());
    let oracle = OracleSet::builtin_only();
    let ledger = OracleLedger::unmetered();
    Episode::reset(lead, &cfg, &oracle, &ledger).unwrap()
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    crate::rng::stream_rng(seed, "policy-test", &[])
}

fn random_params(num_actions: usize, num_features: usize, seed: u64) -> PolicyParams {
    let mut p = PolicyParams::zeros(num_actions, num_features);
    let mut r = rng(seed);
    for w in &mut p.theta {
        *w = r.random_range(-1.0..1.0);
    }
    p
}

#[test]
fn featurize_headroom_on_fresh_state() {
    let ep = episode("CCO");
    let f = featurize(&ep);
    assert_eq!(f.len(), FEATURE_LEN);
    assert!((f[14] - (1.0 - 0.4)).abs() < 1e-12); // similarity headroom
}

#[test]
fn featurize_identical_for_isomorphic_states() {
    let a = featurize(&episode("OCC"));
    let b = featurize(&episode("CCO"));
    assert_eq!(a, b);
}

#[test]
fn featurize_length_constant_across_random_states() {
    let mut r = rng(5);
    let alphabet: Vec<char> = "CCCCNOSFc1()=".chars().collect();
    let mut seen = 0;
    while seen < 50 {
        let len = r.random_range(1..12);
        let s: String = (0..len)
            .map(|_| alphabet[r.random_range(0..alphabet.len())])
            .collect();
        if parse_smiles(&s).is_ok() {
            assert_eq!(featurize(&episode(&s)).len(), FEATURE_LEN);
            seen += 1;
        }
    }
}

#[test]
fn zero_weights_give_uniform_distribution() {
    let params = PolicyParams::zeros(6, 4);
    let features = vec![0.3, -0.2, 1.0, 0.5];
    let rows = vec![0, 1, 2, 3, 4];
    let logp = log_softmax(&action_logits(&params, &features, &rows));
    for lp in &logp {
        assert!((lp - (-(5f64).ln())).abs() < 1e-12);
    }
}

#[test]
fn temperature_scales_logits_but_keeps_argmax() {
    let params = random_params(5, 4, 11);
    let features = vec![0.4, 1.2, -0.7, 0.1];
    let rows = vec![0, 2, 3, 4];
    let l1 = action_logits_at(&params, &features, &rows, 1.0);
    let l2 = action_logits_at(&params, &features, &rows, 2.0);
    for (a, b) in l1.iter().zip(&l2) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    };
    assert_eq!(argmax(&l1), argmax(&l2));
}

#[test]
fn boosting_a_row_increases_its_probability() {
    let mut params = random_params(4, 3, 13);
    let features = vec![0.5, 0.25, 1.0];
    let rows = vec![0, 1, 2, 3];
    let p_before = log_softmax(&action_logits(&params, &features, &rows))[1].exp();
    for k in 0..params.num_features {
        params.theta[params.num_features + k] += 1.0;
    }
    let p_after = log_softmax(&action_logits(&params, &features, &rows))[1].exp();
    assert!(p_after > p_before);
}

#[test]
fn probabilities_sum_to_one_and_logps_finite() {
    for seed in 0..20 {
        let params = random_params(7, 5, seed);
        let features: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) / 3.0).collect();
        let rows = vec![0, 1, 2, 3, 4, 5, 6];
        let logp = log_softmax(&action_logits(&params, &features, &rows));
        let total: f64 = logp.iter().map(|lp| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(logp.iter().all(|lp| lp.is_finite() && *lp <= 0.0));
    }
}

#[test]
fn sampling_is_reproducible_for_fixed_seed() {
    let params = random_params(6, 4, 17);
    let features = vec![1.0, 0.2, -0.4, 0.8];
    let rows = vec![0, 1, 2, 3, 4, 5];
    let draw = |seed| {
        let mut r = rng(seed);
        (0..32)
            .map(|_| sample_action(&params, &features, &rows, 0.9, &mut r).0)
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(99), draw(99));
    assert_ne!(draw(99), draw(100));
}

#[test]
fn uniform_policy_reports_exact_logprob() {
    let params = PolicyParams::zeros(4, 3);
    let features = vec![0.5, 0.5, 0.5];
    let rows = vec![0, 1, 2, 3];
    let mut r = rng(7);
    let (_, logp) = sample_action(&params, &features, &rows, 1.0, &mut r);
    assert!((logp - (-(4f64).ln())).abs() < 1e-12);
}

#[test]
fn sample_frequencies_match_probabilities() {
    let params = random_params(5, 3, 23);
    let features = vec![0.9, -0.3, 0.6];
    let rows = vec![0, 1, 2, 3, 4];
    let probs: Vec<f64> = log_softmax(&action_logits(&params, &features, &rows))
        .iter()
        .map(|lp| lp.exp())
        .collect();
    let n = 100_000usize;
    let mut counts = vec![0usize; rows.len()];
    let mut r = rng(29);
    for _ in 0..n {
        let (i, _) = sample_action(&params, &features, &rows, params.tau, &mut r);
        counts[i] += 1;
    }
    for (i, &p) in probs.iter().enumerate() {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let observed = counts[i] as f64 / n as f64;
        assert!(
            (observed - p).abs() <= 3.0 * sigma + 1e-9,
            "action {i}: observed {observed}, expected {p}, sigma {sigma}"
        );
    }
}

#[test]
fn grad_closed_form_two_actions() {
    let params = PolicyParams::zeros(2, 3);
    let features = vec![0.5, -1.0, 2.0];
    let rows = vec![0, 1];
    let tau = 1.0;
    let grad = grad_logprob(&params, &features, &rows, 0, tau);
    for k in 0..3 {
        assert!((grad[k] - 0.5 * features[k]).abs() < 1e-12);
        assert!((grad[3 + k] + 0.5 * features[k]).abs() < 1e-12);
    }
}

#[test]
fn probability_weighted_grads_sum_to_zero() {
    let params = random_params(4, 3, 31);
    let features = vec![1.0, 0.4, -0.2];
    let rows = vec![0, 1, 2, 3];
    let probs: Vec<f64> = log_softmax(&action_logits(&params, &features, &rows))
        .iter()
        .map(|lp| lp.exp())
        .collect();
    let mut acc = vec![0.0; params.theta.len()];
    for (i, &p) in probs.iter().enumerate() {
        let g = grad_logprob(&params, &features, &rows, i, params.tau);
        for (a, b) in acc.iter_mut().zip(&g) {
            *a += p * b;
        }
    }
    assert!(acc.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn grad_matches_finite_differences_across_random_draws() {
    let h = 1e-6;
    for seed in 0..100 {
        let params = random_params(3, 4, 1000 + seed);
        let mut r = rng(2000 + seed);
        let features: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let rows = vec![0, 1, 2, 1]; // includes a shared row
        let chosen = (seed % 4) as usize;
        let tau = 0.9;
        let grad = grad_logprob(&params, &features, &rows, chosen, tau);
        for k in 0..params.theta.len() {
            let mut plus = params.clone();
            plus.theta[k] += h;
            let mut minus = params.clone();
            minus.theta[k] -= h;
            let fd = (logprob_of(&plus, &features, &rows, chosen, tau)
                - logprob_of(&minus, &features, &rows, chosen, tau))
                / (2.0 * h);
            let denom = grad[k].abs().max(fd.abs()).max(1.0);
            assert!(
                (grad[k] - fd).abs() / denom < 1e-5,
                "seed {seed} entry {k}: analytic {} vs fd {fd}",
                grad[k]
            );
        }
    }
}

#[test]
fn apply_methyl_append_builds_propanol() {
    let library = FragmentLibrary::builtin();
    let m = parse_smiles("CCO").unwrap();
    // terminal carbon of CCO is atom 0
    let edited = apply_edit(
        &m,
        &EditAction::AppendFragment {
            atom: 0,
            fragment: 0,
        },
        &library,
    )
    .unwrap();
    assert_eq!(
        edited.canonical_smiles(),
        canonicalize(&parse_smiles("CCCO").unwrap())
    );
}

#[test]
fn delete_only_atom_is_illegal() {
    let library = FragmentLibrary::builtin();
    let m = parse_smiles("C").unwrap();
    assert!(matches!(
        apply_edit(&m, &EditAction::DeleteTerminal { atom: 0 }, &library),
        Err(PolicyError::IllegalEdit(_))
    ));
}

#[test]
fn replace_carbon_with_nitrogen() {
    let library = FragmentLibrary::builtin();
    let m = parse_smiles("CC").unwrap();
    let edited = apply_edit(
        &m,
        &EditAction::ReplaceAtom {
            atom: 1,
            element: crate::chemgraph::Element::N,
        },
        &library,
    )
    .unwrap();
    assert_eq!(
        edited.canonical_smiles(),
        canonicalize(&parse_smiles("CN").unwrap())
    );
}

#[test]
fn candidate_sets_are_capped_and_end_with_done() {
    let library = FragmentLibrary::builtin();
    for s in ["C", "CCO", "CC(C)CC(N)C(=O)O", "OCC1OC(O)C(O)C(O)C1O"] {
        let m = parse_smiles(s).unwrap();
        let edits = enumerate_legal_edits(&m, &library);
        assert!(edits.len() <= MAX_CANDIDATES);
        assert_eq!(*edits.last().unwrap(), EditAction::Done);
    }
}

#[test]
fn edit_outputs_always_revalidate() {
    let library = FragmentLibrary::builtin();
    let mut r = rng(41);
    let mut current = parse_smiles("CCO").unwrap();
    let mut round_trips = 0;
    while round_trips < 20 {
        let edits = enumerate_legal_edits(&current, &library);
        let pick = r.random_range(0..edits.len());
        if edits[pick] == EditAction::Done {
            continue;
        }
        if let Ok(next) = apply_edit(&current, &edits[pick], &library) {
            let written = next.canonical_smiles();
            let back = parse_smiles(&written).expect("edit output must round-trip");
            assert_eq!(back.canonical_smiles(), written);
            if next.heavy_atom_count() <= 24 {
                current = next;
            }
            round_trips += 1;
        }
    }
}

#[test]
fn snapshot_is_frozen_and_psi_starts_at_zero() {
    let library = FragmentLibrary::builtin();
    let mut policy = EditPolicy::new(library);
    let mut r = rng(43);
    for w in &mut policy.params.theta {
        *w = r.random_range(-0.5..0.5);
    }
    let reference = snapshot_reference(&policy.params);

    let features = vec![1.0; FEATURE_LEN];
    let rows = vec![0, 1, 2, 3];
    for chosen in 0..rows.len() {
        let live = logprob_of(&policy.params, &features, &rows, chosen, policy.params.tau);
        let frozen = logprob_of(&reference, &features, &rows, chosen, reference.tau);
        assert_eq!(live, frozen); // psi = beta * (live - frozen) = 0
    }

    let before = logprob_of(&reference, &features, &rows, 0, reference.tau);
    policy.params.theta[0] += 1.0;
    let after = logprob_of(&reference, &features, &rows, 0, reference.tau);
    assert_eq!(before, after, "snapshot must not track live params");

    // psi recomputed from raw logits
    let beta = policy.params.beta;
    let live = logprob_of(&policy.params, &features, &rows, 0, policy.params.tau);
    let psi = beta * (live - before);
    let manual_live = log_softmax(&action_logits(&policy.params, &features, &rows))[0];
    let manual_ref = log_softmax(&action_logits(&reference, &features, &rows))[0];
    assert!((psi - beta * (manual_live - manual_ref)).abs() < 1e-12);
}

#[test]
fn act_emits_protocol_text() {
    let library = FragmentLibrary::builtin();
    let policy = EditPolicy::new(library);
    let ep = episode("CCO");
    let mut r = rng(47);
    for _ in 0..10 {
        let rec = policy.act(&ep, None, &mut r);
        if rec.edit == EditAction::Done {
            assert!(crate::env::contains_done(&rec.text));
        } else {
            let smiles = crate::env::extract_answer(&rec.text).unwrap();
            assert!(parse_smiles(&smiles).is_ok());
        }
        assert!(rec.logp <= 0.0 && rec.logp.is_finite());
    }
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let params = random_params(5, 4, 51);
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(params, loaded);
}

#[test]
fn text_adapter_produces_parseable_actions() {
    let library = FragmentLibrary::builtin();
    let mut adapter = EditPolicyText {
        policy: EditPolicy::new(library),
        rng: rng(53),
    };
    let ep = episode("CCO");
    let obs = ep.observation();
    let reply = adapter.respond(&obs);
    assert!(
        crate::env::contains_done(&reply) || crate::env::extract_answer(&reply).is_ok(),
        "adapter reply must follow the protocol: {reply}"
    );
}
