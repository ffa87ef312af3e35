use super::*;

fn parse(s: &str) -> MolecularGraph {
    parse_smiles(s).unwrap_or_else(|e| panic!("parse {s}: {e}"))
}

fn canon(s: &str) -> String {
    canonicalize(&parse(s))
}

/// Rebuild a molecule with its atoms shuffled by `perm` (new index of old i).
fn permute(m: &MolecularGraph, perm: &[usize]) -> MolecularGraph {
    let (atoms, bonds) = m.raw_parts();
    let mut new_atoms = vec![atoms[0].clone(); atoms.len()];
    for (old, atom) in atoms.into_iter().enumerate() {
        new_atoms[perm[old]] = atom;
    }
    let new_bonds = bonds
        .into_iter()
        .map(|b| Bond {
            a: perm[b.a],
            b: perm[b.b],
            ..b
        })
        .collect();
    MolecularGraph::from_parts(new_atoms, new_bonds).expect("permuted rebuild")
}

#[test]
fn single_carbon() {
    let m = parse("C");
    assert_eq!(m.heavy_atom_count(), 1);
    assert_eq!(m.atoms()[0].hydrogens, 4);
    assert_eq!(m.ring_count(), 0);
}

#[test]
fn unbalanced_paren_is_rejected() {
    assert!(matches!(
        parse_smiles("C("),
        Err(ParseError::UnbalancedBracket(_))
    ));
    assert!(matches!(
        parse_smiles("C)"),
        Err(ParseError::UnbalancedBracket(_))
    ));
    assert!(matches!(
        parse_smiles("[CH"),
        Err(ParseError::UnbalancedBracket(_))
    ));
}

#[test]
fn benzene_counts_match_reference_toolkit() {
    // Frozen from a one-off cross-check with an established toolkit:
    // benzene has 6 aromatic carbons, 6 ring bonds, one ring.
    let m = parse("c1ccccc1");
    assert_eq!(m.heavy_atom_count(), 6);
    assert_eq!(m.bonds().len(), 6);
    assert_eq!(m.ring_count(), 1);
    assert!(m.atoms().iter().all(|a| a.aromatic && a.in_ring));
    assert!(m.atoms().iter().all(|a| a.hydrogens == 1));
}

#[test]
fn unclosed_ring_is_rejected() {
    assert!(matches!(
        parse_smiles("C1CC"),
        Err(ParseError::UnclosedRing(1))
    ));
}

#[test]
fn bad_valence_is_rejected() {
    assert!(matches!(
        parse_smiles("C(C)(C)(C)(C)C"),
        Err(ParseError::BadValence { .. })
    ));
    assert!(matches!(
        parse_smiles("O(C)(C)C"),
        Err(ParseError::BadValence { .. })
    ));
}

#[test]
fn unsupported_element_is_rejected() {
    assert!(matches!(
        parse_smiles("[Se]"),
        Err(ParseError::UnsupportedElement(_))
    ));
    assert!(matches!(
        parse_smiles("CU"),
        Err(ParseError::UnsupportedElement(_))
    ));
}

#[test]
fn multi_fragment_is_rejected() {
    assert!(matches!(parse_smiles("C.C"), Err(ParseError::MultiFragment)));
}

#[test]
fn canonical_is_order_independent() {
    assert_eq!(canon("OCC"), canon("CCO"));
    assert_eq!(canon("C(O)C"), canon("CCO"));
}

#[test]
fn canonical_single_atom() {
    assert_eq!(canon("C"), "C");
    assert_eq!(canon("N"), "N");
}

#[test]
fn kekulized_and_aromatic_benzene_unify() {
    assert_eq!(canon("C1=CC=CC=C1"), canon("c1ccccc1"));
}

#[test]
fn kekulized_heteroaromatics_unify() {
    assert_eq!(canon("C1=CC=CN1"), canon("c1cc[nH]c1")); // pyrrole
    assert_eq!(canon("C1=CC=CC=N1"), canon("c1ccncc1")); // pyridine
    assert_eq!(canon("C1=CC=CS1"), canon("c1ccsc1")); // thiophene
    assert_eq!(canon("C1=CC=CO1"), canon("c1ccoc1")); // furan
}

#[test]
fn fused_aromatics_unify() {
    assert_eq!(canon("C1=CC=C2C=CC=CC2=C1"), canon("c1ccc2ccccc2c1"));
}

#[test]
fn cyclohexane_is_not_aromatic() {
    let m = parse("C1CCCCC1");
    assert!(m.atoms().iter().all(|a| !a.aromatic));
    assert!(m.atoms().iter().all(|a| a.in_ring));
}

const ROUND_TRIP_SET: &[&str] = &[
    "C",
    "CCO",
    "CC(C)C",
    "CC(=O)O",
    "C#N",
    "c1ccccc1",
    "c1ccncc1",
    "c1cc[nH]c1",
    "c1ccsc1",
    "c1ccc2ccccc2c1",
    "CC(=O)Nc1ccccc1",
    "CS(=O)(=O)N",
    "O=C(O)c1ccccc1O",
    "ClC(Br)I",
    "C1CCCCC1",
    "C1CCNCC1",
    "[NH4+]",
    "[O-]C(=O)C",
    "C[C@H](N)C(=O)O",
    "F/C=C/F",
    "OCC1OC(O)C(O)C(O)C1O",
    "CN1CCCC1",
    "c1ccc(-c2ccccc2)cc1",
];

#[test]
fn canonicalization_is_idempotent() {
    for s in ROUND_TRIP_SET {
        let c1 = canon(s);
        let c2 = canon(&c1);
        assert_eq!(c1, c2, "not a fixed point for {s}");
    }
}

#[test]
fn canonical_invariant_under_permutation() {
    for s in ROUND_TRIP_SET {
        let m = parse(s);
        let n = m.heavy_atom_count();
        let c = m.canonical_smiles();
        // a handful of deterministic shuffles
        for shift in 1..n.min(5) {
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let p = permute(&m, &perm);
            assert_eq!(p.canonical_smiles(), c, "permutation changed canon of {s}");
        }
    }
}

#[test]
fn write_round_trips() {
    for s in ROUND_TRIP_SET {
        let m = parse(s);
        let written = write_smiles(&m);
        let back = parse(&written);
        assert_eq!(back.heavy_atom_count(), m.heavy_atom_count(), "{s}");
        assert_eq!(back.bonds().len(), m.bonds().len(), "{s}");
        assert_eq!(back.canonical_smiles(), m.canonical_smiles(), "{s}");
    }
}

#[test]
fn write_single_nitrogen() {
    assert_eq!(write_smiles(&parse("N")), "N");
}

#[test]
fn ethanol_round_trip_shape() {
    let m = parse("CCO");
    let back = parse(&write_smiles(&m));
    assert_eq!(back.count_element(Element::C), 2);
    assert_eq!(back.count_element(Element::O), 1);
    assert_eq!(back.bonds().len(), 2);
}

#[test]
fn fingerprint_radius0_single_atom() {
    let fp = parse("C").fingerprint(0, 2048);
    assert_eq!(fp.popcount(), 1);
}

#[test]
fn fingerprint_invariant_under_atom_order() {
    let a = parse("CCO").fingerprint(2, 2048);
    let b = parse("OCC").fingerprint(2, 2048);
    assert_eq!(a, b);
    let big = parse("CC(=O)Nc1ccccc1");
    let n = big.heavy_atom_count();
    let perm: Vec<usize> = (0..n).map(|i| (i + 3) % n).collect();
    assert_eq!(
        big.fingerprint(2, 2048),
        permute(&big, &perm).fingerprint(2, 2048)
    );
}

#[test]
fn fingerprint_distinguishes_cco_from_ccn() {
    let a = parse("CCO").fingerprint(2, 2048);
    let b = parse("CCN").fingerprint(2, 2048);
    assert_ne!(a, b);
}

#[test]
fn tanimoto_identity_and_sets() {
    let f = parse("CCO").fingerprint(2, 2048);
    assert_eq!(tanimoto(&f, &f).unwrap(), 1.0);

    let a = Fingerprint::from_bits(2048, &[1, 2]);
    let b = Fingerprint::from_bits(2048, &[2, 3]);
    assert!((tanimoto(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn tanimoto_methane_vs_ethanol_strictly_between() {
    let a = parse("C").fingerprint(2, 2048);
    let b = parse("CCO").fingerprint(2, 2048);
    let sim = tanimoto(&a, &b).unwrap();
    assert!(sim > 0.0 && sim < 1.0, "sim = {sim}");
}

#[test]
fn tanimoto_length_mismatch() {
    let a = parse("C").fingerprint(2, 1024);
    let b = parse("C").fingerprint(2, 2048);
    assert!(matches!(
        tanimoto(&a, &b),
        Err(FingerprintError::LengthMismatch(1024, 2048))
    ));
}

#[test]
fn tanimoto_symmetric_and_bounded() {
    for (x, y) in [("CCO", "CCN"), ("c1ccccc1", "C1CCCCC1"), ("C", "CC")] {
        let a = parse(x).fingerprint(2, 2048);
        let b = parse(y).fingerprint(2, 2048);
        let ab = tanimoto(&a, &b).unwrap();
        let ba = tanimoto(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!((0.0..=1.0).contains(&ab));
        if a != b {
            assert!(ab < 1.0);
        }
    }
}

#[test]
fn fuzz_parser_never_panics() {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(17, "parser-fuzz", &[]);
    let alphabet: Vec<char> =
        "CNOPSFIBclnrops123456789()[]=#+-@H%/\\.".chars().collect();
    for _ in 0..5000 {
        let len = rng.random_range(0..24);
        let s: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let _ = parse_smiles(&s); // must return, never panic
    }
    for _ in 0..2000 {
        let len = rng.random_range(0..16);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random::<u8>()).collect();
        if let Ok(s) = std::str::from_utf8(&bytes) {
            let _ = parse_smiles(s);
        }
    }
}

#[test]
fn fuzz_accepted_molecules_satisfy_invariants() {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(18, "parser-fuzz-ok", &[]);
    let alphabet: Vec<char> = "CCCCNOSFc1()=#".chars().collect();
    let mut accepted = 0;
    for _ in 0..20000 {
        let len = rng.random_range(1..14);
        let s: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        if let Ok(m) = parse_smiles(&s) {
            accepted += 1;
            let c = m.canonical_smiles();
            let re = parse_smiles(&c).expect("canonical output must re-parse");
            assert_eq!(re.canonical_smiles(), c);
        }
    }
    assert!(accepted > 50, "fuzz accepted too few molecules: {accepted}");
}

#[test]
fn stereo_markers_are_parsed_and_ignored_in_ranking() {
    let plain = canon("CC(N)C(=O)O");
    let tagged = canon("C[C@H](N)C(=O)O");
    assert_eq!(plain, tagged);
    assert_eq!(canon("F/C=C/F"), canon("FC=CF"));
}

#[test]
fn charges_round_trip() {
    let m = parse("[O-]C(=O)C");
    assert_eq!(m.atoms()[0].charge, -1);
    let c = m.canonical_smiles();
    assert_eq!(parse(&c).canonical_smiles(), c);
    assert!(c.contains("[O-]"));
}
