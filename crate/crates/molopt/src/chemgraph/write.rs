//! Canonical atom ranking and SMILES emission.
//!
//! Ranks come from iterative invariant refinement: each atom starts from a
//! hash of (element, charge, degree, hydrogen count, aromaticity, ring
//! membership) and repeatedly folds in the sorted invariants of its
//! neighbors until the partition stops refining. Remaining ties are broken
//! by (element, charge, degree, H count) and finally input index, which only
//! coincides for symmetry-equivalent atoms.

use super::{BondOrder, Element, MolecularGraph};
use crate::rng::combine;

impl MolecularGraph {
    /// Canonical order of atoms: `order[k]` is the input index of the atom
    /// with canonical rank `k`; `rank[i]` is the inverse permutation.
    ///
    /// Refinement alone leaves symmetry-equivalent atoms tied; ties are
    /// split one atom at a time (smallest-invariant class first, lowest
    /// input index within it) followed by re-refinement, so that every
    /// remaining ordering decision is made relative to structure. Picking a
    /// different member of an automorphic orbit yields the same string.
    pub(crate) fn canonical_order(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.atoms.len();
        let mut inv: Vec<u64> = (0..n).map(|i| self.initial_invariant(i)).collect();
        self.refine(&mut inv);
        for _ in 0..n {
            let mut counts: std::collections::HashMap<u64, usize> =
                std::collections::HashMap::new();
            for &v in &inv {
                *counts.entry(v).or_insert(0) += 1;
            }
            let Some(&tied) = counts
                .iter()
                .filter(|&(_, &c)| c > 1)
                .map(|(v, _)| v)
                .min()
            else {
                break;
            };
            let chosen = (0..n).find(|&i| inv[i] == tied).unwrap();
            inv[chosen] = combine(inv[chosen], SPLIT_MARKER);
            self.refine(&mut inv);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (inv[i], i));
        let mut rank = vec![0usize; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        (order, rank)
    }

    /// One Morgan-style refinement sweep to a fixed point: each round folds
    /// the sorted neighbor invariants into every atom, stopping when the
    /// partition no longer splits.
    fn refine(&self, inv: &mut Vec<u64>) {
        let n = self.atoms.len();
        let mut classes = distinct(inv);
        for _ in 0..n {
            let next: Vec<u64> = (0..n)
                .map(|i| {
                    let mut nbrs: Vec<u64> = self
                        .neighbors(i)
                        .map(|(nbr, bond)| combine(bond.order.code(), inv[nbr]))
                        .collect();
                    nbrs.sort_unstable();
                    let mut h = inv[i];
                    for v in nbrs {
                        h = combine(h, v);
                    }
                    h
                })
                .collect();
            let next_classes = distinct(&next);
            *inv = next;
            if next_classes <= classes {
                break;
            }
            classes = next_classes;
        }
    }

    fn initial_invariant(&self, i: usize) -> u64 {
        let a = &self.atoms[i];
        let mut h = combine(0, a.element.code());
        h = combine(h, (i32::from(a.charge) + 16) as u64);
        h = combine(h, self.degree(i) as u64);
        h = combine(h, u64::from(a.hydrogens));
        h = combine(h, u64::from(a.aromatic));
        combine(h, u64::from(a.in_ring))
    }

    /// Canonical SMILES. Stereo annotations are dropped; none of the
    /// downstream consumers are stereo-sensitive.
    pub fn canonical_smiles(&self) -> String {
        let (order, rank) = self.canonical_order();
        let root = order[0];
        let n = self.atoms.len();

        // Pass 1: spanning tree in emission order plus back edges.
        let mut visited = vec![false; n];
        let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut emit_order: Vec<usize> = Vec::with_capacity(n);
        let mut pos_in_emit = vec![0usize; n];
        let mut back_edges: Vec<usize> = Vec::new();
        let mut seen_back = vec![false; self.bonds.len()];
        let mut tree_edge = vec![false; self.bonds.len()];
        let mut stack: Vec<(usize, usize)> = vec![(root, usize::MAX)];
        visited[root] = true;
        while let Some((v, pedge)) = stack.pop() {
            pos_in_emit[v] = emit_order.len();
            emit_order.push(v);
            let mut nbrs: Vec<(usize, usize)> = self.adjacency[v].clone();
            nbrs.sort_by_key(|&(nbr, _)| rank[nbr]);
            for &(nbr, eidx) in &nbrs {
                if eidx == pedge {
                    continue;
                }
                if visited[nbr] {
                    if !seen_back[eidx] && !tree_edge[eidx] {
                        seen_back[eidx] = true;
                        back_edges.push(eidx);
                    }
                } else {
                    visited[nbr] = true;
                    tree_edge[eidx] = true;
                    children[v].push((nbr, eidx));
                }
            }
            for &(nbr, eidx) in nbrs.iter().rev() {
                if tree_edge[eidx] && children[v].iter().any(|&(c, _)| c == nbr) {
                    stack.push((nbr, eidx));
                }
            }
        }

        // Digit assignment in emission order; freed digits are reused.
        let mut openings: Vec<Vec<(u16, usize)>> = vec![Vec::new(); n];
        let mut closings: Vec<Vec<(u16, usize)>> = vec![Vec::new(); n];
        {
            let mut per_atom_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
            for &eidx in &back_edges {
                let bond = &self.bonds[eidx];
                let open_atom = if pos_in_emit[bond.a] < pos_in_emit[bond.b] {
                    bond.a
                } else {
                    bond.b
                };
                per_atom_edges[open_atom].push(eidx);
            }
            let mut next_free: Vec<u16> = (1..100).rev().collect();
            let mut digit_of: std::collections::HashMap<usize, u16> =
                std::collections::HashMap::new();
            for &v in &emit_order {
                // close first so digits free up
                let mut to_close: Vec<(u16, usize)> = Vec::new();
                for &eidx in &back_edges {
                    let bond = &self.bonds[eidx];
                    let close_atom = if pos_in_emit[bond.a] < pos_in_emit[bond.b] {
                        bond.b
                    } else {
                        bond.a
                    };
                    if close_atom == v {
                        if let Some(&d) = digit_of.get(&eidx) {
                            to_close.push((d, eidx));
                        }
                    }
                }
                to_close.sort_unstable();
                for (d, eidx) in to_close {
                    closings[v].push((d, eidx));
                    next_free.push(d);
                    next_free.sort_unstable_by(|a, b| b.cmp(a));
                }
                let mut opens = per_atom_edges[v].clone();
                opens.sort_by_key(|&eidx| {
                    let bond = &self.bonds[eidx];
                    let far = if bond.a == v { bond.b } else { bond.a };
                    pos_in_emit[far]
                });
                for eidx in opens {
                    let d = next_free.pop().unwrap_or(99);
                    digit_of.insert(eidx, d);
                    openings[v].push((d, eidx));
                }
            }
        }

        // Pass 2: emit.
        enum Op {
            Atom(usize, Option<usize>),
            Text(&'static str),
        }
        let mut out = String::new();
        let mut ops: Vec<Op> = vec![Op::Atom(root, None)];
        while let Some(op) = ops.pop() {
            match op {
                Op::Text(t) => out.push_str(t),
                Op::Atom(v, via) => {
                    if let Some(eidx) = via {
                        out.push_str(self.bond_token(eidx));
                    }
                    self.write_atom_token(v, &mut out);
                    for &(d, eidx) in &closings[v] {
                        let _ = eidx;
                        push_digit(&mut out, d);
                    }
                    for &(d, eidx) in &openings[v] {
                        out.push_str(self.bond_token(eidx));
                        push_digit(&mut out, d);
                    }
                    let kids = &children[v];
                    for (i, &(child, eidx)) in kids.iter().enumerate().rev() {
                        if i + 1 == kids.len() {
                            ops.push(Op::Atom(child, Some(eidx)));
                        } else {
                            ops.push(Op::Text(")"));
                            ops.push(Op::Atom(child, Some(eidx)));
                            ops.push(Op::Text("("));
                        }
                    }
                }
            }
        }
        out
    }

    fn bond_token(&self, eidx: usize) -> &'static str {
        let bond = &self.bonds[eidx];
        let both_aromatic = self.atoms[bond.a].aromatic && self.atoms[bond.b].aromatic;
        match bond.order {
            BondOrder::Single => {
                if both_aromatic {
                    "-"
                } else {
                    ""
                }
            }
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => "",
        }
    }

    fn write_atom_token(&self, v: usize, out: &mut String) {
        let atom = &self.atoms[v];
        let symbol = atom.element.symbol();
        let needs_bracket = atom.charge != 0 || atom.hydrogens != self.bare_implied_h(v);
        if !needs_bracket {
            if atom.aromatic {
                out.push_str(&symbol.to_lowercase());
            } else {
                out.push_str(symbol);
            }
            return;
        }
        out.push('[');
        if atom.aromatic {
            out.push_str(&symbol.to_lowercase());
        } else {
            out.push_str(symbol);
        }
        match atom.hydrogens {
            0 => {}
            1 => out.push('H'),
            h => {
                out.push('H');
                out.push_str(&h.to_string());
            }
        }
        match atom.charge {
            0 => {}
            1 => out.push('+'),
            -1 => out.push('-'),
            c if c > 0 => out.push_str(&format!("+{c}")),
            c => out.push_str(&format!("-{}", -c)),
        }
        out.push(']');
    }

    /// Hydrogen count that a bare (non-bracket) atom token would imply for
    /// atom `v` given its bonds. Used to decide whether a bracket is needed.
    fn bare_implied_h(&self, v: usize) -> u8 {
        let atom = &self.atoms[v];
        let mut n_arom = 0i32;
        let mut other = 0i32;
        for (_, bond) in self.neighbors(v) {
            match bond.order {
                BondOrder::Aromatic => n_arom += 1,
                o => other += o.sigma_order(),
            }
        }
        let eff = if atom.aromatic {
            let pi_extra = match atom.element {
                Element::C => 1,
                Element::N | Element::P => {
                    if self.degree(v) == 3 {
                        0
                    } else {
                        1
                    }
                }
                _ => 0,
            };
            n_arom + other + pi_extra
        } else {
            other
        };
        atom.element
            .valence_targets()
            .iter()
            .find(|&&t| i32::from(t) >= eff)
            .map_or(255, |&t| (i32::from(t) - eff) as u8)
    }
}

const SPLIT_MARKER: u64 = 0x7ad5_0c1a_9b3e_42d7;

fn distinct(values: &[u64]) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len()
}

fn push_digit(out: &mut String, d: u16) {
    if d < 10 {
        out.push_str(&d.to_string());
    } else {
        out.push('%');
        out.push_str(&format!("{d:02}"));
    }
}
