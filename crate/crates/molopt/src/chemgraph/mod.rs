//! Molecular graphs: parsing, validation, canonical SMILES, fingerprints.
//!
//! The supported SMILES subset covers the organic elements
//! (B, C, N, O, P, S, F, Cl, Br, I), aromatic lowercase forms, bracket atoms
//! with charge and explicit hydrogen counts, branches, ring closures
//! (including `%nn`), and bond symbols `- = # : / \`. Stereo markers are
//! parsed and kept as opaque annotations; they never affect canonical
//! ranking or fingerprints. Multi-fragment inputs (`.`) are rejected: the
//! environment operates on single connected molecules.
//!
//! Aromaticity of kekulized input is perceived with a Hueckel electron count
//! on simple rings of size 5-7 whose members are all sp2-capable, so
//! `C1=CC=CC=C1` and `c1ccccc1` canonicalize identically.

mod fingerprint;
mod parse;
mod write;

pub use fingerprint::{tanimoto, Fingerprint, FingerprintError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced while parsing or validating a molecule.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unbalanced bracket or parenthesis at byte {0}")]
    UnbalancedBracket(usize),
    #[error("ring closure {0} never closed")]
    UnclosedRing(u16),
    #[error("valence violation on atom {atom}: {reason}")]
    BadValence { atom: usize, reason: String },
    #[error("unsupported element or token `{0}`")]
    UnsupportedElement(String),
    #[error("multi-fragment SMILES not supported")]
    MultiFragment,
    #[error("unexpected character `{ch}` at byte {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("conflicting bond orders on ring closure {0}")]
    RingBondConflict(u16),
    #[error("duplicate or self bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("empty input")]
    Empty,
}

/// Elements of the supported organic subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "B" => Element::B,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "P" => Element::P,
            "S" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            _ => return None,
        })
    }

    /// Can this element appear in lowercase aromatic form?
    pub fn aromatic_capable(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    /// Standard valence targets for neutral atoms, ascending.
    fn valence_targets(self) -> &'static [u8] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    /// Maximum total valence (bonds + hydrogens) for a given formal charge.
    fn max_valence(self, charge: i8) -> i32 {
        let q = i32::from(charge);
        let v = match self {
            Element::C => 4 - q.abs(),
            Element::B => 3 - q,
            Element::N => 3 + q,
            Element::O => 2 + q,
            Element::P => 5 + q,
            Element::S => 6 + q,
            Element::F | Element::Cl | Element::Br | Element::I => 1,
        };
        v.max(0)
    }

    /// Average atomic mass, used by the drug-likeness proxy.
    pub fn mass(self) -> f64 {
        match self {
            Element::B => 10.81,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::P => 30.974,
            Element::S => 32.06,
            Element::F => 18.998,
            Element::Cl => 35.45,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    pub(crate) fn code(self) -> u64 {
        self as u64
    }
}

/// Tetrahedral stereo annotation, preserved but otherwise inert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chirality {
    Counterclockwise,
    Clockwise,
}

/// Directional single-bond annotation (`/` or `\`), preserved but inert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BondDir {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    fn sigma_order(self) -> i32 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            // Aromatic bonds are handled separately in valence accounting.
            BondOrder::Aromatic => 1,
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    /// Hydrogen count fixed by a bracket atom; `None` means implicit.
    pub explicit_h: Option<u8>,
    pub aromatic: bool,
    pub stereo: Option<Chirality>,
    /// Final hydrogen count, assigned during validation.
    pub hydrogens: u8,
    /// Whether the atom lies on any cycle, derived on construction.
    pub in_ring: bool,
}

impl Atom {
    pub(crate) fn new(element: Element) -> Self {
        Atom {
            element,
            charge: 0,
            explicit_h: None,
            aromatic: false,
            stereo: None,
            hydrogens: 0,
            in_ring: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub dir: Option<BondDir>,
}

/// A parsed, valence-checked, connected molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Parse a SMILES string into a validated molecular graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, ParseError> {
    let (atoms, bonds) = parse::parse(text)?;
    MolecularGraph::from_parts(atoms, bonds)
}

/// Canonical SMILES of a molecule: invariant under input atom reordering.
pub fn canonicalize(m: &MolecularGraph) -> String {
    m.canonical_smiles()
}

/// Serialize a molecule back to SMILES. The writer emits the canonical form,
/// so `write_smiles` round-trips through `parse_smiles` to an isomorphic
/// graph.
pub fn write_smiles(m: &MolecularGraph) -> String {
    m.canonical_smiles()
}

impl MolecularGraph {
    /// Build and validate a graph from raw atoms/bonds. Runs the full
    /// pipeline: connectivity, ring membership, aromaticity perception,
    /// hydrogen assignment, and valence checking.
    pub(crate) fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, ParseError> {
        if atoms.is_empty() {
            return Err(ParseError::Empty);
        }
        let mut adjacency = vec![Vec::new(); atoms.len()];
        let mut seen = std::collections::HashSet::new();
        for (idx, bond) in bonds.iter().enumerate() {
            if bond.a >= atoms.len() || bond.b >= atoms.len() || bond.a == bond.b {
                return Err(ParseError::DuplicateBond(bond.a, bond.b));
            }
            let key = (bond.a.min(bond.b), bond.a.max(bond.b));
            if !seen.insert(key) {
                return Err(ParseError::DuplicateBond(bond.a, bond.b));
            }
            adjacency[bond.a].push((bond.b, idx));
            adjacency[bond.b].push((bond.a, idx));
        }
        let mut graph = MolecularGraph {
            atoms,
            bonds,
            adjacency,
        };
        graph.check_connected()?;
        graph.mark_ring_membership();
        graph.assign_hydrogens(true)?;
        graph.perceive_aromaticity();
        graph.assign_hydrogens(false)?;
        Ok(graph)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, &Bond)> {
        self.adjacency[atom]
            .iter()
            .map(move |&(nbr, bidx)| (nbr, &self.bonds[bidx]))
    }

    /// Cycle rank: number of independent rings.
    pub fn ring_count(&self) -> usize {
        self.bonds.len() + 1 - self.atoms.len()
    }

    pub fn molecular_weight(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.element.mass() + f64::from(a.hydrogens) * 1.008)
            .sum()
    }

    /// Fraction of heavy atoms that are not carbon.
    pub fn hetero_fraction(&self) -> f64 {
        let hetero = self
            .atoms
            .iter()
            .filter(|a| a.element != Element::C)
            .count();
        hetero as f64 / self.atoms.len() as f64
    }

    pub fn count_element(&self, element: Element) -> usize {
        self.atoms.iter().filter(|a| a.element == element).count()
    }

    /// Hydrogens still available on an atom (capacity for one more bond).
    pub fn free_valence(&self, atom: usize) -> u8 {
        self.atoms[atom].hydrogens
    }

    pub fn is_terminal(&self, atom: usize) -> bool {
        self.adjacency[atom].len() <= 1
    }

    /// Raw atom/bond copies for graph surgery; revalidate with `from_parts`.
    pub(crate) fn raw_parts(&self) -> (Vec<Atom>, Vec<Bond>) {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let mut a = a.clone();
                // Let validation recompute hydrogens from scratch.
                a.hydrogens = 0;
                a.in_ring = false;
                a
            })
            .collect();
        (atoms, self.bonds.clone())
    }

    fn check_connected(&self) -> Result<(), ParseError> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(nbr, _) in &self.adjacency[v] {
                if !seen[nbr] {
                    seen[nbr] = true;
                    count += 1;
                    stack.push(nbr);
                }
            }
        }
        if count != n {
            return Err(ParseError::MultiFragment);
        }
        Ok(())
    }

    /// Mark atoms on cycles. An edge is on a cycle iff it is not a bridge.
    fn mark_ring_membership(&mut self) {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0usize;
        // Iterative bridge finding (parent tracked per stack frame).
        let mut stack: Vec<(usize, usize, usize)> = Vec::new(); // (v, parent_edge, next adj idx)
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            stack.push((root, usize::MAX, 0));
            while let Some(&mut (v, pedge, ref mut next)) = stack.last_mut() {
                if *next < self.adjacency[v].len() {
                    let (to, eidx) = self.adjacency[v][*next];
                    *next += 1;
                    if eidx == pedge {
                        continue;
                    }
                    if disc[to] == usize::MAX {
                        disc[to] = timer;
                        low[to] = timer;
                        timer += 1;
                        stack.push((to, eidx, 0));
                    } else {
                        low[v] = low[v].min(disc[to]);
                    }
                } else {
                    stack.pop();
                    if let Some(&mut (parent, _, _)) = stack.last_mut() {
                        low[parent] = low[parent].min(low[v]);
                        if low[v] > disc[parent] {
                            is_bridge[pedge] = true;
                        }
                    }
                }
            }
        }
        for atom in &mut self.atoms {
            atom.in_ring = false;
        }
        for (idx, bond) in self.bonds.iter().enumerate() {
            if !is_bridge[idx] {
                self.atoms[bond.a].in_ring = true;
                self.atoms[bond.b].in_ring = true;
            }
        }
    }

    /// Shortest cycle through each bond, as an ordered atom path.
    fn candidate_rings(&self, max_size: usize) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut rings: Vec<Vec<usize>> = Vec::new();
        let mut seen_sets: std::collections::HashSet<Vec<usize>> = std::collections::HashSet::new();
        for (eidx, bond) in self.bonds.iter().enumerate() {
            // BFS from bond.a to bond.b avoiding the bond itself.
            let mut prev = vec![usize::MAX; n];
            let mut dist = vec![usize::MAX; n];
            let mut queue = std::collections::VecDeque::new();
            dist[bond.a] = 0;
            queue.push_back(bond.a);
            'bfs: while let Some(v) = queue.pop_front() {
                if dist[v] + 1 >= max_size {
                    continue;
                }
                for &(to, e2) in &self.adjacency[v] {
                    if e2 == eidx || dist[to] != usize::MAX {
                        continue;
                    }
                    dist[to] = dist[v] + 1;
                    prev[to] = v;
                    if to == bond.b {
                        break 'bfs;
                    }
                    queue.push_back(to);
                }
            }
            if dist[bond.b] == usize::MAX {
                continue;
            }
            let mut path = vec![bond.b];
            let mut cur = bond.b;
            while cur != bond.a {
                cur = prev[cur];
                path.push(cur);
            }
            if path.len() > max_size {
                continue;
            }
            let mut key = path.clone();
            key.sort_unstable();
            if seen_sets.insert(key) {
                rings.push(path);
            }
        }
        rings.sort_by(|a, b| (a.len(), a.iter().min()).cmp(&(b.len(), b.iter().min())));
        rings
    }

    /// Hueckel perception on isolated simple rings of size 5-7. Marks ring
    /// atoms and ring-path bonds aromatic when every member is sp2-capable
    /// and the pi-electron count is 4n+2.
    fn perceive_aromaticity(&mut self) {
        let rings = self.candidate_rings(7);
        // A couple of passes so fused systems settle.
        for _ in 0..3 {
            let mut changed = false;
            for ring in &rings {
                if ring.len() < 5 || ring.len() > 7 {
                    continue;
                }
                if ring.iter().all(|&a| self.atoms[a].aromatic) {
                    continue;
                }
                if let Some(pi) = self.ring_pi_electrons(ring) {
                    if pi % 4 == 2 {
                        self.aromatize_ring(ring);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Pi-electron contribution sum for a candidate ring, or `None` if any
    /// member is not sp2-capable.
    fn ring_pi_electrons(&self, ring: &[usize]) -> Option<u32> {
        let in_ring = |i: usize| ring.contains(&i);
        let mut total = 0u32;
        for &a in ring {
            let atom = &self.atoms[a];
            if self.adjacency[a].len() > 3 {
                return None;
            }
            let mut dbl_in = false;
            let mut dbl_exo = false;
            for &(nbr, bidx) in &self.adjacency[a] {
                match self.bonds[bidx].order {
                    BondOrder::Triple => return None,
                    BondOrder::Double => {
                        if in_ring(nbr) {
                            dbl_in = true;
                        } else {
                            dbl_exo = true;
                        }
                    }
                    _ => {}
                }
            }
            let contribution = if atom.aromatic {
                match atom.element {
                    Element::C => 1,
                    Element::N | Element::P => {
                        let has_h = atom.explicit_h.unwrap_or(0) > 0 || atom.hydrogens > 0;
                        if has_h || self.adjacency[a].len() == 3 {
                            2
                        } else {
                            1
                        }
                    }
                    Element::O | Element::S => 2,
                    Element::B => 0,
                    _ => return None,
                }
            } else {
                match atom.element {
                    Element::C => {
                        if dbl_in {
                            1
                        } else if dbl_exo {
                            0
                        } else if atom.charge > 0 {
                            0
                        } else if atom.charge < 0 {
                            2
                        } else {
                            return None; // sp3 carbon
                        }
                    }
                    Element::N | Element::P | Element::O | Element::S => {
                        if dbl_in {
                            1
                        } else if dbl_exo {
                            0
                        } else {
                            2
                        }
                    }
                    Element::B => {
                        if dbl_in {
                            1
                        } else {
                            0
                        }
                    }
                    _ => return None,
                }
            };
            total += contribution;
        }
        Some(total)
    }

    fn aromatize_ring(&mut self, ring: &[usize]) {
        // Lone-pair donors (pyrrole-type N/P) keep their hydrogen explicitly,
        // otherwise the aromatic valence rules would read them pyridine-like.
        for &a in ring {
            let atom = &self.atoms[a];
            if matches!(atom.element, Element::N | Element::P)
                && atom.explicit_h.is_none()
                && atom.hydrogens > 0
            {
                let has_double = self.adjacency[a]
                    .iter()
                    .any(|&(_, bidx)| self.bonds[bidx].order == BondOrder::Double);
                if !has_double {
                    self.atoms[a].explicit_h = Some(self.atoms[a].hydrogens);
                }
            }
        }
        for &a in ring {
            self.atoms[a].aromatic = true;
        }
        for i in 0..ring.len() {
            let u = ring[i];
            let v = ring[(i + 1) % ring.len()];
            for &(nbr, bidx) in &self.adjacency[u] {
                if nbr == v {
                    self.bonds[bidx].order = BondOrder::Aromatic;
                    self.bonds[bidx].dir = None;
                }
            }
        }
    }

    /// Assign hydrogen counts and enforce valence limits. In the provisional
    /// pass (`pre_aromatic`) failures on non-aromatic atoms are tolerated so
    /// that perception can run first; the final pass enforces everything.
    fn assign_hydrogens(&mut self, pre_aromatic: bool) -> Result<(), ParseError> {
        for idx in 0..self.atoms.len() {
            let mut n_arom = 0i32;
            let mut other = 0i32;
            for &(_, bidx) in &self.adjacency[idx] {
                match self.bonds[bidx].order {
                    BondOrder::Aromatic => n_arom += 1,
                    o => other += o.sigma_order(),
                }
            }
            let heavy_degree = self.adjacency[idx].len();
            let atom = &self.atoms[idx];
            let bad = |reason: &str| ParseError::BadValence {
                atom: idx,
                reason: reason.to_string(),
            };

            let hydrogens = if atom.aromatic {
                if n_arom < 2 {
                    if pre_aromatic {
                        // Might become consistent after perception of a
                        // neighboring kekulized ring; final pass decides.
                        0
                    } else {
                        return Err(bad("aromatic atom outside aromatic ring"));
                    }
                } else {
                    let pi_extra = match atom.element {
                        Element::C => 1,
                        Element::N | Element::P => {
                            let donor =
                                atom.explicit_h.unwrap_or(0) > 0 || heavy_degree == 3;
                            if donor {
                                0
                            } else {
                                1
                            }
                        }
                        Element::O | Element::S | Element::B => 0,
                        _ => return Err(bad("element cannot be aromatic")),
                    };
                    let eff = n_arom + other + pi_extra;
                    if atom.explicit_h.is_some() || atom.charge != 0 {
                        let h = i32::from(atom.explicit_h.unwrap_or(0));
                        if eff + h > atom.element.max_valence(atom.charge) {
                            return Err(bad("bracket valence exceeds maximum"));
                        }
                        h as u8
                    } else {
                        match atom
                            .element
                            .valence_targets()
                            .iter()
                            .find(|&&t| i32::from(t) >= eff)
                        {
                            Some(&t) => (i32::from(t) - eff) as u8,
                            None => return Err(bad("aromatic valence exceeds maximum")),
                        }
                    }
                }
            } else {
                if n_arom > 0 {
                    if pre_aromatic {
                        0
                    } else {
                        return Err(bad("aromatic bond on non-aromatic atom"));
                    }
                } else {
                    let bond_sum = other;
                    if atom.explicit_h.is_some() || atom.charge != 0 {
                        let h = i32::from(atom.explicit_h.unwrap_or(0));
                        if bond_sum + h > atom.element.max_valence(atom.charge) {
                            return Err(bad("bracket valence exceeds maximum"));
                        }
                        h as u8
                    } else {
                        match atom
                            .element
                            .valence_targets()
                            .iter()
                            .find(|&&t| i32::from(t) >= bond_sum)
                        {
                            Some(&t) => (i32::from(t) - bond_sum) as u8,
                            None => return Err(bad("valence exceeds maximum")),
                        }
                    }
                }
            };
            self.atoms[idx].hydrogens = hydrogens;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
