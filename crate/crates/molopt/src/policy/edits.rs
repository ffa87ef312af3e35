//! Discrete molecular edits and the fragment library.
//!
//! The edit vocabulary is finite so a linear-softmax policy can own one
//! weight row per action type: `done`, `delete_terminal`, one row per
//! replacement element, and one row per library fragment. Concrete actions
//! (which carry atom indices) share the row of their type.

use super::PolicyError;
use crate::chemgraph::{parse_smiles, Atom, Bond, BondOrder, Element, MolecularGraph};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Replacement targets, in enumeration order.
pub const REPLACE_ELEMENTS: [Element; 6] = [
    Element::C,
    Element::N,
    Element::O,
    Element::F,
    Element::S,
    Element::Cl,
];

/// Candidate actions per state are capped; enumeration order is replace,
/// delete, append (each by atom index), with `done` always kept last.
pub const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditAction {
    Done,
    DeleteTerminal { atom: usize },
    ReplaceAtom { atom: usize, element: Element },
    AppendFragment { atom: usize, fragment: usize },
}

impl EditAction {
    /// Weight-row index in the policy's action vocabulary.
    pub fn vocab_row(&self) -> usize {
        match self {
            EditAction::Done => 0,
            EditAction::DeleteTerminal { .. } => 1,
            EditAction::ReplaceAtom { element, .. } => {
                2 + REPLACE_ELEMENTS
                    .iter()
                    .position(|e| e == element)
                    .expect("replacement element in vocabulary")
            }
            EditAction::AppendFragment { fragment, .. } => 2 + REPLACE_ELEMENTS.len() + fragment,
        }
    }

    pub fn describe(&self, library: &FragmentLibrary) -> String {
        match self {
            EditAction::Done => "no further modification".to_string(),
            EditAction::DeleteTerminal { atom } => format!("delete terminal atom {atom}"),
            EditAction::ReplaceAtom { atom, element } => {
                format!("replace atom {atom} with {}", element.symbol())
            }
            EditAction::AppendFragment { atom, fragment } => {
                format!("attach {} at atom {atom}", library.smiles(*fragment))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Fragment {
    smiles: String,
    graph: MolecularGraph,
}

/// Small substituents the policy may graft onto a molecule.
#[derive(Debug, Clone)]
pub struct FragmentLibrary {
    fragments: Vec<Fragment>,
}

impl FragmentLibrary {
    /// The built-in library shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_text(include_str!("../../data/fragments.smi"))
            .expect("embedded fragment library is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Library(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// One SMILES per line; `#` comments and blank lines ignored. Every
    /// fragment must expose a free valence on its first atom.
    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let mut fragments = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let graph = parse_smiles(line)
                .map_err(|e| PolicyError::Library(format!("line {}: {e}", idx + 1)))?;
            if graph.free_valence(0) == 0 {
                return Err(PolicyError::Library(format!(
                    "line {}: fragment `{line}` has no free valence on atom 0",
                    idx + 1
                )));
            }
            fragments.push(Fragment {
                smiles: line.to_string(),
                graph,
            });
        }
        if fragments.is_empty() {
            return Err(PolicyError::Library("empty fragment library".to_string()));
        }
        Ok(FragmentLibrary { fragments })
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn smiles(&self, idx: usize) -> &str {
        &self.fragments[idx].smiles
    }

    /// Total action-vocabulary size for this library.
    pub fn vocab_size(&self) -> usize {
        2 + REPLACE_ELEMENTS.len() + self.fragments.len()
    }
}

/// Enumerate legal edits for a molecule, capped at [`MAX_CANDIDATES`] with
/// `done` always included as the final candidate.
pub fn enumerate_legal_edits(m: &MolecularGraph, library: &FragmentLibrary) -> Vec<EditAction> {
    let n = m.heavy_atom_count();
    let mut edits = Vec::new();
    for atom in 0..n {
        let a = &m.atoms()[atom];
        if a.aromatic || a.charge != 0 || a.stereo.is_some() {
            continue;
        }
        let bond_sum = m
            .neighbors(atom)
            .map(|(_, b)| match b.order {
                BondOrder::Single => 1,
                BondOrder::Double => 2,
                BondOrder::Triple => 3,
                BondOrder::Aromatic => 2,
            })
            .sum::<i32>();
        for element in REPLACE_ELEMENTS {
            if element == a.element {
                continue;
            }
            if bond_sum <= max_plain_valence(element) {
                edits.push(EditAction::ReplaceAtom { atom, element });
            }
        }
    }
    if n > 1 {
        for atom in 0..n {
            if m.is_terminal(atom) {
                edits.push(EditAction::DeleteTerminal { atom });
            }
        }
    }
    for atom in 0..n {
        if m.free_valence(atom) >= 1 {
            for fragment in 0..library.len() {
                edits.push(EditAction::AppendFragment { atom, fragment });
            }
        }
    }
    edits.truncate(MAX_CANDIDATES - 1);
    edits.push(EditAction::Done);
    edits
}

fn max_plain_valence(element: Element) -> i32 {
    match element {
        Element::C => 4,
        Element::N | Element::B | Element::P => 3,
        Element::O | Element::S => 2,
        Element::F | Element::Cl | Element::Br | Element::I => 1,
    }
}

/// Apply an edit, revalidating the result through the full construction
/// pipeline. Failures surface as [`PolicyError::IllegalEdit`]; the
/// environment then sees an invalid proposal.
pub fn apply_edit(
    m: &MolecularGraph,
    action: &EditAction,
    library: &FragmentLibrary,
) -> Result<MolecularGraph, PolicyError> {
    let illegal = |reason: &str| PolicyError::IllegalEdit(reason.to_string());
    match *action {
        EditAction::Done => Err(illegal("done is not a graph edit")),
        EditAction::DeleteTerminal { atom } => {
            let (atoms, bonds) = m.raw_parts();
            if atom >= atoms.len() {
                return Err(illegal("atom index out of range"));
            }
            if atoms.len() == 1 {
                return Err(illegal("cannot delete the only atom"));
            }
            if !m.is_terminal(atom) {
                return Err(illegal("atom is not terminal"));
            }
            let remap = |i: usize| if i > atom { i - 1 } else { i };
            let new_atoms: Vec<Atom> = atoms
                .into_iter()
                .enumerate()
                .filter(|&(i, _)| i != atom)
                .map(|(_, a)| a)
                .collect();
            let new_bonds: Vec<Bond> = bonds
                .into_iter()
                .filter(|b| b.a != atom && b.b != atom)
                .map(|b| Bond {
                    a: remap(b.a),
                    b: remap(b.b),
                    ..b
                })
                .collect();
            MolecularGraph::from_parts(new_atoms, new_bonds)
                .map_err(|e| PolicyError::IllegalEdit(e.to_string()))
        }
        EditAction::ReplaceAtom { atom, element } => {
            let (mut atoms, bonds) = m.raw_parts();
            if atom >= atoms.len() {
                return Err(illegal("atom index out of range"));
            }
            if atoms[atom].aromatic {
                return Err(illegal("cannot replace an aromatic atom"));
            }
            if atoms[atom].element == element {
                return Err(illegal("replacement element equals current"));
            }
            atoms[atom].element = element;
            atoms[atom].charge = 0;
            atoms[atom].explicit_h = None;
            atoms[atom].stereo = None;
            MolecularGraph::from_parts(atoms, bonds)
                .map_err(|e| PolicyError::IllegalEdit(e.to_string()))
        }
        EditAction::AppendFragment { atom, fragment } => {
            let (mut atoms, mut bonds) = m.raw_parts();
            if atom >= atoms.len() {
                return Err(illegal("atom index out of range"));
            }
            if fragment >= library.len() {
                return Err(illegal("fragment index out of range"));
            }
            if m.free_valence(atom) == 0 {
                return Err(illegal("no free valence at attachment atom"));
            }
            // Attaching consumes one hydrogen on a bracket atom.
            if let Some(h) = atoms[atom].explicit_h {
                if h == 0 {
                    return Err(illegal("no free valence at attachment atom"));
                }
                atoms[atom].explicit_h = Some(h - 1);
            }
            let frag = &library.fragments[fragment].graph;
            let offset = atoms.len();
            let (frag_atoms, frag_bonds) = frag.raw_parts();
            for (i, mut a) in frag_atoms.into_iter().enumerate() {
                if i == 0 {
                    if let Some(h) = a.explicit_h {
                        if h == 0 {
                            return Err(illegal("fragment attachment atom has no free valence"));
                        }
                        a.explicit_h = Some(h - 1);
                    }
                }
                atoms.push(a);
            }
            for b in frag_bonds {
                bonds.push(Bond {
                    a: b.a + offset,
                    b: b.b + offset,
                    ..b
                });
            }
            bonds.push(Bond {
                a: atom,
                b: offset,
                order: BondOrder::Single,
                dir: None,
            });
            MolecularGraph::from_parts(atoms, bonds)
                .map_err(|e| PolicyError::IllegalEdit(e.to_string()))
        }
    }
}
