//! SMILES tokenizer/parser for the supported subset.

use super::{Atom, Bond, BondDir, BondOrder, Chirality, Element, ParseError};
use std::collections::HashMap;

/// A bond symbol seen before the next atom or ring closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PendingBond {
    Default,
    Order(BondOrder),
    Directional(BondDir),
}

impl PendingBond {
    fn resolve(self, a_aromatic: bool, b_aromatic: bool) -> (BondOrder, Option<BondDir>) {
        match self {
            PendingBond::Default => {
                if a_aromatic && b_aromatic {
                    (BondOrder::Aromatic, None)
                } else {
                    (BondOrder::Single, None)
                }
            }
            PendingBond::Order(o) => (o, None),
            PendingBond::Directional(d) => (BondOrder::Single, Some(d)),
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending: Option<PendingBond>,
    branch_stack: Vec<usize>,
    // ring number -> (atom index, bond symbol recorded at the opening)
    open_rings: HashMap<u16, (usize, Option<PendingBond>)>,
}

pub(super) fn parse(text: &str) -> Result<(Vec<Atom>, Vec<Bond>), ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branch_stack: Vec::new(),
        open_rings: HashMap::new(),
    };
    p.run()?;
    Ok((p.atoms, p.bonds))
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn run(&mut self) -> Result<(), ParseError> {
        while let Some(b) = self.peek() {
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => break, // SMILES ends at whitespace
                b'.' => return Err(ParseError::MultiFragment),
                b'(' => {
                    self.pos += 1;
                    match self.prev {
                        Some(prev) => self.branch_stack.push(prev),
                        None => return Err(ParseError::UnbalancedBracket(self.pos - 1)),
                    }
                }
                b')' => {
                    self.pos += 1;
                    match self.branch_stack.pop() {
                        Some(prev) => self.prev = Some(prev),
                        None => return Err(ParseError::UnbalancedBracket(self.pos - 1)),
                    }
                }
                b'-' => {
                    self.pos += 1;
                    self.set_pending(PendingBond::Order(BondOrder::Single))?;
                }
                b'=' => {
                    self.pos += 1;
                    self.set_pending(PendingBond::Order(BondOrder::Double))?;
                }
                b'#' => {
                    self.pos += 1;
                    self.set_pending(PendingBond::Order(BondOrder::Triple))?;
                }
                b':' => {
                    self.pos += 1;
                    self.set_pending(PendingBond::Order(BondOrder::Aromatic))?;
                }
                b'/' => {
                    self.pos += 1;
                    self.set_pending(PendingBond::Directional(BondDir::Up))?;
                }
                b'\\' => {
                    self.pos += 1;
                    self.set_pending(PendingBond::Directional(BondDir::Down))?;
                }
                b'%' => {
                    self.pos += 1;
                    let d1 = self.bump().filter(u8::is_ascii_digit);
                    let d2 = self.bump().filter(u8::is_ascii_digit);
                    match (d1, d2) {
                        (Some(a), Some(b)) => {
                            let num = u16::from(a - b'0') * 10 + u16::from(b - b'0');
                            self.ring_closure(num)?;
                        }
                        _ => {
                            return Err(ParseError::UnexpectedChar {
                                ch: '%',
                                pos: self.pos.saturating_sub(1),
                            })
                        }
                    }
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure(u16::from(b - b'0'))?;
                }
                b'[' => {
                    let atom = self.parse_bracket_atom()?;
                    self.add_atom(atom)?;
                }
                _ => {
                    let atom = self.parse_organic_atom()?;
                    self.add_atom(atom)?;
                }
            }
        }
        if !self.branch_stack.is_empty() {
            return Err(ParseError::UnbalancedBracket(self.pos));
        }
        if let Some(&num) = self.open_rings.keys().min() {
            return Err(ParseError::UnclosedRing(num));
        }
        if self.pending.is_some() {
            return Err(ParseError::UnexpectedChar {
                ch: '-',
                pos: self.pos,
            });
        }
        if self.atoms.is_empty() {
            return Err(ParseError::Empty);
        }
        Ok(())
    }

    fn set_pending(&mut self, bond: PendingBond) -> Result<(), ParseError> {
        if self.pending.is_some() || self.prev.is_none() {
            return Err(ParseError::UnexpectedChar {
                ch: '-',
                pos: self.pos.saturating_sub(1),
            });
        }
        self.pending = Some(bond);
        Ok(())
    }

    /// Bare atoms of the organic subset; `Cl`/`Br` are the only two-letter
    /// forms, lowercase means aromatic.
    fn parse_organic_atom(&mut self) -> Result<Atom, ParseError> {
        let start = self.pos;
        let b = self.bump().unwrap();
        let (element, aromatic) = match b {
            b'C' => {
                if self.peek() == Some(b'l') {
                    self.pos += 1;
                    (Element::Cl, false)
                } else {
                    (Element::C, false)
                }
            }
            b'B' => {
                if self.peek() == Some(b'r') {
                    self.pos += 1;
                    (Element::Br, false)
                } else {
                    (Element::B, false)
                }
            }
            b'N' => (Element::N, false),
            b'O' => (Element::O, false),
            b'P' => (Element::P, false),
            b'S' => (Element::S, false),
            b'F' => (Element::F, false),
            b'I' => (Element::I, false),
            b'b' => (Element::B, true),
            b'c' => (Element::C, true),
            b'n' => (Element::N, true),
            b'o' => (Element::O, true),
            b'p' => (Element::P, true),
            b's' => (Element::S, true),
            _ => {
                let ch = self.bytes[start] as char;
                if ch.is_ascii_alphabetic() {
                    return Err(ParseError::UnsupportedElement(ch.to_string()));
                }
                return Err(ParseError::UnexpectedChar { ch, pos: start });
            }
        };
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        Ok(atom)
    }

    /// `[` symbol chirality? Hcount? charge? `]` — isotopes and atom classes
    /// are outside the supported subset.
    fn parse_bracket_atom(&mut self) -> Result<Atom, ParseError> {
        let open = self.pos;
        self.pos += 1; // consume '['
        if self.peek().is_some_and(|b| b.is_ascii_digit()) {
            return Err(ParseError::UnsupportedElement("isotope".to_string()));
        }
        let b = self
            .bump()
            .ok_or(ParseError::UnbalancedBracket(open))?;
        let (element, aromatic) = match b {
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                let sym = (b as char).to_ascii_uppercase().to_string();
                (Element::from_symbol(&sym).unwrap(), true)
            }
            b'A'..=b'Z' => {
                let mut sym = (b as char).to_string();
                if self.peek().is_some_and(|n| n.is_ascii_lowercase()) {
                    // Two-letter symbol: accept Cl/Br, reject He, Se, ...
                    let next = self.peek().unwrap();
                    let two = format!("{}{}", b as char, next as char);
                    match Element::from_symbol(&two) {
                        Some(e) => {
                            self.pos += 1;
                            (e, false)
                        }
                        None => {
                            sym.push(next as char);
                            return Err(ParseError::UnsupportedElement(sym));
                        }
                    }
                } else {
                    match Element::from_symbol(&sym) {
                        Some(e) => (e, false),
                        None => return Err(ParseError::UnsupportedElement(sym)),
                    }
                }
            }
            _ => {
                return Err(ParseError::UnexpectedChar {
                    ch: b as char,
                    pos: self.pos - 1,
                })
            }
        };
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        if aromatic && !element.aromatic_capable() {
            return Err(ParseError::UnsupportedElement(
                element.symbol().to_lowercase(),
            ));
        }

        // chirality
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
                atom.stereo = Some(Chirality::Clockwise);
            } else {
                atom.stereo = Some(Chirality::Counterclockwise);
            }
        }
        // explicit hydrogens
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let mut count: u32 = 1;
            if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                count = u32::from(self.bump().unwrap() - b'0');
            }
            if count > 9 {
                return Err(ParseError::BadValence {
                    atom: self.atoms.len(),
                    reason: "hydrogen count too large".to_string(),
                });
            }
            atom.explicit_h = Some(count as u8);
        }
        // charge
        match self.peek() {
            Some(b'+') | Some(b'-') => {
                let sign: i8 = if self.bump().unwrap() == b'+' { 1 } else { -1 };
                let mut magnitude: i8 = 1;
                if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                    magnitude = (self.bump().unwrap() - b'0') as i8;
                } else {
                    while self.peek() == Some(if sign > 0 { b'+' } else { b'-' }) {
                        self.pos += 1;
                        magnitude += 1;
                    }
                }
                if magnitude > 3 {
                    return Err(ParseError::BadValence {
                        atom: self.atoms.len(),
                        reason: "charge magnitude too large".to_string(),
                    });
                }
                atom.charge = sign * magnitude;
            }
            _ => {}
        }
        if atom.explicit_h.is_none() {
            // Bracket atoms fix the hydrogen count; absent means zero.
            atom.explicit_h = Some(0);
        }
        match self.bump() {
            Some(b']') => Ok(atom),
            Some(other) => Err(ParseError::UnexpectedChar {
                ch: other as char,
                pos: self.pos - 1,
            }),
            None => Err(ParseError::UnbalancedBracket(open)),
        }
    }

    fn add_atom(&mut self, atom: Atom) -> Result<(), ParseError> {
        let idx = self.atoms.len();
        let aromatic = atom.aromatic;
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let pending = self.pending.take().unwrap_or(PendingBond::Default);
            let (order, dir) = pending.resolve(self.atoms[prev].aromatic, aromatic);
            self.push_bond(prev, idx, order, dir)?;
        } else if self.pending.is_some() {
            return Err(ParseError::UnexpectedChar {
                ch: '-',
                pos: self.pos,
            });
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, num: u16) -> Result<(), ParseError> {
        let here = match self.prev {
            Some(p) => p,
            None => {
                return Err(ParseError::UnexpectedChar {
                    ch: '0',
                    pos: self.pos.saturating_sub(1),
                })
            }
        };
        let pending = self.pending.take();
        match self.open_rings.remove(&num) {
            None => {
                self.open_rings.insert(num, (here, pending));
            }
            Some((other, opening_bond)) => {
                if other == here {
                    return Err(ParseError::DuplicateBond(here, here));
                }
                let bond = match (opening_bond, pending) {
                    (None, None) => PendingBond::Default,
                    (Some(b), None) | (None, Some(b)) => b,
                    (Some(a), Some(b)) => {
                        if a == b {
                            a
                        } else {
                            return Err(ParseError::RingBondConflict(num));
                        }
                    }
                };
                let (order, dir) =
                    bond.resolve(self.atoms[other].aromatic, self.atoms[here].aromatic);
                self.push_bond(other, here, order, dir)?;
            }
        }
        Ok(())
    }

    fn push_bond(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        dir: Option<BondDir>,
    ) -> Result<(), ParseError> {
        if self
            .bonds
            .iter()
            .any(|bond| (bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
        {
            return Err(ParseError::DuplicateBond(a, b));
        }
        self.bonds.push(Bond { a, b, order, dir });
        Ok(())
    }
}
