//! Circular (Morgan-style) fingerprints and Tanimoto similarity.
//!
//! Each atom starts from a hash of (element, charge, aromatic flag); radius
//! rounds fold in the sorted neighbor invariants together with bond orders.
//! Every per-atom invariant at every radius folds one bit into the vector.
//! The initial invariant deliberately omits degree and hydrogen count so
//! that a bare atom environment matches the same atom type inside a larger
//! molecule at radius 0; discrimination enters through the radius rounds.
//!
//! Hashing uses a fixed published 64-bit mixer seeded with zero, so bit
//! vectors are identical across platforms. Bit compatibility with external
//! toolkits is a non-goal.

use super::MolecularGraph;
use crate::rng::combine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// A folded bit vector fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    nbits: usize,
    radius: u32,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn bit(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    fn set(&mut self, idx: usize) {
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    /// Build a fingerprint directly from bit indices (test support).
    pub fn from_bits(nbits: usize, bits: &[usize]) -> Self {
        let mut fp = Fingerprint {
            nbits,
            radius: 0,
            words: vec![0; nbits.div_ceil(64)],
        };
        for &b in bits {
            fp.set(b % nbits);
        }
        fp
    }
}

/// Tanimoto similarity |a AND b| / |a OR b|. Both-empty is defined as 1.0;
/// valid molecules always set at least one bit.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::LengthMismatch(a.nbits, b.nbits));
    }
    let mut inter = 0u32;
    let mut union = 0u32;
    for (wa, wb) in a.words.iter().zip(&b.words) {
        inter += (wa & wb).count_ones();
        union += (wa | wb).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}

impl MolecularGraph {
    /// Morgan fingerprint over neighborhood radii `0..=radius`, folded into
    /// `nbits` bits (power of two).
    pub fn fingerprint(&self, radius: u32, nbits: usize) -> Fingerprint {
        assert!(nbits.is_power_of_two(), "nbits must be a power of two");
        let n = self.heavy_atom_count();
        let mut fp = Fingerprint {
            nbits,
            radius,
            words: vec![0; nbits.div_ceil(64)],
        };
        let mut inv: Vec<u64> = (0..n)
            .map(|i| {
                let a = &self.atoms()[i];
                let mut h = combine(0, a.element.code());
                h = combine(h, (i32::from(a.charge) + 16) as u64);
                combine(h, u64::from(a.aromatic))
            })
            .collect();
        for &v in &inv {
            fp.set((v % nbits as u64) as usize);
        }
        for _ in 0..radius {
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
            inv = next;
            for &v in &inv {
                fp.set((v % nbits as u64) as usize);
            }
        }
        fp
    }
}
