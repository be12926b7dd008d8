//! Circular fingerprints and Tanimoto distance.
//!
//! The bit layout is pinned so independent implementations can reproduce it:
//! atom invariants are 64-bit FNV-1a hashes. Round 0 hashes the byte string
//! `symbol .. 0x7C charge+8 degree bond_sum h_count`; round r >= 1 hashes the
//! atom's previous invariant (8 LE bytes) followed by each sorted
//! (bond order byte, neighbor invariant 8 LE bytes) pair. Every round's
//! invariant sets bit `hash % nbits`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{implicit_hydrogens, Molecule};

pub const FNV_OFFSET: u64 = 0xcbf29ce484222325;
pub const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Error, PartialEq)]
pub enum FpError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("nbits must be a power of two, got {0}")]
    BadWidth(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpConfig {
    pub radius: u32,
    pub nbits: usize,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            radius: 2,
            nbits: 2048,
        }
    }
}

/// Fixed-width bitset fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
}

impl Fingerprint {
    pub fn empty(nbits: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
        }
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.nbits);
        self.words[bit / 64] |= 1u64 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] & (1u64 << (bit % 64)) != 0
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn and_count(&self, other: &Fingerprint) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    pub fn or_count(&self, other: &Fingerprint) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones())
            .sum()
    }

    /// Hex string (big-endian words) for golden-file tests.
    pub fn to_hex(&self) -> String {
        self.words
            .iter()
            .rev()
            .map(|w| format!("{w:016x}"))
            .collect()
    }
}

/// Per-round atom invariants; round 0 from local properties, later rounds
/// folded over sorted neighbor pairs.
fn atom_invariants(mol: &Molecule, radius: u32) -> Vec<Vec<u64>> {
    let n = mol.atom_count();
    let adj = mol.adjacency();
    let mut rounds: Vec<Vec<u64>> = Vec::with_capacity(radius as usize + 1);

    let mut cur: Vec<u64> = (0..n)
        .map(|i| {
            let atom = mol.atom(i);
            let mut bytes = Vec::with_capacity(8);
            bytes.extend_from_slice(atom.element.symbol().as_bytes());
            bytes.push(0x7C);
            bytes.push((atom.charge as i16 + 8) as u8);
            bytes.push(adj[i].len() as u8);
            bytes.push(mol.bond_order_sum(i));
            bytes.push(implicit_hydrogens(mol, i));
            fnv1a64(&bytes)
        })
        .collect();
    rounds.push(cur.clone());

    for _ in 0..radius {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut pairs: Vec<(u8, u64)> =
                    adj[i].iter().map(|&(w, o)| (o, cur[w])).collect();
                pairs.sort_unstable();
                let mut bytes = Vec::with_capacity(8 + pairs.len() * 9);
                bytes.extend_from_slice(&cur[i].to_le_bytes());
                for (o, inv) in pairs {
                    bytes.push(o);
                    bytes.extend_from_slice(&inv.to_le_bytes());
                }
                fnv1a64(&bytes)
            })
            .collect();
        rounds.push(next.clone());
        cur = next;
    }
    rounds
}

pub fn morgan_fingerprint(mol: &Molecule, radius: u32, nbits: usize) -> Result<Fingerprint, FpError> {
    if !nbits.is_power_of_two() {
        return Err(FpError::BadWidth(nbits));
    }
    let mut fp = Fingerprint::empty(nbits);
    for round in atom_invariants(mol, radius) {
        for inv in round {
            fp.set((inv % nbits as u64) as usize);
        }
    }
    Ok(fp)
}

/// |a AND b| / |a OR b|; defined as 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f32, FpError> {
    if a.nbits != b.nbits {
        return Err(FpError::WidthMismatch(a.nbits, b.nbits));
    }
    let union = a.or_count(b);
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.and_count(b) as f32 / union as f32)
}

/// Tanimoto distance between two molecules under a fingerprint config.
pub fn distance(a: &Molecule, b: &Molecule, cfg: &FpConfig) -> Result<f32, FpError> {
    let fa = morgan_fingerprint(a, cfg.radius, cfg.nbits)?;
    let fb = morgan_fingerprint(b, cfg.radius, cfg.nbits)?;
    Ok(1.0 - tanimoto(&fa, &fb)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::Rng;

    #[test]
    fn identical_molecules_identical_fingerprints() {
        let a = parse_smiles("CC(=O)O").unwrap();
        let b = parse_smiles("CC(=O)O").unwrap();
        let fa = morgan_fingerprint(&a, 2, 2048).unwrap();
        let fb = morgan_fingerprint(&b, 2, 2048).unwrap();
        assert_eq!(fa, fb);
        assert!(fa.popcount() >= 1);
    }

    /// Independent re-derivation of the radius-0 invariant for a lone atom.
    fn single_atom_bit(symbol: &str, nbits: u64) -> usize {
        // element bytes, 0x7C, charge+8, degree 0, bond sum 0, 4 implicit H
        // for C / 2 for O
        let h = match symbol {
            "C" => 4u8,
            "O" => 2u8,
            _ => panic!("test covers C and O"),
        };
        let mut bytes = symbol.as_bytes().to_vec();
        bytes.extend_from_slice(&[0x7C, 8, 0, 0, h]);
        (fnv1a64(&bytes) % nbits) as usize
    }

    #[test]
    fn radius_zero_matches_hand_hash() {
        let c = parse_smiles("C").unwrap();
        let o = parse_smiles("O").unwrap();
        let fc = morgan_fingerprint(&c, 0, 2048).unwrap();
        let fo = morgan_fingerprint(&o, 0, 2048).unwrap();
        assert_eq!(fc.popcount(), 1);
        assert_eq!(fo.popcount(), 1);
        assert!(fc.get(single_atom_bit("C", 2048)));
        assert!(fo.get(single_atom_bit("O", 2048)));
        assert_ne!(fc, fo);
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = Rng::from_seed(7);
        for smi in ["CC(C)CO", "C1CC1C(=O)N", "ClC(F)C(Br)CS"] {
            let mol = parse_smiles(smi).unwrap();
            let base = morgan_fingerprint(&mol, 2, 512).unwrap();
            let n = mol.atom_count();
            for _ in 0..10 {
                let mut perm: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut perm);
                let mut permuted = Molecule::new();
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&i| perm[i]);
                for &old in &order {
                    let a = mol.atom(old);
                    permuted.add_atom(a.element, a.charge);
                }
                for bd in mol.bonds() {
                    permuted.add_bond(perm[bd.a], perm[bd.b], bd.order).unwrap();
                }
                assert_eq!(morgan_fingerprint(&permuted, 2, 512).unwrap(), base, "{smi}");
            }
        }
    }

    #[test]
    fn tanimoto_basics() {
        let mut a = Fingerprint::empty(64);
        let mut b = Fingerprint::empty(64);
        a.set(1);
        a.set(2);
        b.set(1);
        b.set(2);
        assert_eq!(tanimoto(&a, &b).unwrap(), 1.0);
        let mut c = Fingerprint::empty(64);
        c.set(10);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        // |and| = 2, |or| = 4 -> 0.5
        let mut d = Fingerprint::empty(64);
        d.set(1);
        d.set(2);
        d.set(3);
        let mut e = Fingerprint::empty(64);
        e.set(1);
        e.set(2);
        e.set(4);
        assert_eq!(tanimoto(&d, &e).unwrap(), 0.5);
        // both empty -> 1
        let z1 = Fingerprint::empty(64);
        let z2 = Fingerprint::empty(64);
        assert_eq!(tanimoto(&z1, &z2).unwrap(), 1.0);
    }

    #[test]
    fn width_mismatch_errors() {
        let a = Fingerprint::empty(64);
        let b = Fingerprint::empty(128);
        assert_eq!(tanimoto(&a, &b), Err(FpError::WidthMismatch(64, 128)));
    }

    #[test]
    fn distance_properties() {
        let cfg = FpConfig::default();
        let a = parse_smiles("CCO").unwrap();
        let b = parse_smiles("CCN").unwrap();
        assert_eq!(distance(&a, &a, &cfg).unwrap(), 0.0);
        let dab = distance(&a, &b, &cfg).unwrap();
        let dba = distance(&b, &a, &cfg).unwrap();
        assert_eq!(dab, dba);
        assert!((0.0..=1.0).contains(&dab));
    }

    /// Distance for CCO vs CCN from an independently enumerated bit list.
    #[test]
    fn cco_ccn_distance_matches_enumeration() {
        // Round-0/1/2 invariants computed by a test-local reimplementation
        // that walks atoms explicitly instead of reusing atom_invariants.
        fn invariants(smi: &str, radius: u32) -> Vec<u64> {
            let mol = parse_smiles(smi).unwrap();
            let adj = mol.adjacency();
            let n = mol.atom_count();
            let mut out = Vec::new();
            let mut cur = Vec::new();
            for i in 0..n {
                let a = mol.atom(i);
                let mut bytes = a.element.symbol().as_bytes().to_vec();
                bytes.push(0x7C);
                bytes.push((a.charge as i16 + 8) as u8);
                bytes.push(adj[i].len() as u8);
                bytes.push(mol.bond_order_sum(i));
                bytes.push(implicit_hydrogens(&mol, i));
                cur.push(fnv1a64(&bytes));
            }
            out.extend(cur.iter().copied());
            for _ in 0..radius {
                let mut next = Vec::new();
                for i in 0..n {
                    let mut pairs: Vec<(u8, u64)> =
                        adj[i].iter().map(|&(w, o)| (o, cur[w])).collect();
                    pairs.sort();
                    let mut bytes = cur[i].to_le_bytes().to_vec();
                    for (o, inv) in pairs {
                        bytes.push(o);
                        bytes.extend_from_slice(&inv.to_le_bytes());
                    }
                    next.push(fnv1a64(&bytes));
                }
                out.extend(next.iter().copied());
                cur = next;
            }
            out
        }
        let nbits = 2048u64;
        let bits = |smi: &str| -> std::collections::BTreeSet<usize> {
            invariants(smi, 2)
                .into_iter()
                .map(|h| (h % nbits) as usize)
                .collect()
        };
        let a = bits("CCO");
        let b = bits("CCN");
        let inter = a.intersection(&b).count() as f32;
        let union = a.union(&b).count() as f32;
        let expected = 1.0 - inter / union;

        let cfg = FpConfig::default();
        let got = distance(
            &parse_smiles("CCO").unwrap(),
            &parse_smiles("CCN").unwrap(),
            &cfg,
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-7, "{got} vs {expected}");
    }
}
