//! Bundled synthetic dataset generator.
//!
//! Produces random valid molecules labeled by a structural rule: label 1 iff
//! the molecule contains a nitrogen-oxygen bond. The generator balances the
//! classes and dedupes by canonical key, so the acceptance runs need no
//! external downloads.

use std::collections::HashSet;
use std::path::Path;

use crate::chem::{canonical_key, max_allowed_valence, Element, Molecule};
use crate::Rng;

/// Label rule: 1 iff any bond joins N and O.
pub fn label_rule(mol: &Molecule) -> u8 {
    for bd in mol.bonds() {
        let a = mol.atom(bd.a).element;
        let b = mol.atom(bd.b).element;
        if (a == Element::N && b == Element::O) || (a == Element::O && b == Element::N) {
            return 1;
        }
    }
    0
}

fn free_valence(mol: &Molecule, i: usize) -> u8 {
    let a = mol.atom(i);
    max_allowed_valence(a.element, a.charge)
        .map(|cap| cap.saturating_sub(mol.bond_order_sum(i)))
        .unwrap_or(0)
}

fn random_element(rng: &mut Rng) -> Element {
    // Strongly C-heavy palette: shared carbon scaffolding keeps molecules
    // within fingerprint reach of each other; halogens stay rare leaves.
    let weights = [
        (Element::C, 30u32),
        (Element::N, 4),
        (Element::O, 4),
        (Element::S, 1),
        (Element::F, 1),
        (Element::Cl, 1),
    ];
    let total: u32 = weights.iter().map(|&(_, w)| w).sum();
    let mut pick = (rng.next_u64() % total as u64) as u32;
    for &(el, w) in &weights {
        if pick < w {
            return el;
        }
        pick -= w;
    }
    Element::C
}

/// Grow one random molecule of `size` heavy atoms; `with_motif` splices in an
/// N-O pair.
fn grow(size: usize, with_motif: bool, rng: &mut Rng) -> Option<Molecule> {
    let mut mol = Molecule::new();
    // Carbon seed: keeps every molecule growable.
    mol.add_atom(Element::C, 0);
    while mol.atom_count() < size {
        // Prefer chain growth (attach to the newest open atom), sometimes
        // branch off a random open atom.
        let open: Vec<usize> = (0..mol.atom_count())
            .filter(|&i| free_valence(&mol, i) >= 1)
            .collect();
        if open.is_empty() {
            break;
        }
        let u = if rng.uniform() < 0.65 {
            *open.last().expect("non-empty")
        } else {
            open[rng.index(open.len())]
        };
        let el = random_element(rng);
        let el_cap = max_allowed_valence(el, 0).unwrap_or(1);
        // Mostly single bonds; occasional doubles and rare triples.
        let roll = rng.uniform();
        let order = if roll < 0.9 {
            1
        } else if roll < 0.99 {
            2
        } else {
            3
        };
        let order = order.min(free_valence(&mol, u)).min(el_cap).max(1);
        if free_valence(&mol, u) < order {
            continue;
        }
        let v = mol.add_atom(el, 0);
        mol.add_bond(u, v, order).ok()?;
    }
    // Occasional ring closure.
    if rng.uniform() < 0.4 {
        let n = mol.atom_count();
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| {
                mol.bond_between(u, v).is_none()
                    && free_valence(&mol, u) >= 1
                    && free_valence(&mol, v) >= 1
            })
            .collect();
        if !candidates.is_empty() {
            let (u, v) = candidates[rng.index(candidates.len())];
            mol.add_bond(u, v, 1).ok()?;
        }
    }
    if with_motif {
        // Find or create an N with room, then bond a fresh O to it.
        let open_n: Vec<usize> = (0..mol.atom_count())
            .filter(|&i| mol.atom(i).element == Element::N && free_valence(&mol, i) >= 1)
            .collect();
        let n_idx = if let Some(&i) = open_n.first() {
            i
        } else {
            let hosts: Vec<usize> = (0..mol.atom_count())
                .filter(|&i| free_valence(&mol, i) >= 1)
                .collect();
            if hosts.is_empty() {
                return None;
            }
            let host = hosts[rng.index(hosts.len())];
            let i = mol.add_atom(Element::N, 0);
            mol.add_bond(host, i, 1).ok()?;
            i
        };
        let o = mol.add_atom(Element::O, 0);
        mol.add_bond(n_idx, o, 1).ok()?;
    }
    if mol.is_valid() {
        Some(mol)
    } else {
        None
    }
}

/// Generate `count` labeled molecules, deduplicated, with roughly 18%
/// positives: the undesirable (motif-free) class dominates, so flipping the
/// prediction takes directed search rather than luck.
pub fn generate(count: usize, seed: u64) -> Vec<(Molecule, u8)> {
    let mut rng = Rng::stream(seed, "toydata");
    let mut seen = HashSet::new();
    let mut out: Vec<(Molecule, u8)> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < count * 200 {
        attempts += 1;
        let want_positive = out.len() % 50 < 9;
        let size = 9 + rng.index(8); // 9..=16 heavy atoms
        let Some(mol) = grow(size, want_positive, &mut rng) else {
            continue;
        };
        let label = label_rule(&mol);
        if (label == 1) != want_positive {
            continue;
        }
        let Ok(key) = canonical_key(&mol) else {
            continue;
        };
        if !seen.insert(key) {
            continue;
        }
        out.push((mol, label));
    }
    out
}

pub fn write_csv(path: &Path, rows: &[(Molecule, u8)]) -> std::io::Result<()> {
    let mut text = String::from("smiles,label\n");
    for (mol, label) in rows {
        let smi = canonical_key(mol).expect("generated molecules are connected");
        text.push_str(&format!("{smi},{label}\n"));
    }
    std::fs::write(path, text)
}
