//! Structural keys for deduplication.
//!
//! Atoms are ranked by iterative neighborhood refinement starting from
//! (element, charge, degree, bond-order multiset); remaining ties are broken
//! by individualizing each tied atom in turn and keeping the
//! lexicographically smallest written SMILES, so the key does not depend on
//! input atom order.

use super::smiles::write_smiles_ordered;
use super::{ChemError, Molecule};

/// Refinement ranks (0 = first); equal ranks mean the refinement could not
/// distinguish the atoms.
pub fn canonical_ranks(mol: &Molecule) -> Vec<usize> {
    let n = mol.atom_count();
    let adj = mol.adjacency();

    // Initial invariant.
    let mut keys: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
        .map(|i| {
            let atom = mol.atom(i);
            let mut orders: Vec<u8> = adj[i].iter().map(|&(_, o)| o).collect();
            orders.sort_unstable();
            let base = initial_code(atom.element as usize, atom.charge, adj[i].len(), &orders);
            (base, Vec::new())
        })
        .collect();
    let mut ranks = assign_ranks(&keys);

    loop {
        let class_count = count_classes(&ranks);
        for i in 0..n {
            let mut nbr: Vec<(u8, usize)> = adj[i].iter().map(|&(w, o)| (o, ranks[w])).collect();
            nbr.sort_unstable();
            keys[i] = (ranks[i], nbr);
        }
        let new_ranks = assign_ranks(&keys);
        if count_classes(&new_ranks) == class_count {
            return new_ranks;
        }
        ranks = new_ranks;
    }
}

fn initial_code(element: usize, charge: i8, degree: usize, orders: &[u8]) -> usize {
    // Pack into a comparable integer: element, charge bucket, degree, then the
    // (short) sorted bond-order list base-4.
    let mut code = element;
    code = code * 8 + (charge as isize + 4) as usize;
    code = code * 16 + degree.min(15);
    for &o in orders.iter().take(8) {
        code = code * 4 + o as usize;
    }
    code
}

fn assign_ranks(keys: &[(usize, Vec<(u8, usize)>)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0usize; keys.len()];
    let mut rank = 0;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            rank = w;
        }
        ranks[order[w]] = rank;
    }
    ranks
}

fn count_classes(ranks: &[usize]) -> usize {
    let mut distinct: Vec<usize> = ranks.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.len()
}

/// Canonical SMILES key: equal for isomorphic molecules produced by this
/// crate's own pipelines. Errors as [`write_smiles`](super::write_smiles)
/// (empty / disconnected input).
pub fn canonical_key(mol: &Molecule) -> Result<String, ChemError> {
    if mol.atom_count() == 0 {
        return Err(ChemError::Empty);
    }
    if !mol.is_connected() {
        return Err(ChemError::Disconnected);
    }
    let ranks = canonical_ranks(mol);
    canonical_from(mol, ranks, 0)
}

fn canonical_from(mol: &Molecule, ranks: Vec<usize>, depth: usize) -> Result<String, ChemError> {
    let n = mol.atom_count();
    if count_classes(&ranks) == n || depth > n {
        return write_smiles_ordered(mol, &ranks);
    }
    // Smallest tied class; individualize each member and keep the smallest
    // resulting string. Members of a genuinely symmetric orbit all yield the
    // same string, so this stays cheap on molecules.
    let tied_rank = (0..n)
        .filter(|&i| ranks.iter().filter(|&&r| r == ranks[i]).count() > 1)
        .map(|i| ranks[i])
        .min()
        .expect("ties exist");
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied_rank).collect();

    let adj = mol.adjacency();
    let mut best: Option<String> = None;
    for &m in &members {
        let mut keys: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
            .map(|i| {
                let bump = if i == m { 0 } else { 1 };
                (ranks[i] * 2 + bump, Vec::new())
            })
            .collect();
        let mut r = assign_ranks(&keys);
        // Re-refine after the split.
        loop {
            let classes = count_classes(&r);
            for i in 0..n {
                let mut nbr: Vec<(u8, usize)> = adj[i].iter().map(|&(w, o)| (o, r[w])).collect();
                nbr.sort_unstable();
                keys[i] = (r[i], nbr);
            }
            let nr = assign_ranks(&keys);
            if count_classes(&nr) == classes {
                break;
            }
            r = nr;
        }
        let s = canonical_from(mol, r, depth + 1)?;
        best = Some(match best {
            None => s,
            Some(b) if s < b => s,
            Some(b) => b,
        });
    }
    Ok(best.expect("at least one member"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::Rng;

    #[test]
    fn same_graph_same_key() {
        let a = parse_smiles("CCO").unwrap();
        let b = parse_smiles("OCC").unwrap();
        assert_eq!(canonical_key(&a).unwrap(), canonical_key(&b).unwrap());
    }

    #[test]
    fn different_graphs_differ() {
        let a = parse_smiles("CCO").unwrap();
        let b = parse_smiles("CCN").unwrap();
        assert_ne!(canonical_key(&a).unwrap(), canonical_key(&b).unwrap());
    }

    #[test]
    fn bond_orders_distinguish() {
        let a = parse_smiles("C=CC").unwrap();
        let b = parse_smiles("CC=C").unwrap();
        let c = parse_smiles("CCC").unwrap();
        assert_eq!(canonical_key(&a).unwrap(), canonical_key(&b).unwrap());
        assert_ne!(canonical_key(&a).unwrap(), canonical_key(&c).unwrap());
    }

    fn permute(mol: &Molecule, perm: &[usize]) -> Molecule {
        // perm[i] = new index of old atom i
        let mut m = Molecule::new();
        let mut order: Vec<usize> = (0..mol.atom_count()).collect();
        order.sort_by_key(|&i| perm[i]);
        for &old in &order {
            let a = mol.atom(old);
            m.add_atom(a.element, a.charge);
        }
        for bd in mol.bonds() {
            m.add_bond(perm[bd.a], perm[bd.b], bd.order).unwrap();
        }
        m
    }

    #[test]
    fn key_is_permutation_invariant() {
        let samples = [
            "CCO",
            "C1CC1",
            "CC(C)C(=O)O",
            "C1CCC1N",
            "ClCC(Br)CF",
            "O=C1CCC1",
            "C1CC1C1CC1",
            "CC(C)(C)C",
            "N#CCO",
            "[N+]1(C)CC1",
        ];
        let mut rng = Rng::from_seed(2024);
        for smi in samples {
            let mol = parse_smiles(smi).unwrap();
            let key = canonical_key(&mol).unwrap();
            let n = mol.atom_count();
            for _ in 0..20 {
                let mut perm: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut perm);
                let permuted = permute(&mol, &perm);
                assert_eq!(canonical_key(&permuted).unwrap(), key, "molecule {smi}");
            }
        }
    }

    #[test]
    fn symmetric_ring_is_stable() {
        // Fully symmetric: all atoms one orbit.
        let m = parse_smiles("C1CCCCC1").unwrap();
        let key = canonical_key(&m).unwrap();
        assert_eq!(key, canonical_key(&parse_smiles("C1CCCCC1").unwrap()).unwrap());
        assert!(!key.is_empty());
    }
}
