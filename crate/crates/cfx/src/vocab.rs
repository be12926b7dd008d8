//! Principal-subgraph vocabulary: mining and molecule decomposition.
//!
//! Mining starts from single atoms and repeatedly merges the globally most
//! frequent adjacent fragment pair across the corpus into a new vocabulary
//! entry (ties broken by lexicographically smallest canonical key) until the
//! target size is reached. Decomposition greedily matches the largest
//! fragments first and partitions a molecule into non-overlapping fragments
//! plus the inter-fragment bonds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{canonical_key, parse_smiles, ChemError, Element, Molecule};

/// Matching cap: principal subgraphs are small by construction.
pub const MAX_FRAGMENT_ATOMS: usize = 10;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the atom-type count {types}")]
    TargetTooSmall { target: usize, types: usize },
    #[error("atom {element}{charge:+} has no vocabulary entry")]
    UnmatchedAtom { element: Element, charge: i8 },
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocabulary file: {0}")]
    Format(String),
}

#[derive(Debug, Clone)]
pub struct VocabEntry {
    pub pattern: Molecule,
    pub smiles: String,
    pub frequency: u64,
    pub id: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FragmentVocab {
    entries: Vec<VocabEntry>,
    by_key: HashMap<String, usize>,
    single_atom: HashMap<(Element, i8), usize>,
}

impl FragmentVocab {
    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Token id reserved for end-of-sequence.
    pub fn stop_id(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, id: usize) -> &VocabEntry {
        &self.entries[id]
    }

    pub fn id_by_key(&self, key: &str) -> Option<usize> {
        self.by_key.get(key).copied()
    }

    pub fn single_atom_id(&self, element: Element, charge: i8) -> Option<usize> {
        self.single_atom.get(&(element, charge)).copied()
    }

    fn push(&mut self, pattern: Molecule, smiles: String, frequency: u64) -> usize {
        let id = self.entries.len();
        if pattern.atom_count() == 1 {
            let a = pattern.atom(0);
            self.single_atom.insert((a.element, a.charge), id);
        }
        self.by_key.insert(smiles.clone(), id);
        self.entries.push(VocabEntry {
            pattern,
            smiles,
            frequency,
            id,
        });
        id
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        #[derive(Serialize)]
        struct Row<'a> {
            smiles: &'a str,
            frequency: u64,
            id: usize,
        }
        let rows: Vec<Row> = self
            .entries
            .iter()
            .map(|e| Row {
                smiles: &e.smiles,
                frequency: e.frequency,
                id: e.id,
            })
            .collect();
        let json = serde_json::to_string_pretty(&rows).expect("vocab serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        #[derive(Deserialize)]
        struct Row {
            smiles: String,
            frequency: u64,
            id: usize,
        }
        let text = std::fs::read_to_string(path)?;
        let rows: Vec<Row> =
            serde_json::from_str(&text).map_err(|e| VocabError::Format(e.to_string()))?;
        let mut vocab = FragmentVocab::default();
        for (i, row) in rows.iter().enumerate() {
            if row.id != i {
                return Err(VocabError::Format(format!(
                    "entry {i} has id {}, expected sequential ids",
                    row.id
                )));
            }
            let pattern = parse_smiles(&row.smiles)?;
            vocab.push(pattern, row.smiles.clone(), row.frequency);
        }
        Ok(vocab)
    }
}

// ---- mining ----

/// Per-molecule fragment assignment during mining.
struct MiningState {
    /// fragment id per atom
    frag_of: Vec<usize>,
    /// fragment id -> sorted atom list (None once merged away)
    fragments: Vec<Option<Vec<usize>>>,
}

impl MiningState {
    fn new(n: usize) -> Self {
        MiningState {
            frag_of: (0..n).collect(),
            fragments: (0..n).map(|i| Some(vec![i])).collect(),
        }
    }

    /// Adjacent fragment pairs (fa, fb with fa < fb), each listed once,
    /// ordered by the fragments' smallest atom indices.
    fn adjacent_pairs(&self, mol: &Molecule) -> Vec<(usize, usize)> {
        let mut seen = HashSet::new();
        let mut pairs = Vec::new();
        for bd in mol.bonds() {
            let fa = self.frag_of[bd.a];
            let fb = self.frag_of[bd.b];
            if fa != fb {
                let key = (fa.min(fb), fa.max(fb));
                if seen.insert(key) {
                    pairs.push(key);
                }
            }
        }
        pairs.sort_by_key(|&(fa, fb)| {
            (
                self.fragments[fa].as_ref().map(|a| a[0]),
                self.fragments[fb].as_ref().map(|a| a[0]),
            )
        });
        pairs
    }

    fn union_atoms(&self, fa: usize, fb: usize) -> Vec<usize> {
        let mut atoms = self.fragments[fa].clone().expect("live fragment");
        atoms.extend(self.fragments[fb].as_ref().expect("live fragment"));
        atoms.sort_unstable();
        atoms
    }

    fn merge(&mut self, fa: usize, fb: usize) {
        let atoms = self.union_atoms(fa, fb);
        let id = self.fragments.len();
        for &a in &atoms {
            self.frag_of[a] = id;
        }
        self.fragments[fa] = None;
        self.fragments[fb] = None;
        self.fragments.push(Some(atoms));
    }
}

/// Mine a principal-subgraph vocabulary of `target_size` entries.
pub fn mine_vocab(corpus: &[Molecule], target_size: usize) -> Result<FragmentVocab, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    // Single-atom entries first, ordered by canonical key; frequency = atom
    // occurrences.
    let mut atom_counts: BTreeMap<String, (Molecule, u64)> = BTreeMap::new();
    for mol in corpus {
        for i in 0..mol.atom_count() {
            let a = mol.atom(i);
            let single = Molecule::single(a.element, a.charge);
            let key = canonical_key(&single)?;
            atom_counts.entry(key).or_insert_with(|| (single, 0)).1 += 1;
        }
    }
    if target_size < atom_counts.len() {
        return Err(VocabError::TargetTooSmall {
            target: target_size,
            types: atom_counts.len(),
        });
    }
    let mut vocab = FragmentVocab::default();
    for (key, (pattern, count)) in atom_counts {
        vocab.push(pattern, key, count);
    }

    let mut states: Vec<MiningState> = corpus
        .iter()
        .map(|m| MiningState::new(m.atom_count()))
        .collect();
    // Induced-subgraph keys are a function of the atom set alone; cache them
    // per molecule across rounds.
    let mut key_cache: Vec<HashMap<Vec<usize>, String>> =
        corpus.iter().map(|_| HashMap::new()).collect();

    while vocab.len() < target_size {
        // Count adjacent pair types across the corpus.
        let mut counts: BTreeMap<String, (u64, Molecule)> = BTreeMap::new();
        for (mi, mol) in corpus.iter().enumerate() {
            for (fa, fb) in states[mi].adjacent_pairs(mol) {
                let atoms = states[mi].union_atoms(fa, fb);
                if atoms.len() > MAX_FRAGMENT_ATOMS {
                    continue;
                }
                let key = match key_cache[mi].get(&atoms) {
                    Some(k) => k.clone(),
                    None => {
                        let k = canonical_key(&mol.induced_subgraph(&atoms))?;
                        key_cache[mi].insert(atoms.clone(), k.clone());
                        k
                    }
                };
                let entry = counts
                    .entry(key)
                    .or_insert_with(|| (0, mol.induced_subgraph(&atoms)));
                entry.0 += 1;
            }
        }
        if counts.is_empty() {
            break;
        }
        // Most frequent; ties go to the lexicographically smallest key.
        let (best_key, (best_count, best_pattern)) = counts
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.0.cmp(a.0)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .expect("non-empty counts");

        // Merge every non-overlapping occurrence of the chosen pair type.
        for (mi, mol) in corpus.iter().enumerate() {
            let pairs = states[mi].adjacent_pairs(mol);
            let mut consumed: HashSet<usize> = HashSet::new();
            for (fa, fb) in pairs {
                if consumed.contains(&fa) || consumed.contains(&fb) {
                    continue;
                }
                let atoms = states[mi].union_atoms(fa, fb);
                if atoms.len() > MAX_FRAGMENT_ATOMS {
                    continue;
                }
                let key = match key_cache[mi].get(&atoms) {
                    Some(k) => k.clone(),
                    None => {
                        let k = canonical_key(&mol.induced_subgraph(&atoms))?;
                        key_cache[mi].insert(atoms.clone(), k.clone());
                        k
                    }
                };
                if key == best_key {
                    consumed.insert(fa);
                    consumed.insert(fb);
                    states[mi].merge(fa, fb);
                }
            }
        }
        if vocab.id_by_key(&best_key).is_none() {
            vocab.push(best_pattern, best_key, best_count);
        }
    }
    Ok(vocab)
}

// ---- decomposition ----

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub vocab_id: usize,
    /// Molecule atom index per pattern atom: atoms[k] realizes pattern atom k.
    pub atoms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Ordered by smallest contained atom index.
    pub fragments: Vec<Fragment>,
    /// Original bonds whose endpoints lie in different fragments (global
    /// atom indices).
    pub cross_bonds: Vec<(usize, usize, u8)>,
}

impl Decomposition {
    /// Fragment index owning each atom.
    pub fn fragment_of(&self, atom_count: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; atom_count];
        for (fi, frag) in self.fragments.iter().enumerate() {
            for &a in &frag.atoms {
                owner[a] = fi;
            }
        }
        owner
    }

    /// Rebuild the molecule from fragment patterns plus cross bonds.
    pub fn reassemble(&self, original: &Molecule, vocab: &FragmentVocab) -> Molecule {
        let mut mol = Molecule::new();
        for i in 0..original.atom_count() {
            let a = original.atom(i);
            mol.add_atom(a.element, a.charge);
        }
        for frag in &self.fragments {
            let pattern = &vocab.entry(frag.vocab_id).pattern;
            for bd in pattern.bonds() {
                mol.add_bond(frag.atoms[bd.a], frag.atoms[bd.b], bd.order)
                    .expect("fragment bonds are disjoint");
            }
        }
        for &(a, b, o) in &self.cross_bonds {
            mol.add_bond(a, b, o).expect("cross bonds are disjoint");
        }
        mol
    }
}

/// First induced match of `pattern` into `target` over unassigned atoms, in
/// deterministic (ascending-index) order. `map[k]` = target atom realizing
/// pattern atom k.
fn find_induced_match(
    pattern: &Molecule,
    target: &Molecule,
    available: &[bool],
) -> Option<Vec<usize>> {
    let p = pattern.atom_count();
    // Order pattern atoms so each one (after the first) touches an earlier
    // one; fragments are connected so this always succeeds.
    let adj = pattern.adjacency();
    let mut order = vec![0usize];
    let mut in_order = vec![false; p];
    in_order[0] = true;
    while order.len() < p {
        let next = (0..p)
            .find(|&i| !in_order[i] && adj[i].iter().any(|&(w, _)| in_order[w]))
            .or_else(|| (0..p).find(|&i| !in_order[i]))
            .expect("pattern atom remains");
        in_order[next] = true;
        order.push(next);
    }

    let mut map = vec![usize::MAX; p];
    let mut used = vec![false; target.atom_count()];

    #[allow(clippy::too_many_arguments)]
    fn extend(
        pattern: &Molecule,
        target: &Molecule,
        available: &[bool],
        order: &[usize],
        depth: usize,
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
    ) -> bool {
        if depth == order.len() {
            return true;
        }
        let pk = order[depth];
        let pa = pattern.atom(pk);
        'cand: for t in 0..target.atom_count() {
            if used[t] || !available[t] {
                continue;
            }
            let ta = target.atom(t);
            if ta.element != pa.element || ta.charge != pa.charge {
                continue;
            }
            // Induced consistency with every mapped pattern atom.
            for &pj in order.iter().take(depth) {
                if pattern.bond_between(pj, pk) != target.bond_between(map[pj], t) {
                    continue 'cand;
                }
            }
            map[pk] = t;
            used[t] = true;
            if extend(pattern, target, available, order, depth + 1, map, used) {
                return true;
            }
            map[pk] = usize::MAX;
            used[t] = false;
        }
        false
    }

    if extend(pattern, target, available, &order, 0, &mut map, &mut used) {
        Some(map)
    } else {
        None
    }
}

/// Exact graph isomorphism for small molecules (induced match plus equal
/// sizes).
pub fn graph_isomorphic(a: &Molecule, b: &Molecule) -> bool {
    if a.atom_count() != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    if a.atom_count() == 0 {
        return true;
    }
    let available = vec![true; b.atom_count()];
    find_induced_match(a, b, &available).is_some()
}

/// Partition a molecule into vocabulary fragments, largest first (ties:
/// higher frequency, then lower id), with leftovers as single atoms.
pub fn decompose(mol: &Molecule, vocab: &FragmentVocab) -> Result<Decomposition, VocabError> {
    let n = mol.atom_count();
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&x, &y| {
        let ex = vocab.entry(x);
        let ey = vocab.entry(y);
        ey.pattern
            .atom_count()
            .cmp(&ex.pattern.atom_count())
            .then(ey.frequency.cmp(&ex.frequency))
            .then(ex.id.cmp(&ey.id))
    });

    let mut available = vec![true; n];
    let mut fragments = Vec::new();
    for id in order {
        let pattern = &vocab.entry(id).pattern;
        if pattern.atom_count() > n {
            continue;
        }
        while let Some(map) = find_induced_match(pattern, mol, &available) {
            for &a in &map {
                available[a] = false;
            }
            fragments.push(Fragment {
                vocab_id: id,
                atoms: map,
            });
        }
    }
    for a in 0..n {
        if available[a] {
            let atom = mol.atom(a);
            let Some(id) = vocab.single_atom_id(atom.element, atom.charge) else {
                return Err(VocabError::UnmatchedAtom {
                    element: atom.element,
                    charge: atom.charge,
                });
            };
            fragments.push(Fragment {
                vocab_id: id,
                atoms: vec![a],
            });
            available[a] = false;
        }
    }
    fragments.sort_by_key(|f| f.atoms.iter().copied().min().expect("non-empty fragment"));

    let mut owner = vec![usize::MAX; n];
    for (fi, frag) in fragments.iter().enumerate() {
        for &a in &frag.atoms {
            owner[a] = fi;
        }
    }
    let cross_bonds = mol
        .bonds()
        .iter()
        .filter(|bd| owner[bd.a] != owner[bd.b])
        .map(|bd| (bd.a, bd.b, bd.order))
        .collect();

    Ok(Decomposition {
        fragments,
        cross_bonds,
    })
}
