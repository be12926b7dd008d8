//! Molecular graphs and chemical plumbing.
//!
//! A [`Molecule`] is a simple undirected graph of heavy atoms (element +
//! formal charge) and integer-order bonds. Hydrogens are implicit, derived
//! from the valence table in [`validity`]. SMILES input is restricted to the
//! kekulized subset: organic-subset atoms, bracket atoms with charge, bond
//! symbols `- = #`, branches, and ring closures. No aromatic lowercase, no
//! stereo, no isotopes, no dots.

mod canon;
mod features;
mod smiles;
mod validity;

pub use canon::{canonical_key, canonical_ranks};
pub use features::{atom_feature_row, featurize, FeaturizeConfig, MolFeatures};
pub use smiles::{parse_smiles, write_smiles};
pub use validity::{check_validity, implicit_hydrogens, max_allowed_valence, ValidityReport, Violation};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("SMILES parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("bad bond ({i}, {j}): {msg}")]
    BadBond { i: usize, j: usize, msg: String },
    #[error("molecule is empty")]
    Empty,
    #[error("molecule is disconnected")]
    Disconnected,
    #[error("element {0} is outside the configured element set")]
    ElementOutsideConfig(String),
}

/// Heavy atoms supported by the SMILES subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
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
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

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

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
}

/// Undirected bond; endpoints normalized so `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
}

impl Molecule {
    pub fn new() -> Self {
        Molecule::default()
    }

    pub fn add_atom(&mut self, element: Element, charge: i8) -> usize {
        self.atoms.push(Atom { element, charge });
        self.atoms.len() - 1
    }

    pub fn add_bond(&mut self, i: usize, j: usize, order: u8) -> Result<(), ChemError> {
        if i == j {
            return Err(ChemError::BadBond {
                i,
                j,
                msg: "self bond".into(),
            });
        }
        if i >= self.atoms.len() || j >= self.atoms.len() {
            return Err(ChemError::BadBond {
                i,
                j,
                msg: format!("atom index out of range (have {})", self.atoms.len()),
            });
        }
        if !(1..=3).contains(&order) {
            return Err(ChemError::BadBond {
                i,
                j,
                msg: format!("bond order {order} not in 1..=3"),
            });
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if self.bonds.iter().any(|bd| bd.a == a && bd.b == b) {
            return Err(ChemError::BadBond {
                i,
                j,
                msg: "duplicate bond".into(),
            });
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    pub fn atom(&self, i: usize) -> Atom {
        self.atoms[i]
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<u8> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.bonds
            .iter()
            .find(|bd| bd.a == a && bd.b == b)
            .map(|bd| bd.order)
    }

    /// Neighbor lists as (neighbor index, bond order), sorted by index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bd in &self.bonds {
            adj[bd.a].push((bd.b, bd.order));
            adj[bd.b].push((bd.a, bd.order));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, i: usize) -> usize {
        self.bonds.iter().filter(|bd| bd.a == i || bd.b == i).count()
    }

    pub fn bond_order_sum(&self, i: usize) -> u8 {
        self.bonds
            .iter()
            .filter(|bd| bd.a == i || bd.b == i)
            .map(|bd| bd.order)
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.atoms.len()
    }

    /// Connected components as sorted atom-index lists, ordered by smallest
    /// member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut comps = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &(w, _) in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Subgraph induced on `atom_idx`; atom k of the result corresponds to
    /// `atom_idx[k]`.
    pub fn induced_subgraph(&self, atom_idx: &[usize]) -> Molecule {
        let mut sub = Molecule::new();
        let mut map = std::collections::HashMap::new();
        for (k, &i) in atom_idx.iter().enumerate() {
            let at = self.atoms[i];
            sub.add_atom(at.element, at.charge);
            map.insert(i, k);
        }
        for bd in &self.bonds {
            if let (Some(&a), Some(&b)) = (map.get(&bd.a), map.get(&bd.b)) {
                sub.add_bond(a, b, bd.order).expect("induced bond is fresh");
            }
        }
        sub
    }

    // -- mutation helpers for the edit-walk baseline --

    /// Remove an atom and every incident bond, shifting higher indices down.
    pub fn remove_atom(&mut self, i: usize) {
        self.atoms.remove(i);
        self.bonds.retain(|bd| bd.a != i && bd.b != i);
        for bd in &mut self.bonds {
            if bd.a > i {
                bd.a -= 1;
            }
            if bd.b > i {
                bd.b -= 1;
            }
        }
    }

    pub fn remove_bond(&mut self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let before = self.bonds.len();
        self.bonds.retain(|bd| !(bd.a == a && bd.b == b));
        self.bonds.len() != before
    }

    pub fn set_bond_order(&mut self, i: usize, j: usize, order: u8) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        for bd in &mut self.bonds {
            if bd.a == a && bd.b == b {
                bd.order = order;
                return true;
            }
        }
        false
    }

    /// Single-atom molecule shorthand.
    pub fn single(element: Element, charge: i8) -> Molecule {
        let mut m = Molecule::new();
        m.add_atom(element, charge);
        m
    }
}
