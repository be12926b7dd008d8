//! Valence-based validity oracle.
//!
//! An atom is valid when its total bond order fits one of the allowed
//! valences for its (element, charge) pair; implicit hydrogens fill up to the
//! smallest allowed valence. A molecule is valid when every atom is valid and
//! the graph is connected (a counterfactual must be a single species).

use super::{Element, Molecule};

/// Allowed total valences per (element, charge). Charge handling is limited
/// to N+/P+ (+1 to each valence) and O-/S- (-1); any other charged atom is
/// invalid.
pub fn allowed_valences(element: Element, charge: i8) -> Option<&'static [u8]> {
    use Element::*;
    match (element, charge) {
        (C, 0) => Some(&[4]),
        (N, 0) => Some(&[3]),
        (O, 0) => Some(&[2]),
        (F, 0) | (Cl, 0) | (Br, 0) | (I, 0) => Some(&[1]),
        (S, 0) => Some(&[2, 4, 6]),
        (P, 0) => Some(&[3, 5]),
        (B, 0) => Some(&[3]),
        (N, 1) => Some(&[4]),
        (P, 1) => Some(&[4, 6]),
        (O, -1) => Some(&[1]),
        (S, -1) => Some(&[1, 3, 5]),
        _ => None,
    }
}

pub fn max_allowed_valence(element: Element, charge: i8) -> Option<u8> {
    allowed_valences(element, charge).map(|vs| *vs.last().expect("non-empty valence set"))
}

/// Implicit hydrogens: smallest allowed valence >= bond-order sum, minus the
/// sum. Zero when the atom is over-valence or carries an unsupported charge.
pub fn implicit_hydrogens(mol: &Molecule, i: usize) -> u8 {
    let atom = mol.atom(i);
    let sum = mol.bond_order_sum(i);
    match allowed_valences(atom.element, atom.charge) {
        Some(vs) => vs
            .iter()
            .copied()
            .find(|&v| v >= sum)
            .map(|v| v - sum)
            .unwrap_or(0),
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub atom: usize,
    pub rule: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

pub fn check_validity(mol: &Molecule) -> ValidityReport {
    let mut violations = Vec::new();
    if mol.atom_count() == 0 {
        violations.push(Violation {
            atom: 0,
            rule: "empty",
            detail: "molecule has no atoms".into(),
        });
        return ValidityReport {
            valid: false,
            violations,
        };
    }
    for i in 0..mol.atom_count() {
        let atom = mol.atom(i);
        match max_allowed_valence(atom.element, atom.charge) {
            None => violations.push(Violation {
                atom: i,
                rule: "charge",
                detail: format!("{}{:+} is not a supported charged atom", atom.element, atom.charge),
            }),
            Some(max) => {
                let sum = mol.bond_order_sum(i);
                if sum > max {
                    violations.push(Violation {
                        atom: i,
                        rule: "valence",
                        detail: format!(
                            "{} has bond-order sum {sum}, max allowed {max}",
                            atom.element
                        ),
                    });
                }
            }
        }
    }
    if !mol.is_connected() {
        let second = mol.components().get(1).and_then(|c| c.first()).copied();
        violations.push(Violation {
            atom: second.unwrap_or(0),
            rule: "connectivity",
            detail: format!("{} components", mol.components().len()),
        });
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

impl ValidityReport {
    pub fn first_rule(&self) -> Option<&'static str> {
        self.violations.first().map(|v| v.rule)
    }
}

impl Molecule {
    /// The indicator used by the principle rewards.
    pub fn is_valid(&self) -> bool {
        check_validity(self).valid
    }

    pub fn validity(&self) -> ValidityReport {
        check_validity(self)
    }
}
