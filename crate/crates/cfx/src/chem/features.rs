//! Graph featurization for the neural models.
//!
//! Node features: one-hot element | one-hot charge bucket {-1, 0, +1} |
//! scaled degree. Edge features: one-hot bond order. The element set is
//! per-run configuration.

use serde::{Deserialize, Serialize};

use super::{ChemError, Element, Molecule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub elements: Vec<Element>,
}

impl FeaturizeConfig {
    /// Default nine-element set: C, N, O, S, P, F, Cl, Br, I.
    pub fn default_set() -> Self {
        FeaturizeConfig {
            elements: vec![
                Element::C,
                Element::N,
                Element::O,
                Element::S,
                Element::P,
                Element::F,
                Element::Cl,
                Element::Br,
                Element::I,
            ],
        }
    }

    pub fn element_index(&self, el: Element) -> Option<usize> {
        self.elements.iter().position(|&e| e == el)
    }

    /// Node feature width: |elements| + 3 charge buckets + 1 degree slot.
    pub fn node_width(&self) -> usize {
        self.elements.len() + 3 + 1
    }

    pub fn contains(&self, el: Element) -> bool {
        self.element_index(el).is_some()
    }
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self::default_set()
    }
}

/// One node-feature row; degree is scaled by 1/4.
pub fn atom_feature_row(
    element: Element,
    charge: i8,
    degree: usize,
    cfg: &FeaturizeConfig,
) -> Result<Vec<f32>, ChemError> {
    let Some(ei) = cfg.element_index(element) else {
        return Err(ChemError::ElementOutsideConfig(element.symbol().to_string()));
    };
    let mut row = vec![0.0f32; cfg.node_width()];
    row[ei] = 1.0;
    let bucket = (charge.clamp(-1, 1) + 1) as usize;
    row[cfg.elements.len() + bucket] = 1.0;
    row[cfg.elements.len() + 3] = degree as f32 / 4.0;
    Ok(row)
}

#[derive(Debug, Clone)]
pub struct MolFeatures {
    /// [n_atoms, node_width]
    pub nodes: Tensor,
    /// Undirected bond list (i, j, order).
    pub edges: Vec<(usize, usize, u8)>,
    /// [n_bonds, 3] one-hot bond order, aligned with `edges`.
    pub edge_feats: Tensor,
}

pub fn featurize(mol: &Molecule, cfg: &FeaturizeConfig) -> Result<MolFeatures, ChemError> {
    let n = mol.atom_count();
    let w = cfg.node_width();
    let mut nodes = Vec::with_capacity(n * w);
    for i in 0..n {
        let atom = mol.atom(i);
        nodes.extend(atom_feature_row(atom.element, atom.charge, mol.degree(i), cfg)?);
    }
    let edges: Vec<(usize, usize, u8)> = mol.bonds().iter().map(|b| (b.a, b.b, b.order)).collect();
    let mut edge_feats = Vec::with_capacity(edges.len() * 3);
    for &(_, _, order) in &edges {
        let mut row = [0.0f32; 3];
        row[(order - 1) as usize] = 1.0;
        edge_feats.extend_from_slice(&row);
    }
    Ok(MolFeatures {
        nodes: Tensor::new(vec![n, w], nodes).expect("node feature shape"),
        edge_feats: Tensor::new(vec![edges.len(), 3], edge_feats).expect("edge feature shape"),
        edges,
    })
}
