//! Dataset ingestion: CSV parsing, rare-atom filtering, deduplication, and
//! seeded splitting into a self-contained bundle.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{canonical_key, parse_smiles, ChemError, Element, Molecule};
use crate::config::RunConfig;
use crate::Rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{skipped} of {total} rows unparseable (over 10%)")]
    TooManySkips { skipped: usize, total: usize },
    #[error("no usable molecules after filtering")]
    Empty,
    #[error("bundle file: {0}")]
    Format(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub split_seed: u64,
    pub atom_threshold: u64,
    pub rows_total: usize,
    pub rows_skipped: usize,
    pub dropped_rare_atoms: usize,
    pub dropped_duplicates: usize,
    pub explain_class: u8,
    pub config_hash: String,
}

/// Train/valid/test splits with labels, stored as canonical SMILES.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub provenance: Provenance,
    pub train: Vec<(String, u8)>,
    pub valid: Vec<(String, u8)>,
    pub test: Vec<(String, u8)>,
}

impl DatasetBundle {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let json = serde_json::to_string_pretty(self).expect("bundle serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Format(e.to_string()))
    }

    pub fn split(&self, name: &str) -> &[(String, u8)] {
        match name {
            "train" => &self.train,
            "valid" => &self.valid,
            _ => &self.test,
        }
    }

    pub fn molecules(&self, name: &str) -> Result<Vec<(Molecule, u8)>, ChemError> {
        self.split(name)
            .iter()
            .map(|(smi, y)| Ok((parse_smiles(smi)?, *y)))
            .collect()
    }
}

/// Parse `smiles,label` rows. Unparseable rows are skipped and counted; more
/// than 10% skipped is a hard error.
pub fn read_csv(path: &Path) -> Result<(Vec<(Molecule, u8)>, usize, usize), DatasetError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        // Optional header.
        if i == 0 && line.to_ascii_lowercase().starts_with("smiles") {
            continue;
        }
        total += 1;
        let parsed = line.split_once(',').and_then(|(smi, label)| {
            let label = label.trim().parse::<u8>().ok().filter(|&l| l <= 1)?;
            parse_smiles(smi.trim()).ok().map(|m| (m, label))
        });
        match parsed {
            Some(row) => rows.push(row),
            None => skipped += 1,
        }
    }
    if total > 0 && skipped * 10 > total {
        return Err(DatasetError::TooManySkips { skipped, total });
    }
    Ok((rows, skipped, total))
}

/// Full preparation: parse, drop molecules containing atom types rarer than
/// the threshold, dedupe by canonical key, shuffle with the split seed, and
/// cut 0.8 / 0.1 / 0.1.
pub fn prep(csv_path: &Path, config: &RunConfig) -> Result<DatasetBundle, DatasetError> {
    let (rows, skipped, total) = read_csv(csv_path)?;

    // Atom-type occurrence counts over the whole corpus.
    let mut counts: BTreeMap<Element, u64> = BTreeMap::new();
    for (mol, _) in &rows {
        for i in 0..mol.atom_count() {
            *counts.entry(mol.atom(i).element).or_insert(0) += 1;
        }
    }
    let rare: HashSet<Element> = counts
        .iter()
        .filter(|(_, &c)| c < config.min_atom_count)
        .map(|(&e, _)| e)
        .collect();

    let mut dropped_rare = 0usize;
    let mut dropped_dup = 0usize;
    let mut seen = HashSet::new();
    let mut kept: Vec<(String, u8)> = Vec::new();
    for (mol, label) in &rows {
        let has_rare = (0..mol.atom_count()).any(|i| rare.contains(&mol.atom(i).element));
        if has_rare {
            dropped_rare += 1;
            continue;
        }
        let key = canonical_key(mol)?;
        if !seen.insert(key.clone()) {
            dropped_dup += 1;
            continue;
        }
        kept.push((key, *label));
    }
    if kept.is_empty() {
        return Err(DatasetError::Empty);
    }

    let mut rng = Rng::stream(config.seed, "split");
    rng.shuffle(&mut kept);
    let n = kept.len();
    let n_train = (n as f64 * 0.8).floor() as usize;
    let n_valid = (n as f64 * 0.1).floor() as usize;
    let train = kept[..n_train].to_vec();
    let valid = kept[n_train..n_train + n_valid].to_vec();
    let test = kept[n_train + n_valid..].to_vec();

    Ok(DatasetBundle {
        provenance: Provenance {
            source: csv_path.display().to_string(),
            split_seed: config.seed,
            atom_threshold: config.min_atom_count,
            rows_total: total,
            rows_skipped: skipped,
            dropped_rare_atoms: dropped_rare,
            dropped_duplicates: dropped_dup,
            explain_class: config.explain_class,
            config_hash: config.hash_hex(),
        },
        train,
        valid,
        test,
    })
}
