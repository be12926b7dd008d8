//! Run configuration: flat key=value files, CLI overrides, and a stable
//! config hash embedded in every output.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::adapter::AdapterConfig;
use crate::chem::{Element, FeaturizeConfig};
use crate::explain::{ScoreParams, SelectionMode};
use crate::fp::{fnv1a64, FpConfig};
use crate::gnn::{GnnConfig, GnnTrainConfig, UpdateForm};
use crate::ppo::AdapterTrainConfig;
use crate::vae::{VaeConfig, VaeTrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {detail}")]
    BadValue { key: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub elements: Vec<Element>,
    pub fp_radius: u32,
    pub fp_nbits: usize,
    pub delta: f32,
    pub alpha: f32,
    pub beta: f32,
    pub latent: usize,
    pub adapter_hidden: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_hidden: usize,
    pub frag_embed: usize,
    pub atom_hidden: usize,
    pub atom_embed: usize,
    pub edge_hidden: usize,
    pub max_fragments: usize,
    pub gnn_hidden: usize,
    pub gnn_layers: usize,
    pub gnn_update: String,
    pub gnn_lr: f32,
    pub gnn_epochs: usize,
    pub gnn_batch: usize,
    pub vae_lr: f32,
    pub vae_epochs: usize,
    pub vae_batch: usize,
    pub vae_free_bits: f32,
    pub adapter_lr: f32,
    pub ppo_clip: f32,
    pub ppo_epochs: usize,
    pub ppo_kl_limit: f32,
    pub updates: usize,
    pub episodes_per_update: usize,
    pub n_samples: usize,
    pub ucb_c: f64,
    pub t_train: usize,
    pub t_infer: usize,
    pub k: usize,
    pub beam: usize,
    pub temperature: f32,
    pub selection_mode: String,
    pub vocab_size: usize,
    pub min_atom_count: u64,
    pub explain_class: u8,
    pub adapter_inputs_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            elements: FeaturizeConfig::default_set().elements,
            fp_radius: 2,
            fp_nbits: 2048,
            delta: 0.87,
            alpha: 1.0,
            beta: 10.0,
            latent: 56,
            adapter_hidden: 400,
            enc_hidden: 64,
            enc_layers: 3,
            dec_hidden: 128,
            frag_embed: 64,
            atom_hidden: 64,
            atom_embed: 32,
            edge_hidden: 64,
            max_fragments: 10,
            gnn_hidden: 64,
            gnn_layers: 3,
            gnn_update: "concat".into(),
            gnn_lr: 1e-3,
            gnn_epochs: 1000,
            gnn_batch: 32,
            vae_lr: 1e-3,
            vae_epochs: 40,
            vae_batch: 16,
            vae_free_bits: 0.1,
            adapter_lr: 1e-5,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            ppo_kl_limit: 0.5,
            updates: 40,
            episodes_per_update: 8,
            n_samples: 4,
            ucb_c: 1.0,
            t_train: 4,
            t_infer: 20,
            k: 10,
            beam: 10,
            temperature: 1.0,
            selection_mode: "set-coverage".into(),
            vocab_size: 200,
            min_atom_count: 50,
            explain_class: 0,
            adapter_inputs_cap: 32,
        }
    }
}

/// Keys in canonical order; `dump` and the config hash follow this list.
const KEYS: [&str; 44] = [
    "seed",
    "elements",
    "fp-radius",
    "fp-nbits",
    "delta",
    "alpha",
    "beta",
    "latent",
    "adapter-hidden",
    "enc-hidden",
    "enc-layers",
    "dec-hidden",
    "frag-embed",
    "atom-hidden",
    "atom-embed",
    "edge-hidden",
    "max-fragments",
    "gnn-hidden",
    "gnn-layers",
    "gnn-update",
    "gnn-lr",
    "gnn-epochs",
    "gnn-batch",
    "vae-lr",
    "vae-epochs",
    "vae-batch",
    "vae-free-bits",
    "adapter-lr",
    "ppo-clip",
    "ppo-epochs",
    "ppo-kl-limit",
    "updates",
    "episodes-per-update",
    "n-samples",
    "ucb-c",
    "t-train",
    "t-infer",
    "k",
    "beam",
    "temperature",
    "selection-mode",
    "vocab-size",
    "min-atom-count",
    "explain-class",
];

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.seed.to_string(),
            "elements" => self
                .elements
                .iter()
                .map(|e| e.symbol())
                .collect::<Vec<_>>()
                .join(","),
            "fp-radius" => self.fp_radius.to_string(),
            "fp-nbits" => self.fp_nbits.to_string(),
            "delta" => self.delta.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "latent" => self.latent.to_string(),
            "adapter-hidden" => self.adapter_hidden.to_string(),
            "enc-hidden" => self.enc_hidden.to_string(),
            "enc-layers" => self.enc_layers.to_string(),
            "dec-hidden" => self.dec_hidden.to_string(),
            "frag-embed" => self.frag_embed.to_string(),
            "atom-hidden" => self.atom_hidden.to_string(),
            "atom-embed" => self.atom_embed.to_string(),
            "edge-hidden" => self.edge_hidden.to_string(),
            "max-fragments" => self.max_fragments.to_string(),
            "gnn-hidden" => self.gnn_hidden.to_string(),
            "gnn-layers" => self.gnn_layers.to_string(),
            "gnn-update" => self.gnn_update.clone(),
            "gnn-lr" => self.gnn_lr.to_string(),
            "gnn-epochs" => self.gnn_epochs.to_string(),
            "gnn-batch" => self.gnn_batch.to_string(),
            "vae-lr" => self.vae_lr.to_string(),
            "vae-epochs" => self.vae_epochs.to_string(),
            "vae-batch" => self.vae_batch.to_string(),
            "vae-free-bits" => self.vae_free_bits.to_string(),
            "adapter-lr" => self.adapter_lr.to_string(),
            "ppo-clip" => self.ppo_clip.to_string(),
            "ppo-epochs" => self.ppo_epochs.to_string(),
            "ppo-kl-limit" => self.ppo_kl_limit.to_string(),
            "updates" => self.updates.to_string(),
            "episodes-per-update" => self.episodes_per_update.to_string(),
            "n-samples" => self.n_samples.to_string(),
            "ucb-c" => self.ucb_c.to_string(),
            "t-train" => self.t_train.to_string(),
            "t-infer" => self.t_infer.to_string(),
            "k" => self.k.to_string(),
            "beam" => self.beam.to_string(),
            "temperature" => self.temperature.to_string(),
            "selection-mode" => self.selection_mode.clone(),
            "vocab-size" => self.vocab_size.to_string(),
            "min-atom-count" => self.min_atom_count.to_string(),
            "explain-class" => self.explain_class.to_string(),
            "adapter-inputs-cap" => self.adapter_inputs_cap.to_string(),
            _ => return None,
        };
        Some(v)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                detail: e.to_string(),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "elements" => {
                let mut elements = Vec::new();
                for part in value.split(',') {
                    let sym = part.trim();
                    let Some(el) = Element::from_symbol(sym) else {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            detail: format!("unknown element `{sym}`"),
                        });
                    };
                    elements.push(el);
                }
                if elements.is_empty() {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        detail: "empty element set".into(),
                    });
                }
                self.elements = elements;
            }
            "fp-radius" => self.fp_radius = parse(key, value)?,
            "fp-nbits" => self.fp_nbits = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "latent" => self.latent = parse(key, value)?,
            "adapter-hidden" => self.adapter_hidden = parse(key, value)?,
            "enc-hidden" => self.enc_hidden = parse(key, value)?,
            "enc-layers" => self.enc_layers = parse(key, value)?,
            "dec-hidden" => self.dec_hidden = parse(key, value)?,
            "frag-embed" => self.frag_embed = parse(key, value)?,
            "atom-hidden" => self.atom_hidden = parse(key, value)?,
            "atom-embed" => self.atom_embed = parse(key, value)?,
            "edge-hidden" => self.edge_hidden = parse(key, value)?,
            "max-fragments" => self.max_fragments = parse(key, value)?,
            "gnn-hidden" => self.gnn_hidden = parse(key, value)?,
            "gnn-layers" => self.gnn_layers = parse(key, value)?,
            "gnn-update" => {
                if value != "concat" && value != "additive" {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        detail: "expected `concat` or `additive`".into(),
                    });
                }
                self.gnn_update = value.to_string();
            }
            "gnn-lr" => self.gnn_lr = parse(key, value)?,
            "gnn-epochs" => self.gnn_epochs = parse(key, value)?,
            "gnn-batch" => self.gnn_batch = parse(key, value)?,
            "vae-lr" => self.vae_lr = parse(key, value)?,
            "vae-epochs" => self.vae_epochs = parse(key, value)?,
            "vae-batch" => self.vae_batch = parse(key, value)?,
            "vae-free-bits" => self.vae_free_bits = parse(key, value)?,
            "adapter-lr" => self.adapter_lr = parse(key, value)?,
            "ppo-clip" => self.ppo_clip = parse(key, value)?,
            "ppo-epochs" => self.ppo_epochs = parse(key, value)?,
            "ppo-kl-limit" => self.ppo_kl_limit = parse(key, value)?,
            "updates" => self.updates = parse(key, value)?,
            "episodes-per-update" => self.episodes_per_update = parse(key, value)?,
            "n-samples" => self.n_samples = parse(key, value)?,
            "ucb-c" => self.ucb_c = parse(key, value)?,
            "t-train" => self.t_train = parse(key, value)?,
            "t-infer" => self.t_infer = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "selection-mode" => {
                if value != "set-coverage" && value != "modular" {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        detail: "expected `set-coverage` or `modular`".into(),
                    });
                }
                self.selection_mode = value.to_string();
            }
            "vocab-size" => self.vocab_size = parse(key, value)?,
            "min-atom-count" => self.min_atom_count = parse(key, value)?,
            "explain-class" => self.explain_class = parse(key, value)?,
            "adapter-inputs-cap" => self.adapter_inputs_cap = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Apply a flat key=value file over the current values. Lines starting
    /// with `#` and blank lines are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Canonical key=value text; the config hash is the FNV-1a of this dump.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS.iter().chain(["adapter-inputs-cap"].iter()) {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("every key is gettable"));
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.dump().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    // ---- typed views ----

    pub fn feat(&self) -> FeaturizeConfig {
        FeaturizeConfig {
            elements: self.elements.clone(),
        }
    }

    pub fn fp(&self) -> FpConfig {
        FpConfig {
            radius: self.fp_radius,
            nbits: self.fp_nbits,
        }
    }

    pub fn target_class(&self) -> u8 {
        1 - self.explain_class
    }

    pub fn score_params(&self) -> ScoreParams {
        ScoreParams {
            alpha: self.alpha,
            beta: self.beta,
            delta: self.delta,
            fp: self.fp(),
            target_class: self.target_class(),
        }
    }

    pub fn selection(&self) -> SelectionMode {
        if self.selection_mode == "modular" {
            SelectionMode::Modular
        } else {
            SelectionMode::SetCoverage
        }
    }

    pub fn gnn_cfg(&self) -> GnnConfig {
        GnnConfig {
            hidden: self.gnn_hidden,
            layers: self.gnn_layers,
            update: if self.gnn_update == "additive" {
                UpdateForm::Additive
            } else {
                UpdateForm::Concat
            },
            feat: self.feat(),
        }
    }

    pub fn gnn_train_cfg(&self) -> GnnTrainConfig {
        GnnTrainConfig {
            lr: self.gnn_lr,
            epochs: self.gnn_epochs,
            batch: self.gnn_batch,
        }
    }

    pub fn vae_cfg(&self) -> VaeConfig {
        VaeConfig {
            latent: self.latent,
            enc_hidden: self.enc_hidden,
            enc_layers: self.enc_layers,
            dec_hidden: self.dec_hidden,
            frag_embed: self.frag_embed,
            atom_hidden: self.atom_hidden,
            atom_embed: self.atom_embed,
            edge_hidden: self.edge_hidden,
            max_fragments: self.max_fragments,
            feat: self.feat(),
        }
    }

    pub fn vae_train_cfg(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            lr: self.vae_lr,
            epochs: self.vae_epochs,
            batch: self.vae_batch,
            free_bits: self.vae_free_bits,
        }
    }

    pub fn adapter_cfg(&self) -> AdapterConfig {
        AdapterConfig {
            input: self.enc_hidden,
            hidden: self.adapter_hidden,
            latent: self.latent,
        }
    }

    pub fn adapter_train_cfg(&self) -> AdapterTrainConfig {
        AdapterTrainConfig {
            updates: self.updates,
            episodes_per_update: self.episodes_per_update,
            t_train: self.t_train,
            n_samples: self.n_samples,
            lr: self.adapter_lr,
            clip: self.ppo_clip,
            epochs: self.ppo_epochs,
            kl_limit: self.ppo_kl_limit,
            ucb_c: self.ucb_c,
        }
    }
}
