//! Global counterfactual explanations for molecular property predictors.
//!
//! Given a trained graph neural network that classifies molecules, this crate
//! searches for a small set of valid molecules that flip the classifier's
//! decision while staying close to the explained input set. The search steers
//! a fragment-based molecular VAE through a latent mean-shift policy trained
//! with PPO against principle rewards (counterfactuality, validity, coverage),
//! then greedily selects a top-k explanation set.
//!
//! The pipeline stages are exposed both as library modules and as subcommands
//! of the `cfx` binary:
//!
//! - [`chem`] — molecular graphs, SMILES parsing/writing, valence checking
//! - [`fp`] — circular fingerprints and Tanimoto distance
//! - [`gnn`] — the message-passing classifier being explained
//! - [`vocab`] — principal-subgraph vocabulary mining and decomposition
//! - [`vae`] — the fragment-based molecule generator
//! - [`adapter`] — the latent-shift policy and its critic
//! - [`ppo`] — clipped-surrogate policy optimization and UCB scheduling
//! - [`explain`] — principle rewards, coverage/cost metrics, greedy selection
//! - [`baselines`] — plain sampling, simulated annealing, random-edit walk
//!
//! Training runs on a small tape-based autodiff engine ([`tensor`], [`tape`],
//! [`optim`]) so the whole artifact is self-contained and deterministic.
//!
//! See the crate examples for runnable walkthroughs of each stage.

pub mod adapter;
pub mod baselines;
pub mod chem;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod explain;
pub mod fp;
pub mod gnn;
pub mod numcheck;
pub mod optim;
pub mod ppo;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod toydata;
pub mod vae;
pub mod vocab;

pub use chem::Molecule;
pub use config::RunConfig;
pub use rng::Rng;
pub use tensor::Tensor;
