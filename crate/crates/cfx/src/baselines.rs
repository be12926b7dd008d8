//! Comparison methods: plain latent sampling, simulated-annealing-guided
//! sampling, and a uniform random-edit walk.
//!
//! All three emit candidate pools of valid molecules in the same shape as
//! the aligned generator, so the greedy selection and metrics apply
//! uniformly. Counterfactual filtering happens at evaluation time.

use thiserror::Error;

use crate::chem::{max_allowed_valence, Element, Molecule};
use crate::explain::{score_candidate, ExplainError, ScoreParams};
use crate::gnn::{GnnError, GnnModel};
use crate::vae::{sample_latent, DecodeOutcome, VaeError, VaeModel};
use crate::vocab::FragmentVocab;
use crate::Rng;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

/// Shared decode settings for the generative baselines.
#[derive(Debug, Clone)]
pub struct DecodeOpts {
    pub beam: usize,
    pub temperature: f32,
}

/// Resample the input's latent each step and decode; stop a chain early once
/// a valid counterfactual appears. The pool keeps every valid decode.
pub fn sample_baseline(
    inputs: &[Molecule],
    vae: &VaeModel,
    gnn: &GnnModel,
    vocab: &FragmentVocab,
    target_class: u8,
    t_max: usize,
    opts: &DecodeOpts,
    rng: &mut Rng,
) -> Result<Vec<Molecule>, BaselineError> {
    let mut pool = Vec::new();
    for input in inputs {
        let enc = vae.encode(input)?;
        for _ in 0..t_max {
            let z = sample_latent(&enc.dist, rng);
            if let DecodeOutcome::Molecule(dm) =
                vae.decode(&z, vocab, opts.beam, opts.temperature, rng)?
            {
                let counterfactual = gnn.predict_label(&dm.mol)? == target_class;
                pool.push(dm.mol);
                if counterfactual {
                    break;
                }
            }
        }
    }
    Ok(pool)
}

/// Annealing temperature schedule: starts at `initial` and halves every
/// `halving_period` steps.
#[derive(Debug, Clone)]
pub struct SaSchedule {
    pub initial: f32,
    pub halving_period: usize,
}

impl Default for SaSchedule {
    fn default() -> Self {
        SaSchedule {
            initial: 0.1,
            halving_period: 10,
        }
    }
}

impl SaSchedule {
    /// Temperature used for the 1-based `step`th proposal.
    pub fn temperature(&self, step: usize) -> f32 {
        let halvings = (step.saturating_sub(1)) / self.halving_period.max(1);
        self.initial * 0.5f32.powi(halvings as i32)
    }
}

/// Metropolis acceptance probability min(1, exp((new - old) / temp)).
pub fn metropolis_accept(score_new: f32, score_old: f32, temp: f32) -> f32 {
    let delta = (score_new - score_old) as f64;
    if delta >= 0.0 {
        1.0
    } else {
        (delta / temp.max(1e-12) as f64).exp().min(1.0) as f32
    }
}

/// Simulated-annealing-guided sampling: propose a decode from the current
/// state's latent, accept by the Metropolis criterion against the principle
/// score. With `propose_from_input`, proposals always re-encode the original
/// input instead of the accepted state.
#[allow(clippy::too_many_arguments)]
pub fn sa_baseline(
    inputs: &[Molecule],
    vae: &VaeModel,
    gnn: &GnnModel,
    vocab: &FragmentVocab,
    params: &ScoreParams,
    t_max: usize,
    opts: &DecodeOpts,
    schedule: &SaSchedule,
    propose_from_input: bool,
    rng: &mut Rng,
) -> Result<Vec<Molecule>, BaselineError> {
    let mut pool = Vec::new();
    for input in inputs {
        let mut current = input.clone();
        let mut current_score = score_candidate(&current, inputs, gnn, params)?.score;
        for step in 1..=t_max {
            let temp = schedule.temperature(step);
            let source = if propose_from_input { input } else { &current };
            let enc = vae.encode(source)?;
            let z = sample_latent(&enc.dist, rng);
            let DecodeOutcome::Molecule(dm) =
                vae.decode(&z, vocab, opts.beam, opts.temperature, rng)?
            else {
                continue;
            };
            let proposal_score = score_candidate(&dm.mol, inputs, gnn, params)?.score;
            pool.push(dm.mol.clone());
            if rng.uniform() < metropolis_accept(proposal_score, current_score, temp) {
                current = dm.mol;
                current_score = proposal_score;
            }
        }
    }
    Ok(pool)
}

// ---- random-edit walk ----

/// One legal edit applied to a molecule.
fn legal_edits(mol: &Molecule, elements: &[Element]) -> Vec<Molecule> {
    let n = mol.atom_count();
    let free = |m: &Molecule, i: usize| -> u8 {
        let a = m.atom(i);
        max_allowed_valence(a.element, a.charge)
            .map(|cap| cap.saturating_sub(m.bond_order_sum(i)))
            .unwrap_or(0)
    };
    let mut edits = Vec::new();

    // Grow: attach a new atom by a single bond.
    for u in 0..n {
        if free(mol, u) >= 1 {
            for &el in elements {
                let mut m = mol.clone();
                let v = m.add_atom(el, 0);
                m.add_bond(u, v, 1).expect("fresh bond");
                if m.is_valid() {
                    edits.push(m);
                }
            }
        }
    }
    // Shrink: delete a degree-1 atom (never the only atom).
    if n > 1 {
        for u in 0..n {
            if mol.degree(u) == 1 {
                let mut m = mol.clone();
                m.remove_atom(u);
                if m.is_valid() {
                    edits.push(m);
                }
            }
        }
    }
    // Rewire: change a bond order.
    for bd in mol.bonds() {
        for order in 1..=3u8 {
            if order == bd.order {
                continue;
            }
            let mut m = mol.clone();
            m.set_bond_order(bd.a, bd.b, order);
            if m.is_valid() {
                edits.push(m);
            }
        }
    }
    // Add a bond between existing atoms.
    for u in 0..n {
        for v in (u + 1)..n {
            if mol.bond_between(u, v).is_some() {
                continue;
            }
            for order in 1..=3u8 {
                if free(mol, u) >= order && free(mol, v) >= order {
                    let mut m = mol.clone();
                    m.add_bond(u, v, order).expect("fresh bond");
                    if m.is_valid() {
                        edits.push(m);
                    }
                }
            }
        }
    }
    // Remove a bond (validity rejects anything that disconnects).
    for bd in mol.bonds() {
        let mut m = mol.clone();
        m.remove_bond(bd.a, bd.b);
        if m.is_valid() {
            edits.push(m);
        }
    }
    edits
}

/// Uniform random-edit walk: up to `max_steps` edits per input, every
/// intermediate valid by construction; all visited states are pooled.
pub fn walk_baseline(
    inputs: &[Molecule],
    _gnn: &GnnModel,
    elements: &[Element],
    max_steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Molecule>, BaselineError> {
    let mut pool = Vec::new();
    for input in inputs {
        let mut current = input.clone();
        for _ in 0..max_steps {
            let edits = legal_edits(&current, elements);
            if edits.is_empty() {
                break;
            }
            current = edits[rng.index(edits.len())].clone();
            pool.push(current.clone());
        }
    }
    Ok(pool)
}
