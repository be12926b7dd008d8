//! Alignment loop: rollouts through encode -> shift -> sample -> decode,
//! Monte-Carlo Q estimation, clipped-surrogate policy updates, and UCB input
//! scheduling.
//!
//! Each transition is credited independently: Q(s, a) is the mean candidate
//! score over fresh decodes from the shifted latent distribution, and the
//! advantage is Q - V normalized per batch. No discounting, no GAE.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{shifted_latent, AdapterConfig, AdapterError, AdapterModel};
use crate::chem::Molecule;
use crate::explain::{score_candidate, ExplainError, ScoreParams};
use crate::gnn::GnnModel;
use crate::optim::{Adam, OptimError};
use crate::tape::Tape;
use crate::tensor::TensorError;
use crate::vae::{sample_latent, DecodeOutcome, VaeError, VaeModel};
use crate::vocab::FragmentVocab;
use crate::Rng;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("non-finite loss (policy {policy}, critic {critic})")]
    NonFiniteLoss { policy: f32, critic: f32 },
}

/// One step of the generative MDP.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Molecule,
    pub h_g: Vec<f32>,
    pub action: Vec<f32>,
    pub old_logp: f64,
    pub reward: f32,
    pub q: f32,
    pub v: f32,
    pub candidate: Option<Molecule>,
}

#[derive(Debug, Default)]
pub struct EpisodeBuffer {
    pub episodes: Vec<Vec<Transition>>,
}

impl EpisodeBuffer {
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_reward(&self) -> f32 {
        let n = self.len().max(1);
        (self.transitions().map(|t| t.reward as f64).sum::<f64>() / n as f64) as f32
    }
}

/// Frozen models and reward parameters shared by rollouts.
pub struct RolloutCtx<'a> {
    pub gnn: &'a GnnModel,
    pub vae: &'a VaeModel,
    pub vocab: &'a FragmentVocab,
    /// Explained input set; coverage rewards are measured against it.
    pub inputs: &'a [Molecule],
    pub params: &'a ScoreParams,
    pub beam: usize,
    pub temperature: f32,
}

impl RolloutCtx<'_> {
    fn score(&self, mol: &Molecule) -> Result<f32, PpoError> {
        Ok(score_candidate(mol, self.inputs, self.gnn, self.params)?.score)
    }
}

/// Roll one episode of `t_steps` from a start molecule. Invalid decodes earn
/// zero reward and leave the state unchanged.
pub fn rollout(
    ctx: &RolloutCtx,
    adapter: &AdapterModel,
    start: &Molecule,
    t_steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Transition>, PpoError> {
    let mut state = start.clone();
    let mut transitions = Vec::with_capacity(t_steps);
    for _ in 0..t_steps {
        let enc = ctx.vae.encode(&state)?;
        let dist = adapter.policy_dist(&enc.h_g)?;
        let action = dist.sample(rng);
        let old_logp = dist.log_prob(&action);
        let v = adapter.critic_value(&enc.h_g)?;
        let shifted = shifted_latent(&enc.dist, &action)?;
        let z = sample_latent(&shifted, rng);
        let (reward, candidate) =
            match ctx.vae.decode(&z, ctx.vocab, ctx.beam, ctx.temperature, rng)? {
                DecodeOutcome::Molecule(dm) => (ctx.score(&dm.mol)?, Some(dm.mol)),
                DecodeOutcome::Failure(_) => (0.0, None),
            };
        transitions.push(Transition {
            state: state.clone(),
            h_g: enc.h_g,
            action,
            old_logp,
            reward,
            q: 0.0,
            v,
            candidate: candidate.clone(),
        });
        if let Some(next) = candidate {
            state = next;
        }
    }
    Ok(transitions)
}

/// Monte-Carlo Q(s, a): mean candidate score over `n_samples` fresh decodes
/// from N(mu + a, sigma); failed decodes contribute zero.
pub fn estimate_q(
    ctx: &RolloutCtx,
    state: &Molecule,
    action: &[f32],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<f32, PpoError> {
    let enc = ctx.vae.encode(state)?;
    let shifted = shifted_latent(&enc.dist, action)?;
    let mut total = 0.0f64;
    for _ in 0..n_samples.max(1) {
        let z = sample_latent(&shifted, rng);
        let score = match ctx.vae.decode(&z, ctx.vocab, ctx.beam, ctx.temperature, rng)? {
            DecodeOutcome::Molecule(dm) => ctx.score(&dm.mol)?,
            DecodeOutcome::Failure(_) => 0.0,
        };
        total += score as f64;
    }
    Ok((total / n_samples.max(1) as f64) as f32)
}

/// Per-sample clipped surrogate: min(ratio * adv, clip(ratio) * adv).
pub fn clipped_objective(ratio: f32, adv: f32, eps: f32) -> f32 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

#[derive(Debug, Clone)]
pub struct PpoUpdateConfig {
    pub clip: f32,
    pub epochs: usize,
    pub lr: f32,
    /// Update aborts once the estimated KL(new || old) exceeds this.
    pub kl_limit: f32,
}

impl Default for PpoUpdateConfig {
    fn default() -> Self {
        PpoUpdateConfig {
            clip: 0.2,
            epochs: 4,
            lr: 1e-5,
            kl_limit: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateDiag {
    pub mean_ratio: f32,
    pub clip_frac: f32,
    pub kl: f32,
    pub policy_loss: f32,
    pub critic_loss: f32,
    pub epochs_run: usize,
    pub aborted: bool,
}

/// One PPO update over a buffer: several epochs of clipped-surrogate ascent
/// on the policy and squared-error regression of the critic toward Q.
pub fn ppo_update(
    buffer: &EpisodeBuffer,
    adapter: &mut AdapterModel,
    cfg: &PpoUpdateConfig,
    adam: &mut Adam,
) -> Result<UpdateDiag, PpoError> {
    if buffer.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let transitions: Vec<&Transition> = buffer.transitions().collect();
    let n = transitions.len();

    // Per-batch advantage normalization (zero mean, unit std).
    let raw: Vec<f64> = transitions.iter().map(|t| (t.q - t.v) as f64).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    let advantages: Vec<f32> = raw.iter().map(|a| ((a - mean) / std) as f32).collect();
    let q_targets: Vec<f32> = transitions.iter().map(|t| t.q).collect();
    let old_logps: Vec<f32> = transitions.iter().map(|t| t.old_logp as f32).collect();

    let mut diag = UpdateDiag {
        mean_ratio: 1.0,
        clip_frac: 0.0,
        kl: 0.0,
        policy_loss: 0.0,
        critic_loss: 0.0,
        epochs_run: 0,
        aborted: false,
    };

    for _epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let vars = adapter.bind(&mut tape, true);
        let mut ratio_vars = Vec::with_capacity(n);
        let mut value_vars = Vec::with_capacity(n);
        for (i, tr) in transitions.iter().enumerate() {
            let h = tape.constant_row(&tr.h_g);
            let logp = adapter.log_prob_var(&mut tape, &vars, h, &tr.action)?;
            let shifted = tape.add_scalar(logp, -old_logps[i]);
            ratio_vars.push(tape.exp(shifted));
            value_vars.push(adapter.critic_var(&mut tape, &vars, h)?);
        }
        let ratios = tape.concat_cols(&ratio_vars)?;
        let adv = tape.constant_row(&advantages);
        let unclipped = tape.mul(ratios, adv)?;
        let clipped_r = tape.clamp(ratios, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let clipped = tape.mul(clipped_r, adv)?;
        let surrogate = tape.minimum(unclipped, clipped)?;
        let mean_surr = tape.mean(surrogate);
        let policy_loss = tape.neg(mean_surr);

        let values = tape.concat_cols(&value_vars)?;
        let q = tape.constant_row(&q_targets);
        let diff = tape.sub(values, q)?;
        let sq = tape.mul(diff, diff)?;
        let critic_loss = tape.mean(sq);

        let total = tape.add(policy_loss, critic_loss)?;
        diag.policy_loss = tape.scalar_value(policy_loss);
        diag.critic_loss = tape.scalar_value(critic_loss);
        if !diag.policy_loss.is_finite() || !diag.critic_loss.is_finite() {
            return Err(PpoError::NonFiniteLoss {
                policy: diag.policy_loss,
                critic: diag.critic_loss,
            });
        }
        tape.backward(total)?;

        let vars_flat = [
            vars.p_w1, vars.p_b1, vars.p_w2, vars.p_b2, vars.log_std, vars.c_w1, vars.c_b1,
            vars.c_w2, vars.c_b2,
        ];
        for ((name, tensor), var) in adapter.flat_mut().into_iter().zip(vars_flat) {
            let grad = tape.grad_f32(var).expect("bound parameter");
            adam.step(&name, tensor, &grad, cfg.lr)?;
        }
        diag.epochs_run += 1;

        // Post-epoch diagnostics at the new parameters.
        let mut ratio_sum = 0.0f64;
        let mut clip_count = 0usize;
        let mut kl_sum = 0.0f64;
        for (i, tr) in transitions.iter().enumerate() {
            let dist = adapter.policy_dist(&tr.h_g)?;
            let new_logp = dist.log_prob(&tr.action);
            let log_ratio = new_logp - old_logps[i] as f64;
            let ratio = log_ratio.exp();
            ratio_sum += ratio;
            if (ratio - 1.0).abs() > cfg.clip as f64 {
                clip_count += 1;
            }
            // k3 estimator: (r - 1) - log r >= 0.
            kl_sum += (ratio - 1.0) - log_ratio;
        }
        diag.mean_ratio = (ratio_sum / n as f64) as f32;
        diag.clip_frac = clip_count as f32 / n as f32;
        diag.kl = (kl_sum / n as f64) as f32;
        if diag.kl > cfg.kl_limit {
            diag.aborted = true;
            break;
        }
    }
    Ok(diag)
}

// ---- UCB scheduling ----

/// Per-input pull counts and Welford moments of episode scores.
#[derive(Debug, Clone)]
pub struct UcbStats {
    n: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl UcbStats {
    pub fn new(inputs: usize) -> Self {
        UcbStats {
            n: vec![0; inputs],
            mean: vec![0.0; inputs],
            m2: vec![0.0; inputs],
        }
    }

    pub fn record(&mut self, i: usize, score: f64) {
        self.n[i] += 1;
        let delta = score - self.mean[i];
        self.mean[i] += delta / self.n[i] as f64;
        self.m2[i] += delta * (score - self.mean[i]);
    }

    pub fn pulls(&self, i: usize) -> u64 {
        self.n[i]
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Population variance; 0 until two samples exist.
    pub fn variance(&self, i: usize) -> f64 {
        if self.n[i] == 0 {
            0.0
        } else {
            (self.m2[i] / self.n[i] as f64).max(0.0)
        }
    }

    /// Unvisited inputs first (in index order), then argmax of
    /// mean + c * sqrt(var / n); ties resolve to the lowest index.
    pub fn select(&self, c: f64) -> usize {
        if let Some(i) = self.n.iter().position(|&n| n == 0) {
            return i;
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..self.n.len() {
            let score = self.mean[i] + c * (self.variance(i) / self.n[i] as f64).sqrt();
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }
}

// ---- full adapter training ----

#[derive(Debug, Clone)]
pub struct AdapterTrainConfig {
    pub updates: usize,
    pub episodes_per_update: usize,
    pub t_train: usize,
    pub n_samples: usize,
    pub lr: f32,
    pub clip: f32,
    pub epochs: usize,
    pub kl_limit: f32,
    pub ucb_c: f64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        AdapterTrainConfig {
            updates: 40,
            episodes_per_update: 8,
            t_train: 4,
            n_samples: 4,
            lr: 1e-5,
            clip: 0.2,
            epochs: 4,
            kl_limit: 0.5,
            ucb_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub mean_reward: f32,
    pub clip_frac: f32,
    pub kl: f32,
    pub lr: f32,
    pub aborted: bool,
}

/// Linear warmup over the first tenth of updates, then linear decay to a
/// tenth of the peak.
pub fn lr_schedule(base: f32, update: usize, total: usize) -> f32 {
    let warmup = (total as f32 * 0.1).ceil() as usize;
    let warmup = warmup.clamp(1, total.max(1));
    if update < warmup {
        base * (update + 1) as f32 / warmup as f32
    } else if total <= warmup {
        base
    } else {
        let progress = (update - warmup) as f32 / (total - warmup) as f32;
        base * (1.0 - 0.9 * progress)
    }
}

/// Train the adapter with PPO against the principle rewards; returns the
/// checkpoint with the best mean episode reward plus the per-update curve.
pub fn train_adapter(
    ctx: &RolloutCtx,
    adapter_cfg: &AdapterConfig,
    tcfg: &AdapterTrainConfig,
    rng: &mut Rng,
) -> Result<(AdapterModel, Vec<UpdateLog>), PpoError> {
    let mut adapter = AdapterModel::init(adapter_cfg, rng);
    let mut adam = Adam::new();
    let mut ucb = UcbStats::new(ctx.inputs.len());
    let mut logs = Vec::with_capacity(tcfg.updates);
    let mut best: Option<(f32, AdapterModel)> = None;

    for update in 0..tcfg.updates {
        let lr = lr_schedule(tcfg.lr, update, tcfg.updates);
        let mut buffer = EpisodeBuffer::default();
        for _ in 0..tcfg.episodes_per_update {
            let pick = ucb.select(tcfg.ucb_c);
            let transitions = rollout(ctx, &adapter, &ctx.inputs[pick], tcfg.t_train, rng)?;
            let episode_score = transitions.iter().map(|t| t.reward as f64).sum::<f64>()
                / transitions.len().max(1) as f64;
            ucb.record(pick, episode_score);
            buffer.episodes.push(transitions);
        }
        for episode in &mut buffer.episodes {
            for tr in episode.iter_mut() {
                tr.q = estimate_q(ctx, &tr.state, &tr.action, tcfg.n_samples, rng)?;
            }
        }
        let mean_reward = buffer.mean_reward();
        let diag = ppo_update(
            &buffer,
            &mut adapter,
            &PpoUpdateConfig {
                clip: tcfg.clip,
                epochs: tcfg.epochs,
                lr,
                kl_limit: tcfg.kl_limit,
            },
            &mut adam,
        )?;
        logs.push(UpdateLog {
            update,
            mean_reward,
            clip_frac: diag.clip_frac,
            kl: diag.kl,
            lr,
            aborted: diag.aborted,
        });
        if best.as_ref().map(|(r, _)| mean_reward > *r).unwrap_or(true) {
            best = Some((mean_reward, adapter.clone()));
        }
    }
    let (_, best_adapter) = best.expect("at least one update");
    Ok((best_adapter, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::grad_rel_err;
    use crate::tensor::Tensor;

    #[test]
    fn clipped_objective_point_examples() {
        // ratio 1: clip inactive, objective = adv.
        assert_eq!(clipped_objective(1.0, 0.7, 0.2), 0.7);
        // ratio 2, eps 0.2, adv 1 -> min(2, 1.2) = 1.2.
        assert_eq!(clipped_objective(2.0, 1.0, 0.2), 1.2);
        // ratio 0.5, eps 0.2, adv -1 -> min(-0.5, -0.8) = -0.8.
        assert_eq!(clipped_objective(0.5, -1.0, 0.2), -0.8);
    }

    #[test]
    fn clipped_objective_bound() {
        let mut rng = Rng::from_seed(5);
        for _ in 0..1000 {
            let ratio = rng.uniform_in(0.0, 3.0);
            let adv = rng.uniform_in(-2.0, 2.0);
            let eps = 0.2;
            let surr = clipped_objective(ratio, adv, eps);
            assert!(surr.abs() <= (1.0 + eps) * adv.abs() + 1e-6 || surr <= 0.0);
        }
    }

    fn tiny_adapter() -> AdapterModel {
        let cfg = AdapterConfig {
            input: 5,
            hidden: 8,
            latent: 3,
        };
        let mut rng = Rng::from_seed(2);
        let mut m = AdapterModel::init(&cfg, &mut rng);
        // Non-zero policy output layer so gradients flow everywhere.
        m.p_w2 = Tensor::init_uniform(8, 3, 8, &mut rng);
        m
    }

    fn synthetic_buffer(adapter: &AdapterModel, rng: &mut Rng, n: usize) -> EpisodeBuffer {
        let mut episodes = Vec::new();
        for _ in 0..n {
            let h: Vec<f32> = (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let dist = adapter.policy_dist(&h).unwrap();
            let action = dist.sample(rng);
            let old_logp = dist.log_prob(&action);
            let v = adapter.critic_value(&h).unwrap();
            episodes.push(vec![Transition {
                state: Molecule::single(crate::chem::Element::C, 0),
                h_g: h,
                action,
                old_logp,
                reward: rng.uniform(),
                q: rng.uniform() * 2.0,
                v,
                candidate: None,
            }]);
        }
        EpisodeBuffer { episodes }
    }

    #[test]
    fn stored_logp_matches_recomputation() {
        let adapter = tiny_adapter();
        let mut rng = Rng::from_seed(3);
        let buffer = synthetic_buffer(&adapter, &mut rng, 6);
        for tr in buffer.transitions() {
            let dist = adapter.policy_dist(&tr.h_g).unwrap();
            let lp = dist.log_prob(&tr.action);
            assert!((lp - tr.old_logp).abs() < 1e-6);
        }
    }

    #[test]
    fn surrogate_gradient_equals_policy_gradient_at_ratio_one() {
        let adapter = tiny_adapter();
        let mut rng = Rng::from_seed(7);
        let buffer = synthetic_buffer(&adapter, &mut rng, 8);
        let transitions: Vec<&Transition> = buffer.transitions().collect();
        let n = transitions.len();
        let raw: Vec<f64> = transitions.iter().map(|t| (t.q - t.v) as f64).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        let advantages: Vec<f32> = raw.iter().map(|a| ((a - mean) / std) as f32).collect();

        // Surrogate loss gradient at theta = theta_old.
        let surrogate_grads = {
            let mut tape = Tape::new();
            let vars = adapter.bind(&mut tape, true);
            let mut ratios = Vec::new();
            for tr in &transitions {
                let h = tape.constant_row(&tr.h_g);
                let logp = adapter.log_prob_var(&mut tape, &vars, h, &tr.action).unwrap();
                let shifted = tape.add_scalar(logp, -(tr.old_logp as f32));
                ratios.push(tape.exp(shifted));
            }
            let r = tape.concat_cols(&ratios).unwrap();
            let adv = tape.constant_row(&advantages);
            let unclipped = tape.mul(r, adv).unwrap();
            let clipped_r = tape.clamp(r, 0.8, 1.2);
            let clipped = tape.mul(clipped_r, adv).unwrap();
            let surr = tape.minimum(unclipped, clipped).unwrap();
            let m = tape.mean(surr);
            let loss = tape.neg(m);
            tape.backward(loss).unwrap();
            [
                tape.grad(vars.p_w1).unwrap().to_vec(),
                tape.grad(vars.p_w2).unwrap().to_vec(),
                tape.grad(vars.log_std).unwrap().to_vec(),
            ]
        };

        // Vanilla policy-gradient loss on the same batch.
        let pg_grads = {
            let mut tape = Tape::new();
            let vars = adapter.bind(&mut tape, true);
            let mut logps = Vec::new();
            for tr in &transitions {
                let h = tape.constant_row(&tr.h_g);
                logps.push(adapter.log_prob_var(&mut tape, &vars, h, &tr.action).unwrap());
            }
            let lp = tape.concat_cols(&logps).unwrap();
            let adv = tape.constant_row(&advantages);
            let weighted = tape.mul(lp, adv).unwrap();
            let m = tape.mean(weighted);
            let loss = tape.neg(m);
            tape.backward(loss).unwrap();
            [
                tape.grad(vars.p_w1).unwrap().to_vec(),
                tape.grad(vars.p_w2).unwrap().to_vec(),
                tape.grad(vars.log_std).unwrap().to_vec(),
            ]
        };

        for (s, p) in surrogate_grads.iter().zip(&pg_grads) {
            let err = grad_rel_err(s, p);
            assert!(err < 1e-5, "rel err {err}");
        }
    }

    #[test]
    fn ppo_update_runs_and_reports() {
        let mut adapter = tiny_adapter();
        let mut rng = Rng::from_seed(9);
        let buffer = synthetic_buffer(&adapter, &mut rng, 12);
        let mut adam = Adam::new();
        let diag = ppo_update(
            &buffer,
            &mut adapter,
            &PpoUpdateConfig {
                clip: 0.2,
                epochs: 3,
                lr: 1e-3,
                kl_limit: 0.5,
            },
            &mut adam,
        )
        .unwrap();
        assert!(diag.kl.is_finite());
        assert!(diag.mean_ratio.is_finite());
        assert!(!diag.aborted);
        assert_eq!(diag.epochs_run, 3);
    }

    #[test]
    fn kl_guardrail_aborts_adversarial_update() {
        let mut adapter = tiny_adapter();
        let mut rng = Rng::from_seed(13);
        let buffer = synthetic_buffer(&adapter, &mut rng, 12);
        let mut adam = Adam::new();
        // Huge learning rate and many epochs blow the policy far from old.
        let diag = ppo_update(
            &buffer,
            &mut adapter,
            &PpoUpdateConfig {
                clip: 0.2,
                epochs: 50,
                lr: 0.5,
                kl_limit: 0.5,
            },
            &mut adam,
        )
        .unwrap();
        assert!(diag.aborted, "kl {:?}", diag.kl);
        assert!(diag.epochs_run < 50);
    }

    #[test]
    fn empty_buffer_is_error() {
        let mut adapter = tiny_adapter();
        let mut adam = Adam::new();
        assert!(matches!(
            ppo_update(
                &EpisodeBuffer::default(),
                &mut adapter,
                &PpoUpdateConfig::default(),
                &mut adam
            ),
            Err(PpoError::EmptyBuffer)
        ));
    }

    #[test]
    fn ucb_selection_rules() {
        let mut stats = UcbStats::new(3);
        // All unvisited: index order.
        assert_eq!(stats.select(1.0), 0);
        stats.record(0, 1.0);
        assert_eq!(stats.select(1.0), 1);
        stats.record(1, 1.0);
        assert_eq!(stats.select(1.0), 2);
        stats.record(2, 1.0);

        // Equal means; give input 1 higher variance.
        stats.record(0, 1.0);
        stats.record(1, 0.0);
        stats.record(1, 2.0);
        stats.record(2, 1.0);
        assert!(stats.variance(1) > stats.variance(0));
        assert_eq!(stats.select(1.0), 1);

        // c = 0: pure exploitation.
        let mut pure = UcbStats::new(2);
        pure.record(0, 0.3);
        pure.record(1, 0.9);
        assert_eq!(pure.select(0.0), 1);
    }

    #[test]
    fn welford_variance_nonnegative() {
        let mut rng = Rng::from_seed(21);
        let mut stats = UcbStats::new(1);
        for _ in 0..100 {
            stats.record(0, rng.uniform() as f64);
        }
        assert!(stats.variance(0) >= 0.0);
        assert!(stats.pulls(0) == 100);
    }

    #[test]
    fn lr_schedule_shape() {
        let base = 1e-3;
        let total = 40;
        // Warmup rises to base.
        assert!(lr_schedule(base, 0, total) < base);
        assert!((lr_schedule(base, 3, total) - base).abs() < 1e-9);
        // Final update decays to base/10.
        let last = lr_schedule(base, total - 1, total);
        assert!((last - base * 0.1).abs() < base * 0.05, "{last}");
    }
}
