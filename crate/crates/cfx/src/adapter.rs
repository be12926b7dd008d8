//! Latent-shift policy and critic.
//!
//! The policy is a two-layer perceptron over the pooled graph state h_G that
//! outputs an additive shift on the latent mean, with a learnable
//! state-independent log-std (a diagonal Gaussian action distribution). The
//! critic is a matching perceptron with a scalar output. The policy's output
//! layer starts at zero, so an untrained adapter samples from the base
//! generator's latent distribution up to the exploration std.

use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use crate::vae::LatentGaussian;
use crate::Rng;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    BadDim { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    /// Width of h_G from the generator encoder.
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl AdapterConfig {
    pub fn new(input: usize, latent: usize) -> Self {
        AdapterConfig {
            input,
            hidden: 400,
            latent,
        }
    }
}

/// Diagonal Gaussian over latent shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDist {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl PolicyDist {
    pub fn sample(&self, rng: &mut Rng) -> Vec<f32> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| m + s * rng.normal())
            .collect()
    }

    /// Closed-form diagonal Gaussian log-density.
    pub fn log_prob(&self, action: &[f32]) -> f64 {
        debug_assert_eq!(action.len(), self.mean.len());
        self.mean
            .iter()
            .zip(&self.std)
            .zip(action)
            .map(|((&m, &s), &a)| {
                let t = (a as f64 - m as f64) / s as f64;
                -0.5 * t * t - (s as f64).ln() - 0.5 * LN_2PI
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct AdapterModel {
    pub p_w1: Tensor,
    pub p_b1: Tensor,
    pub p_w2: Tensor,
    pub p_b2: Tensor,
    pub log_std: Tensor,
    pub c_w1: Tensor,
    pub c_b1: Tensor,
    pub c_w2: Tensor,
    pub c_b2: Tensor,
    pub cfg: AdapterConfig,
}

pub struct AdapterVars {
    pub p_w1: Var,
    pub p_b1: Var,
    pub p_w2: Var,
    pub p_b2: Var,
    pub log_std: Var,
    pub c_w1: Var,
    pub c_b1: Var,
    pub c_w2: Var,
    pub c_b2: Var,
}

impl AdapterModel {
    /// Hidden layers get random init; the policy output layer is zeroed so
    /// training starts from the unmodified generator. Exploration std starts
    /// at 0.5.
    pub fn init(cfg: &AdapterConfig, rng: &mut Rng) -> Self {
        AdapterModel {
            p_w1: Tensor::init_uniform(cfg.input, cfg.hidden, cfg.input, rng),
            p_b1: Tensor::zeros(vec![1, cfg.hidden]),
            p_w2: Tensor::zeros(vec![cfg.hidden, cfg.latent]),
            p_b2: Tensor::zeros(vec![1, cfg.latent]),
            log_std: Tensor::new(vec![1, cfg.latent], vec![0.5f32.ln(); cfg.latent])
                .expect("log_std shape"),
            c_w1: Tensor::init_uniform(cfg.input, cfg.hidden, cfg.input, rng),
            c_b1: Tensor::zeros(vec![1, cfg.hidden]),
            c_w2: Tensor::init_uniform(cfg.hidden, 1, cfg.hidden, rng),
            c_b2: Tensor::zeros(vec![1, 1]),
            cfg: cfg.clone(),
        }
    }

    /// Fully random initialization, including a nonzero output layer: an
    /// untrained adapter of this kind applies a random state-dependent shift,
    /// the w/o-trained-adapter ablation.
    pub fn init_random(cfg: &AdapterConfig, rng: &mut Rng) -> Self {
        let mut m = Self::init(cfg, rng);
        m.p_w2 = Tensor::init_uniform(cfg.hidden, cfg.latent, cfg.hidden, rng);
        m
    }

    pub fn flat(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("p_w1".into(), &self.p_w1),
            ("p_b1".into(), &self.p_b1),
            ("p_w2".into(), &self.p_w2),
            ("p_b2".into(), &self.p_b2),
            ("log_std".into(), &self.log_std),
            ("c_w1".into(), &self.c_w1),
            ("c_b1".into(), &self.c_b1),
            ("c_w2".into(), &self.c_w2),
            ("c_b2".into(), &self.c_b2),
        ]
    }

    pub fn flat_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("p_w1".into(), &mut self.p_w1),
            ("p_b1".into(), &mut self.p_b1),
            ("p_w2".into(), &mut self.p_w2),
            ("p_b2".into(), &mut self.p_b2),
            ("log_std".into(), &mut self.log_std),
            ("c_w1".into(), &mut self.c_w1),
            ("c_b1".into(), &mut self.c_b1),
            ("c_w2".into(), &mut self.c_w2),
            ("c_b2".into(), &mut self.c_b2),
        ]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> AdapterVars {
        let leaf = |t: &Tensor, tape: &mut Tape| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        AdapterVars {
            p_w1: leaf(&self.p_w1, tape),
            p_b1: leaf(&self.p_b1, tape),
            p_w2: leaf(&self.p_w2, tape),
            p_b2: leaf(&self.p_b2, tape),
            log_std: leaf(&self.log_std, tape),
            c_w1: leaf(&self.c_w1, tape),
            c_b1: leaf(&self.c_b1, tape),
            c_w2: leaf(&self.c_w2, tape),
            c_b2: leaf(&self.c_b2, tape),
        }
    }

    /// Policy mean on the tape: tanh perceptron over h_G.
    pub fn policy_mean_var(
        &self,
        tape: &mut Tape,
        vars: &AdapterVars,
        h_g: Var,
    ) -> Result<Var, TensorError> {
        let l1 = tape.matmul(h_g, vars.p_w1)?;
        let l1 = tape.add_bias(l1, vars.p_b1)?;
        let a1 = tape.tanh(l1);
        let l2 = tape.matmul(a1, vars.p_w2)?;
        tape.add_bias(l2, vars.p_b2)
    }

    /// Gaussian log-density of `action` under the current policy, on the
    /// tape (differentiable wrt policy parameters and log-std).
    pub fn log_prob_var(
        &self,
        tape: &mut Tape,
        vars: &AdapterVars,
        h_g: Var,
        action: &[f32],
    ) -> Result<Var, TensorError> {
        let mean = self.policy_mean_var(tape, vars, h_g)?;
        let a = tape.constant_row(action);
        let diff = tape.sub(a, mean)?;
        let neg_ls = tape.neg(vars.log_std);
        let inv_std = tape.exp(neg_ls);
        let t = tape.mul(diff, inv_std)?;
        let sq = tape.mul(t, t)?;
        let half_sq = tape.scale(sq, 0.5);
        let terms = tape.add(half_sq, vars.log_std)?;
        let total = tape.sum(terms);
        let neg = tape.neg(total);
        Ok(tape.add_scalar(
            neg,
            (-0.5 * LN_2PI * self.cfg.latent as f64) as f32,
        ))
    }

    pub fn critic_var(
        &self,
        tape: &mut Tape,
        vars: &AdapterVars,
        h_g: Var,
    ) -> Result<Var, TensorError> {
        let l1 = tape.matmul(h_g, vars.c_w1)?;
        let l1 = tape.add_bias(l1, vars.c_b1)?;
        let a1 = tape.tanh(l1);
        let l2 = tape.matmul(a1, vars.c_w2)?;
        tape.add_bias(l2, vars.c_b2)
    }

    /// Action distribution for a graph state.
    pub fn policy_dist(&self, h_g: &[f32]) -> Result<PolicyDist, AdapterError> {
        if h_g.len() != self.cfg.input {
            return Err(AdapterError::BadDim {
                expected: self.cfg.input,
                got: h_g.len(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let h = tape.constant_row(h_g);
        let mean = self.policy_mean_var(&mut tape, &vars, h)?;
        let mean = tape.value_f32(mean);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(AdapterError::NonFinite("policy mean"));
        }
        let std: Vec<f32> = self.log_std.data().iter().map(|&ls| ls.exp()).collect();
        if std.iter().any(|v| !v.is_finite()) {
            return Err(AdapterError::NonFinite("policy std"));
        }
        Ok(PolicyDist { mean, std })
    }

    /// V(s) for a graph state.
    pub fn critic_value(&self, h_g: &[f32]) -> Result<f32, AdapterError> {
        Ok(self.critic_value_precise(h_g)? as f32)
    }

    /// V(s) at the tape's internal precision, for finite-difference checks.
    pub fn critic_value_precise(&self, h_g: &[f32]) -> Result<f64, AdapterError> {
        if h_g.len() != self.cfg.input {
            return Err(AdapterError::BadDim {
                expected: self.cfg.input,
                got: h_g.len(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let h = tape.constant_row(h_g);
        let v = self.critic_var(&mut tape, &vars, h)?;
        let out = tape.value(v)[0];
        if !out.is_finite() {
            return Err(AdapterError::NonFinite("critic value"));
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path, config_hash: u64) -> Result<(), AdapterError> {
        let mut ck = Checkpoint::new();
        for (name, t) in self.flat() {
            ck.insert(&format!("adapter.{name}"), t.clone());
        }
        ck.insert_scalar("meta.input", self.cfg.input as f32);
        ck.insert_scalar("meta.hidden", self.cfg.hidden as f32);
        ck.insert_scalar("meta.latent", self.cfg.latent as f32);
        ck.insert(
            "meta.config_hash",
            crate::gnn::config_hash_tensor(config_hash),
        );
        ck.save(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AdapterError> {
        let ck = Checkpoint::load(path)?;
        let cfg = AdapterConfig {
            input: ck.get_scalar("meta.input")? as usize,
            hidden: ck.get_scalar("meta.hidden")? as usize,
            latent: ck.get_scalar("meta.latent")? as usize,
        };
        let mut rng = Rng::from_seed(0);
        let mut model = AdapterModel::init(&cfg, &mut rng);
        for (name, t) in model.flat_mut() {
            *t = ck.get(&format!("adapter.{name}"))?.clone();
        }
        Ok(model)
    }
}

/// Shift the latent mean by an action; sigma is untouched.
pub fn shifted_latent(g: &LatentGaussian, action: &[f32]) -> Result<LatentGaussian, AdapterError> {
    if action.len() != g.mu.len() {
        return Err(AdapterError::BadDim {
            expected: g.mu.len(),
            got: action.len(),
        });
    }
    Ok(LatentGaussian {
        mu: g.mu.iter().zip(action).map(|(&m, &a)| m + a).collect(),
        log_sigma: g.log_sigma.clone(),
    })
}
