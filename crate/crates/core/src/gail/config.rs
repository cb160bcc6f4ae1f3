use serde::{Deserialize, Serialize};

use crate::envs::NoiseSpec;
use crate::error::{Error, Result};
use crate::perturb::PerturbationSpec;

/// Weight and inner-maximisation settings of one local-Lipschitz regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegSpec {
    /// Coefficient `κ` on the regulariser.
    pub reg_weight: f64,
    pub perturbation: PerturbationSpec,
}

impl RegSpec {
    /// False when the term is identically zero and can be skipped outright.
    pub fn is_active(&self) -> bool {
        self.reg_weight != 0.0 && !self.perturbation.is_trivial()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    Natural,
    /// Noise on the discriminator's state inputs during training.
    NoisyDisc(NoiseSpec),
    /// Noise on the policy's observations during training.
    NoisyGen(NoiseSpec),
    RegDisc(RegSpec),
    RegGen(RegSpec),
}

/// How often the generator regulariser's perturbations are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegSchedule {
    PerEpoch,
    PerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d::discount")]
    pub discount: f64,
    #[serde(default = "d::gae_lambda")]
    pub gae_lambda: f64,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::ppo_epochs")]
    pub ppo_epochs: usize,
    #[serde(default = "d::ppo_clip")]
    pub ppo_clip: f64,
    /// `λ` on the policy entropy bonus.
    #[serde(default)]
    pub entropy_coef: f64,
    #[serde(default = "d::value_coef")]
    pub value_coef: f64,
    /// Global gradient-norm clip per network; `None` disables clipping.
    #[serde(default = "d::max_grad_norm")]
    pub max_grad_norm: Option<f64>,
    /// Must be a multiple of the env horizon; episodes are collected side by side.
    #[serde(default = "d::steps_per_iter")]
    pub steps_per_iter: usize,
    #[serde(default = "d::minibatch_size")]
    pub minibatch_size: usize,
    #[serde(default = "d::total_env_steps")]
    pub total_env_steps: usize,
    /// Adam steps on the discriminator per iteration, each on a fresh
    /// `minibatch_size` sample of policy pairs plus as many demo pairs.
    #[serde(default = "d::disc_updates_per_iter")]
    pub disc_updates_per_iter: usize,
    #[serde(default = "d::mode")]
    pub mode: Mode,
    #[serde(default = "d::schedule")]
    pub reg_schedule: RegSchedule,
    /// Initial policy log-std (state independent).
    #[serde(default = "d::init_log_std")]
    pub init_log_std: f64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
}

mod d {
    use super::*;
    pub fn discount() -> f64 {
        0.99
    }
    pub fn gae_lambda() -> f64 {
        0.95
    }
    pub fn lr() -> f64 {
        3e-4
    }
    pub fn ppo_epochs() -> usize {
        10
    }
    pub fn ppo_clip() -> f64 {
        0.2
    }
    pub fn value_coef() -> f64 {
        0.5
    }
    pub fn max_grad_norm() -> Option<f64> {
        Some(0.5)
    }
    pub fn steps_per_iter() -> usize {
        2048
    }
    pub fn minibatch_size() -> usize {
        256
    }
    pub fn total_env_steps() -> usize {
        200_000
    }
    pub fn disc_updates_per_iter() -> usize {
        1
    }
    pub fn init_log_std() -> f64 {
        -1.0
    }
    pub fn mode() -> Mode {
        Mode::Natural
    }
    pub fn schedule() -> RegSchedule {
        RegSchedule::PerEpoch
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0,1), got {}", self.discount));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0,1], got {}", self.gae_lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.ppo_clip > 0.0) {
            return bad(format!("ppo_clip must be > 0, got {}", self.ppo_clip));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("entropy_coef and value_coef must be >= 0".into());
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return bad(format!("max_grad_norm must be > 0, got {m}"));
            }
        }
        if self.steps_per_iter == 0 || self.steps_per_iter % horizon != 0 {
            return bad(format!(
                "steps_per_iter ({}) must be a positive multiple of the horizon ({horizon})",
                self.steps_per_iter
            ));
        }
        if self.minibatch_size == 0 || self.ppo_epochs == 0 {
            return bad("minibatch_size and ppo_epochs must be >= 1".into());
        }
        if self.total_env_steps < self.steps_per_iter {
            return bad("total_env_steps must be >= steps_per_iter".into());
        }
        match &self.mode {
            Mode::Natural => Ok(()),
            Mode::NoisyDisc(n) | Mode::NoisyGen(n) => n.validate(),
            Mode::RegDisc(r) | Mode::RegGen(r) => {
                if !(r.reg_weight >= 0.0 && r.reg_weight.is_finite()) {
                    return bad(format!("reg_weight must be >= 0, got {}", r.reg_weight));
                }
                r.perturbation.validate()
            }
        }
    }

    pub fn iterations(&self) -> usize {
        self.total_env_steps / self.steps_per_iter
    }

    /// The active discriminator regulariser, if any.
    pub fn disc_reg(&self) -> Option<&RegSpec> {
        match &self.mode {
            Mode::RegDisc(r) if r.is_active() => Some(r),
            _ => None,
        }
    }

    pub fn gen_reg(&self) -> Option<&RegSpec> {
        match &self.mode {
            Mode::RegGen(r) if r.is_active() => Some(r),
            _ => None,
        }
    }

    pub fn disc_noise(&self) -> Option<&NoiseSpec> {
        match &self.mode {
            Mode::NoisyDisc(n) if !n.is_identity() => Some(n),
            _ => None,
        }
    }

    pub fn gen_noise(&self) -> Option<&NoiseSpec> {
        match &self.mode {
            Mode::NoisyGen(n) if !n.is_identity() => Some(n),
            _ => None,
        }
    }
}
