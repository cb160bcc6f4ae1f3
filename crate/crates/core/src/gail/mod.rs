//! Adversarial imitation: rollouts, discriminator and PPO generator updates,
//! the noisy baselines and the local-Lipschitz regularised variants.

mod config;
mod losses;
mod train;

pub use config::{Mode, RegSchedule, RegSpec, TrainConfig};
pub use losses::{
    disc_bce, disc_update, gae, gen_loss, gen_update, normalize_advantages, surrogate_reward, DiscBatch,
    DiscLosses, GenLossTerms, GenLosses, PpoBatch,
};
pub use train::{
    read_metrics, train, write_metrics, Checkpoint, MetricsRow, Rollout, RunPaths, Trainer, CHECKPOINT_VERSION,
};

#[cfg(test)]
mod tests;
