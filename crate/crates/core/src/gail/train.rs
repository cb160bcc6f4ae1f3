use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph, ParamStore, Tensor};
use crate::envs::{DemoRecord, EnvSpec};
use crate::error::{Error, Result};
use crate::nets::{
    log_prob_rows, Discriminator, DiscriminatorNet, GaussianPolicy, HeadInit, ObsNormalizer, PolicyNet,
    ValueNet,
};

use super::config::TrainConfig;
use super::losses::{
    disc_update, gae, gen_update, normalize_advantages, surrogate_reward, DiscBatch, PpoBatch,
};

pub const CHECKPOINT_VERSION: &str = "llgail-checkpoint-v1";

/// RNG streams. Keeping perturbation search and observation noise off the main
/// stream means a mode that never draws from them replays the baseline exactly.
const PGA_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// One row of the per-iteration metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub env_steps: usize,
    pub disc_bce: f64,
    pub disc_reg: f64,
    pub gen_ppo_loss: f64,
    pub gen_reg: f64,
    pub entropy: f64,
    pub rollout_env_return_mean: f64,
}

/// Everything needed to act with, evaluate or resume a trained agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version_tag: String,
    pub config_hash: String,
    pub seed: u64,
    pub env: EnvSpec,
    pub iter: usize,
    pub env_steps: usize,
    pub policy: serde_json::Value,
    pub value: serde_json::Value,
    pub disc: serde_json::Value,
    pub normalizer: ObsNormalizer,
}

impl Checkpoint {
    pub fn policy(&self) -> Result<PolicyNet> {
        let store = ParamStore::from_json_value(self.policy.clone())?;
        PolicyNet::from_params(self.env.state_dim(), self.env.action_dim(), store)
    }

    pub fn value_net(&self) -> Result<ValueNet> {
        let store = ParamStore::from_json_value(self.value.clone())?;
        ValueNet::from_params(self.env.state_dim(), store)
    }

    pub fn discriminator(&self) -> Result<DiscriminatorNet> {
        let store = ParamStore::from_json_value(self.disc.clone())?;
        DiscriminatorNet::from_params(self.env.state_dim(), self.env.action_dim(), store)
    }

    /// The normaliser with updates disabled, as used at evaluation time.
    pub fn frozen_normalizer(&self) -> ObsNormalizer {
        let mut n = self.normalizer.clone();
        n.frozen = true;
        n
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json("checkpoint", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        if ck.version_tag != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint version {:?}",
                path.display(),
                ck.version_tag
            )));
        }
        if ck.normalizer.dim() != ck.env.state_dim() {
            return Err(Error::Config(format!("{}: normaliser does not match env", path.display())));
        }
        Ok(ck)
    }
}

/// One iteration's worth of on-policy experience.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub raw_states: Vec<Vec<f64>>,
    /// Clean normalised states (discriminator inputs).
    pub states: Vec<Vec<f64>>,
    pub ppo: PpoBatch,
    /// Actions as executed (clipped to the env bounds); the discriminator sees these.
    pub env_actions: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub surrogate_rewards: Vec<f64>,
    pub episode_returns: Vec<f64>,
}

/// Mutable training state for one run.
pub struct Trainer {
    pub env: EnvSpec,
    pub cfg: TrainConfig,
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub disc: DiscriminatorNet,
    pub normalizer: ObsNormalizer,
    policy_adam: AdamState,
    value_adam: AdamState,
    disc_adam: AdamState,
    demo_states: Vec<Vec<f64>>,
    demo_actions: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    pga_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    pub iter: usize,
    pub env_steps: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Trainer {
    pub fn new(env: EnvSpec, cfg: TrainConfig, demos: &[DemoRecord]) -> Result<Self> {
        env.validate()?;
        cfg.validate(env.horizon)?;
        let (sd, ad) = (env.state_dim(), env.action_dim());
        let mut demo_states = Vec::new();
        let mut demo_actions = Vec::new();
        for d in demos {
            for (s, a) in d.states.iter().zip(&d.actions) {
                Error::check_dim("demo state", sd, s.len())?;
                Error::check_dim("demo action", ad, a.len())?;
                demo_states.push(s.clone());
                demo_actions.push(a.clone());
            }
        }
        if demo_states.is_empty() {
            return Err(Error::Config("no demonstration pairs".into()));
        }
        // observation scale is fitted once to the demonstrations and then frozen, so
        // normalised units (noise levels, perturbation radii) mean the same thing
        // throughout training and at evaluation
        let mut normalizer = ObsNormalizer::new(sd);
        normalizer.update(&demo_states);
        normalizer.frozen = true;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = PolicyNet::new(sd, ad, HeadInit::Orthogonal(0.01), cfg.init_log_std, &mut rng);
        let value = ValueNet::new(sd, &mut rng);
        let disc = DiscriminatorNet::new(sd, ad, HeadInit::Orthogonal(1.0), &mut rng);
        Ok(Trainer {
            policy_adam: AdamState::new(cfg.lr),
            value_adam: AdamState::new(cfg.lr),
            disc_adam: AdamState::new(cfg.lr),
            pga_rng: stream(cfg.seed, PGA_STREAM),
            noise_rng: stream(cfg.seed, NOISE_STREAM),
            normalizer,
            env,
            cfg,
            policy,
            value,
            disc,
            demo_states,
            demo_actions,
            rng,
            iter: 0,
            env_steps: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.iter >= self.cfg.iterations()
    }

    fn policy_view(&mut self, norm_states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self.cfg.gen_noise() {
            Some(n) => norm_states.iter().map(|s| n.apply(s, &mut self.noise_rng)).collect(),
            None => norm_states.to_vec(),
        }
    }

    /// Runs `steps_per_iter / horizon` episodes side by side with the stochastic
    /// policy, scores them with the current discriminator and computes advantages.
    pub fn collect(&mut self) -> Result<Rollout> {
        let env = self.env;
        let (h, n_eps) = (env.horizon, self.cfg.steps_per_iter / env.horizon);
        let mut cur: Vec<Vec<f64>> = (0..n_eps).map(|_| env.reset(&mut self.rng)).collect();
        // per-episode sequences, flattened episode-major at the end
        let mut raw = vec![Vec::with_capacity(h); n_eps];
        let mut clean = vec![Vec::with_capacity(h); n_eps];
        let mut obs = vec![Vec::with_capacity(h); n_eps];
        let mut acts = vec![Vec::with_capacity(h); n_eps];
        let mut returns = vec![0.0; n_eps];
        for _ in 0..h {
            let norm = self.normalizer.normalize_all(&cur);
            let view = self.policy_view(&norm);
            let dists = self.policy.dists(&view)?;
            for e in 0..n_eps {
                let d = &dists[e];
                let a: Vec<f64> = (0..d.dim())
                    .map(|i| d.mean[i] + d.log_std[i].exp() * self.rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let (next, r) = env.step(&cur[e], &a)?;
                returns[e] += r;
                raw[e].push(std::mem::replace(&mut cur[e], next));
                clean[e].push(norm[e].clone());
                obs[e].push(view[e].clone());
                acts[e].push(a);
            }
        }
        let final_view = {
            let norm = self.normalizer.normalize_all(&cur);
            self.policy_view(&norm)
        };
        let flat = |v: Vec<Vec<Vec<f64>>>| -> Vec<Vec<f64>> { v.into_iter().flatten().collect() };
        let (raw, clean, obs, acts) = (flat(raw), flat(clean), flat(obs), flat(acts));

        let env_acts: Vec<Vec<f64>> = acts.iter().map(|a| env.clip_action(a)).collect();
        let d = self.disc.probs(&clean, &env_acts)?;
        let rewards: Vec<f64> = d.into_iter().map(surrogate_reward).collect();
        let values = self.value.values(&obs);
        let boot = self.value.values(&final_view);
        let mut advantages = Vec::with_capacity(raw.len());
        let mut rets = Vec::with_capacity(raw.len());
        for e in 0..n_eps {
            let span = e * h..(e + 1) * h;
            // episodes end by truncation at the horizon, so bootstrap from V(s_H)
            let (a, r) = gae(
                &rewards[span.clone()],
                &values[span],
                boot[e],
                self.cfg.discount,
                self.cfg.gae_lambda,
            )?;
            advantages.extend(a);
            rets.extend(r);
        }
        normalize_advantages(&mut advantages);
        let old_log_probs = {
            let g = Graph::new();
            let (m, l) = self.policy.dist_vars(&g, g.constant(Tensor::from_rows(&obs)));
            log_prob_rows(m, l, g.constant(Tensor::from_rows(&acts))).to_vec()
        };
        Ok(Rollout {
            raw_states: raw,
            states: clean,
            ppo: PpoBatch {
                obs,
                actions: acts,
                old_log_probs,
                advantages,
                returns: rets,
            },
            env_actions: env_acts,
            values,
            surrogate_rewards: rewards,
            episode_returns: returns,
        })
    }

    /// Collect, update the discriminator, update the generator.
    pub fn iteration(&mut self) -> Result<MetricsRow> {
        let roll = self.collect()?;
        let n = roll.states.len();
        let mb = self.cfg.minibatch_size.min(n);
        let (mut bce, mut dreg) = (0.0, 0.0);
        for _ in 0..self.cfg.disc_updates_per_iter {
            let gi = sample(&mut self.rng, n, mb).into_vec();
            let di: Vec<usize> = if self.demo_states.len() >= mb {
                sample(&mut self.rng, self.demo_states.len(), mb).into_vec()
            } else {
                (0..mb).map(|_| self.rng.gen_range(0..self.demo_states.len())).collect()
            };
            let pick = |v: &[Vec<f64>], idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| v[i].clone()).collect() };
            let gen_states = pick(&roll.states, &gi);
            let gen_actions = pick(&roll.env_actions, &gi);
            let demo_states = self.normalizer.normalize_all(&pick(&self.demo_states, &di));
            let demo_actions = pick(&self.demo_actions, &di);
            let l = disc_update(
                &mut self.disc,
                &mut self.disc_adam,
                &DiscBatch {
                    gen_states: &gen_states,
                    gen_actions: &gen_actions,
                    demo_states: &demo_states,
                    demo_actions: &demo_actions,
                },
                &self.cfg,
                &mut self.noise_rng,
                &mut self.pga_rng,
            )?;
            bce += l.bce;
            dreg += l.reg;
        }
        let k = self.cfg.disc_updates_per_iter.max(1) as f64;
        let gl = gen_update(
            &mut self.policy,
            &mut self.value,
            &mut self.policy_adam,
            &mut self.value_adam,
            &roll.ppo,
            &self.cfg,
            &mut self.rng,
            &mut self.pga_rng,
        )?;
        self.iter += 1;
        self.env_steps += n;
        Ok(MetricsRow {
            iter: self.iter,
            env_steps: self.env_steps,
            disc_bce: bce / k,
            disc_reg: dreg / k,
            gen_ppo_loss: gl.ppo,
            gen_reg: gl.reg,
            entropy: gl.entropy,
            rollout_env_return_mean: roll.episode_returns.iter().sum::<f64>() / roll.episode_returns.len() as f64,
        })
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            version_tag: CHECKPOINT_VERSION.into(),
            config_hash: config_hash.into(),
            seed: self.cfg.seed,
            env: self.env,
            iter: self.iter,
            env_steps: self.env_steps,
            policy: self.policy.params.to_json_value(),
            value: self.value.params.to_json_value(),
            disc: self.disc.params.to_json_value(),
            normalizer: self.normalizer.clone(),
        }
    }
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }
    pub fn periodic_checkpoint(&self, iter: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_iter{iter:05}.json"))
    }
    pub fn last_good(&self) -> PathBuf {
        self.dir.join("checkpoint_last_good.json")
    }
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

/// Full training run. Metrics are rewritten after every iteration; on a
/// non-finite loss the state from before the failing iteration is saved as
/// `checkpoint_last_good.json` and the error is returned.
pub fn train(
    env: EnvSpec,
    cfg: TrainConfig,
    demos: &[DemoRecord],
    config_hash: &str,
    out: &RunPaths,
) -> Result<(Checkpoint, Vec<MetricsRow>)> {
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    let mut trainer = Trainer::new(env, cfg, demos)?;
    let mut rows = Vec::new();
    while !trainer.finished() {
        let last_good = trainer.checkpoint(config_hash);
        match trainer.iteration() {
            Ok(row) => rows.push(row),
            Err(e @ Error::NonFinite(_)) => {
                log::error!("aborting at iteration {}: {e}", trainer.iter + 1);
                last_good.save(&out.last_good())?;
                write_metrics(&rows, &out.metrics())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        let every = trainer.cfg.checkpoint_every;
        if every > 0 && trainer.iter % every == 0 && !trainer.finished() {
            trainer.checkpoint(config_hash).save(&out.periodic_checkpoint(trainer.iter))?;
        }
        log::info!(
            "iter {} steps {} return {:.2} bce {:.4}",
            trainer.iter,
            trainer.env_steps,
            rows.last().map_or(0.0, |r| r.rollout_env_return_mean),
            rows.last().map_or(0.0, |r| r.disc_bce)
        );
    }
    write_metrics(&rows, &out.metrics())?;
    let ck = trainer.checkpoint(config_hash);
    ck.save(&out.checkpoint())?;
    Ok((ck, rows))
}
