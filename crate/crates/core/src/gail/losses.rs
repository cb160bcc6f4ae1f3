use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{AdamState, Graph, ParamStore, Tensor, Var};
use crate::envs::NoiseSpec;
use crate::error::{Error, Result};
use crate::nets::{entropy_var, log_prob_rows, Discriminator, DiscriminatorNet, PolicyNet, ValueNet};
use crate::perturb::{pga_disc, pga_gen, reg_disc_term, reg_gen_term};

use super::config::{RegSchedule, TrainConfig};

const D_FLOOR: f64 = 1e-8;

/// `−log D` with `D` clamped to `[1e-8, 1 − 1e-8]`.
pub fn surrogate_reward(d: f64) -> f64 {
    -d.clamp(D_FLOOR, 1.0 - D_FLOOR).ln()
}

/// Generalised advantage estimation over one trajectory. `bootstrap` is the
/// value of the state after the last step (zero for a true terminal).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    discount: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Error::check_dim("gae values", rewards.len(), values.len())?;
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let td = rewards[t] + discount * next - values[t];
        running = td + discount * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Rescales to zero mean and unit (population) std; constant input maps to zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscLosses {
    pub bce: f64,
    pub reg: f64,
}

/// `mean softplus(−z)` over policy pairs plus `mean softplus(z)` over demo
/// pairs, i.e. `−[mean log D | policy + mean log(1 − D) | demo]`.
pub fn disc_bce<'g, D: Discriminator>(
    g: &'g Graph,
    disc: &D,
    gen_states: &Tensor,
    gen_actions: &Tensor,
    demo_states: &Tensor,
    demo_actions: &Tensor,
) -> Var<'g> {
    let zg = disc.logits(g, g.constant(gen_states.clone()), g.constant(gen_actions.clone()));
    let zd = disc.logits(g, g.constant(demo_states.clone()), g.constant(demo_actions.clone()));
    zg.neg().softplus().mean().add(zd.softplus().mean())
}

/// Inputs to one discriminator step. States are normalised.
pub struct DiscBatch<'a> {
    pub gen_states: &'a [Vec<f64>],
    pub gen_actions: &'a [Vec<f64>],
    pub demo_states: &'a [Vec<f64>],
    pub demo_actions: &'a [Vec<f64>],
}

/// One Adam step on the (optionally regularised) discriminator loss.
pub fn disc_update<R: Rng + ?Sized>(
    disc: &mut DiscriminatorNet,
    adam: &mut AdamState,
    batch: &DiscBatch<'_>,
    cfg: &TrainConfig,
    noise_rng: &mut R,
    pga_rng: &mut R,
) -> Result<DiscLosses> {
    if batch.gen_states.is_empty() || batch.demo_states.is_empty() {
        return Err(Error::Config("discriminator update needs both batches".into()));
    }
    let noisy = |states: &[Vec<f64>], noise: &NoiseSpec, rng: &mut R| -> Vec<Vec<f64>> {
        states.iter().map(|s| noise.apply(s, rng)).collect()
    };
    let (gen_s, demo_s) = match cfg.disc_noise() {
        Some(n) => (
            noisy(batch.gen_states, n, noise_rng),
            noisy(batch.demo_states, n, noise_rng),
        ),
        None => (batch.gen_states.to_vec(), batch.demo_states.to_vec()),
    };
    let gs = Tensor::from_rows(&gen_s);
    let ga = Tensor::from_rows(batch.gen_actions);
    let ds = Tensor::from_rows(&demo_s);
    let da = Tensor::from_rows(batch.demo_actions);

    let reg_deltas = match cfg.disc_reg() {
        Some(reg) => {
            let states: Vec<Vec<f64>> = gen_s.iter().chain(&demo_s).cloned().collect();
            let actions: Vec<Vec<f64>> = batch
                .gen_actions
                .iter()
                .chain(batch.demo_actions)
                .cloned()
                .collect();
            let pga = pga_disc(&*disc, &states, &actions, &reg.perturbation, pga_rng)?;
            Some((reg.reg_weight, states, actions, pga.deltas))
        }
        None => None,
    };

    let g = Graph::new();
    let bce = disc_bce(&g, &*disc, &gs, &ga, &ds, &da);
    let mut losses = DiscLosses {
        bce: bce.item(),
        reg: 0.0,
    };
    let total = match &reg_deltas {
        Some((kappa, states, actions, deltas)) => {
            let r = reg_disc_term(
                &g,
                &*disc,
                &Tensor::from_rows(states),
                &Tensor::from_rows(actions),
                deltas,
            );
            losses.reg = r.item();
            bce.add(r.scale(*kappa))
        }
        None => bce,
    };
    if !total.item().is_finite() {
        return Err(Error::NonFinite(format!(
            "discriminator loss (bce {}, reg {})",
            losses.bce, losses.reg
        )));
    }
    disc.params.zero_grads();
    g.backward_into(total, &mut [&mut disc.params])
        .expect("scalar loss");
    step(adam, &mut disc.params, cfg.max_grad_norm, "discriminator")?;
    Ok(losses)
}

fn step(adam: &mut AdamState, params: &mut ParamStore, clip: Option<f64>, what: &str) -> Result<()> {
    if !params.flat_grads().iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite(format!("{what} gradient")));
    }
    if let Some(max) = clip {
        params.clip_grad_norm(max);
    }
    adam.step(params);
    Ok(())
}

/// Aligned samples for one generator update. `obs` are the normalised
/// observations the policy acted on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    fn select(&self, idx: &[usize]) -> PpoBatch {
        PpoBatch {
            obs: idx.iter().map(|&i| self.obs[i].clone()).collect(),
            actions: idx.iter().map(|&i| self.actions[i].clone()).collect(),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// The graph pieces of one minibatch loss, kept separate for logging and checks.
pub struct GenLossTerms<'g> {
    pub ppo: Var<'g>,
    pub entropy: Var<'g>,
    pub value: Var<'g>,
    pub reg: Option<Var<'g>>,
    pub total: Var<'g>,
}

/// `−mean min(ρA, clip(ρ, 1±ε)A) − λH + c_v·mean (V − R)² + κ R_g`, where the
/// regulariser is included when `reg` carries `(κ, δ per row)`.
pub fn gen_loss<'g>(
    g: &'g Graph,
    policy: &PolicyNet,
    value: &ValueNet,
    mb: &PpoBatch,
    cfg: &TrainConfig,
    reg: Option<(f64, &[Vec<f64>])>,
) -> GenLossTerms<'g> {
    let n = mb.len();
    let obs = Tensor::from_rows(&mb.obs);
    let x = g.constant(obs.clone());
    let mean = policy.mean_var(g, x);
    let log_std_row = policy.log_std_var(g);
    let lp = log_prob_rows(mean, log_std_row.broadcast_rows(n), g.constant(Tensor::from_rows(&mb.actions)));
    let ratio = lp
        .sub(g.constant(Tensor::new(vec![n, 1], mb.old_log_probs.clone())))
        .exp();
    let adv = g.constant(Tensor::new(vec![n, 1], mb.advantages.clone()));
    let eps = cfg.ppo_clip;
    let surr = ratio
        .mul(adv)
        .minimum(ratio.clamp(1.0 - eps, 1.0 + eps).mul(adv));
    let ppo = surr.mean().neg();
    let entropy = entropy_var(log_std_row);
    let v = value.forward(g, x);
    let vf = v
        .sub(g.constant(Tensor::new(vec![n, 1], mb.returns.clone())))
        .square()
        .mean();
    let mut total = ppo.add(vf.scale(cfg.value_coef));
    if cfg.entropy_coef != 0.0 {
        total = total.sub(entropy.scale(cfg.entropy_coef));
    }
    let reg = reg.map(|(kappa, deltas)| {
        let r = reg_gen_term(g, policy, &obs, deltas);
        total = total.add(r.scale(kappa));
        r
    });
    GenLossTerms {
        ppo,
        entropy,
        value: vf,
        reg,
        total,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenLosses {
    pub ppo: f64,
    pub entropy: f64,
    pub value: f64,
    pub reg: f64,
}

/// `ppo_epochs` passes of shuffled minibatch PPO on policy and value networks.
#[allow(clippy::too_many_arguments)]
pub fn gen_update<R: Rng + ?Sized>(
    policy: &mut PolicyNet,
    value: &mut ValueNet,
    policy_adam: &mut AdamState,
    value_adam: &mut AdamState,
    batch: &PpoBatch,
    cfg: &TrainConfig,
    rng: &mut R,
    pga_rng: &mut R,
) -> Result<GenLosses> {
    if batch.is_empty() {
        return Err(Error::Config("empty generator batch".into()));
    }
    let reg = cfg.gen_reg().copied();
    let fresh_deltas = |policy: &PolicyNet, rng: &mut R| -> Result<Vec<Vec<f64>>> {
        let spec = &reg.expect("regulariser active").perturbation;
        Ok(pga_gen(policy, &batch.obs, spec, rng)?.deltas)
    };
    let mut deltas = match (reg, cfg.reg_schedule) {
        (Some(_), RegSchedule::PerIteration) => Some(fresh_deltas(&*policy, pga_rng)?),
        _ => None,
    };
    let mut sums = GenLosses::default();
    let mut count = 0usize;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..cfg.ppo_epochs {
        if reg.is_some() && cfg.reg_schedule == RegSchedule::PerEpoch {
            deltas = Some(fresh_deltas(&*policy, pga_rng)?);
        }
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let mb = batch.select(idx);
            let mb_deltas: Option<Vec<Vec<f64>>> = deltas
                .as_ref()
                .map(|d| idx.iter().map(|&i| d[i].clone()).collect());
            let g = Graph::new();
            let terms = gen_loss(
                &g,
                policy,
                value,
                &mb,
                cfg,
                reg.map(|r| r.reg_weight).zip(mb_deltas.as_deref()),
            );
            let total = terms.total.item();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "generator loss (ppo {}, value {})",
                    terms.ppo.item(),
                    terms.value.item()
                )));
            }
            sums.ppo += terms.ppo.item();
            sums.entropy += terms.entropy.item();
            sums.value += terms.value.item();
            sums.reg += terms.reg.map_or(0.0, |r| r.item());
            count += 1;
            policy.params.zero_grads();
            value.params.zero_grads();
            g.backward_into(terms.total, &mut [&mut policy.params, &mut value.params])
                .expect("scalar loss");
            step(policy_adam, &mut policy.params, cfg.max_grad_norm, "policy")?;
            step(value_adam, &mut value.params, cfg.max_grad_norm, "value")?;
        }
    }
    let k = count as f64;
    Ok(GenLosses {
        ppo: sums.ppo / k,
        entropy: sums.entropy / k,
        value: sums.value / k,
        reg: sums.reg / k,
    })
}
