use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{AdamState, Graph, ParamStore, Tensor};
use crate::envs::{expert_demos, EnvKind, EnvSpec, NoiseSpec};
use crate::error::Error;
use crate::fd::{central_gradient, max_rel_error};
use crate::nets::{Discriminator, DiscriminatorNet, HeadInit, PolicyNet, ValueNet};
use crate::perturb::{Norm, PerturbInit, PerturbationSpec};

#[test]
fn surrogate_reward_values() {
    assert!((surrogate_reward(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    for w in grid.windows(2) {
        assert!(surrogate_reward(w[0]) > surrogate_reward(w[1]));
    }
    assert!(surrogate_reward(1.0) > 0.0 && surrogate_reward(1.0) < 1e-7);
    assert!(surrogate_reward(0.0).is_finite());
}

#[test]
fn gae_examples() {
    let (a, r) = gae(&[1.0], &[0.0], 0.0, 0.99, 0.95).unwrap();
    assert_eq!((a[0], r[0]), (1.0, 1.0));

    let rewards = [0.3, -1.0, 2.0];
    let values = [0.5, 0.1, -0.4];
    let (a, _) = gae(&rewards, &values, 0.7, 0.9, 0.0).unwrap();
    let next = [0.1, -0.4, 0.7];
    for t in 0..3 {
        assert_eq!(a[t], rewards[t] + 0.9 * next[t] - values[t]);
    }

    // brute-force sum of discounted TD errors
    let (g, l) = (0.9, 0.8);
    let (a, r) = gae(&rewards, &values, 0.7, g, l).unwrap();
    let td: Vec<f64> = (0..3).map(|t| rewards[t] + g * next[t] - values[t]).collect();
    for t in 0..3 {
        let want: f64 = (t..3).map(|k| (g * l).powi((k - t) as i32) * td[k]).sum();
        assert!((a[t] - want).abs() < 1e-14);
        assert!((r[t] - (a[t] + values[t])).abs() < 1e-15);
    }
    assert!(gae(&rewards, &values[..2], 0.0, g, l).is_err());
}

#[test]
fn advantage_normalisation() {
    let mut a = vec![1.0, 2.0, 3.0, 6.0];
    normalize_advantages(&mut a);
    let mean: f64 = a.iter().sum::<f64>() / 4.0;
    let var: f64 = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
}

fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn reg_disc_cfg(kappa: f64, radius: f64) -> TrainConfig {
    TrainConfig {
        mode: Mode::RegDisc(RegSpec {
            reg_weight: kappa,
            perturbation: PerturbationSpec::new(Norm::L2, radius, 10),
        }),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_head_disc_bce_is_two_log_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut disc = DiscriminatorNet::new(2, 1, HeadInit::Zero, &mut rng);
    let (gs, ga, ds, da) = (batch(&mut rng, 8, 2), batch(&mut rng, 8, 1), batch(&mut rng, 8, 2), batch(&mut rng, 8, 1));
    let b = DiscBatch {
        gen_states: &gs,
        gen_actions: &ga,
        demo_states: &ds,
        demo_actions: &da,
    };
    let mut adam = AdamState::new(3e-4);
    let mut r2 = rng.clone();
    let l = disc_update(&mut disc, &mut adam, &b, &TrainConfig::default(), &mut rng, &mut r2).unwrap();
    assert!((l.bce - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(l.reg, 0.0);
    let empty: Vec<Vec<f64>> = Vec::new();
    let bad = DiscBatch {
        gen_states: &empty,
        gen_actions: &empty,
        demo_states: &ds,
        demo_actions: &da,
    };
    assert!(disc_update(&mut disc, &mut adam, &bad, &TrainConfig::default(), &mut rng, &mut r2).is_err());
}

#[test]
fn zero_weight_disc_update_matches_natural_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let disc0 = DiscriminatorNet::new(2, 1, HeadInit::Orthogonal(1.0), &mut rng);
    let (gs, ga, ds, da) = (batch(&mut rng, 16, 2), batch(&mut rng, 16, 1), batch(&mut rng, 16, 2), batch(&mut rng, 16, 1));
    let b = DiscBatch {
        gen_states: &gs,
        gen_actions: &ga,
        demo_states: &ds,
        demo_actions: &da,
    };
    let run = |cfg: &TrainConfig| {
        let mut d = disc0.clone();
        let mut adam = AdamState::new(3e-4);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut p = ChaCha8Rng::seed_from_u64(6);
        let l = disc_update(&mut d, &mut adam, &b, cfg, &mut r, &mut p).unwrap();
        (d.params.flat_values(), l)
    };
    let natural = run(&TrainConfig::default());
    for cfg in [reg_disc_cfg(0.0, 0.1), reg_disc_cfg(2.0, 0.0)] {
        let (params, l) = run(&cfg);
        assert_eq!(params, natural.0);
        assert_eq!(l.bce, natural.1.bce);
        assert_eq!(l.reg, 0.0);
    }
    let (params, l) = run(&reg_disc_cfg(2.0, 0.1));
    assert_ne!(params, natural.0);
    assert!(l.reg > 0.0);
}

/// Finite differences over a random subset of coordinates of `store`.
fn fd_check(store: &mut ParamStore, grads: &[f64], coords: &[usize], mut loss: impl FnMut(&ParamStore) -> f64) {
    let base = store.flat_values();
    let sub: Vec<f64> = coords.iter().map(|&i| base[i]).collect();
    let numeric = central_gradient(
        |x| {
            let mut v = base.clone();
            for (k, &i) in coords.iter().enumerate() {
                v[i] = x[k];
            }
            store.set_flat_values(&v);
            loss(store)
        },
        &sub,
        1e-6,
    );
    store.set_flat_values(&base);
    let analytic: Vec<f64> = coords.iter().map(|&i| grads[i]).collect();
    let err = max_rel_error(&analytic, &numeric, 1e-6);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn disc_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut disc = DiscriminatorNet::new(2, 1, HeadInit::Orthogonal(1.0), &mut rng);
    let (gs, ga, ds, da) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 1), batch(&mut rng, 4, 2), batch(&mut rng, 4, 1));
    let states: Vec<Vec<f64>> = gs.iter().chain(&ds).cloned().collect();
    let actions: Vec<Vec<f64>> = ga.iter().chain(&da).cloned().collect();
    let deltas = batch(&mut rng, 8, 2).into_iter().map(|d| d.iter().map(|x| 0.1 * x).collect()).collect::<Vec<_>>();
    let t = |v: &[Vec<f64>]| Tensor::from_rows(v);
    let loss_graph = |disc: &DiscriminatorNet, g: &Graph| {
        let bce = disc_bce(g, disc, &t(&gs), &t(&ga), &t(&ds), &t(&da));
        let r = crate::perturb::reg_disc_term(g, disc, &t(&states), &t(&actions), &deltas);
        bce.add(r.scale(0.7)).item()
    };
    let g = Graph::new();
    let bce = disc_bce(&g, &disc, &t(&gs), &t(&ga), &t(&ds), &t(&da));
    let r = crate::perturb::reg_disc_term(&g, &disc, &t(&states), &t(&actions), &deltas);
    disc.params.zero_grads();
    g.backward_into(bce.add(r.scale(0.7)), &mut [&mut disc.params]).unwrap();
    let grads = disc.params.flat_grads();
    let coords = rand::seq::index::sample(&mut rng, grads.len(), 200).into_vec();
    let (sd, ad) = (2, 1);
    fd_check(&mut disc.params, &grads, &coords, |store| {
        let d = DiscriminatorNet::from_params(sd, ad, store.clone()).unwrap();
        loss_graph(&d, &Graph::new())
    });
}

fn ppo_batch(rng: &mut ChaCha8Rng, policy: &PolicyNet, n: usize) -> PpoBatch {
    let obs = batch(rng, n, policy.params.get("policy.h0.w").unwrap().shape[0]);
    let actions = batch(rng, n, 1);
    let old_log_probs = obs
        .iter()
        .zip(&actions)
        .map(|(s, a)| {
            use crate::nets::GaussianPolicy;
            policy.dist(s).unwrap().log_prob(a)
        })
        .collect();
    PpoBatch {
        obs,
        actions,
        old_log_probs,
        advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        returns: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn first_pass_ratio_is_one_and_terms_add_up() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = PolicyNet::new(3, 1, HeadInit::Orthogonal(0.5), -0.3, &mut rng);
    let value = ValueNet::new(3, &mut rng);
    let b = ppo_batch(&mut rng, &policy, 32);
    let cfg = TrainConfig {
        entropy_coef: 0.01,
        ..TrainConfig::default()
    };
    let deltas = batch(&mut rng, 32, 3);
    let g = Graph::new();
    let terms = gen_loss(&g, &policy, &value, &b, &cfg, Some((0.4, &deltas)));
    let mean_adv = b.advantages.iter().sum::<f64>() / 32.0;
    assert!((terms.ppo.item() + mean_adv).abs() < 1e-12);
    let parts = terms.ppo.item() + cfg.value_coef * terms.value.item() - cfg.entropy_coef * terms.entropy.item()
        + 0.4 * terms.reg.unwrap().item();
    assert!((terms.total.item() - parts).abs() < 1e-12);
}

#[test]
fn gen_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut policy = PolicyNet::new(3, 1, HeadInit::Orthogonal(1.0), -0.3, &mut rng);
    let mut value = ValueNet::new(3, &mut rng);
    let mut b = ppo_batch(&mut rng, &policy, 4);
    // move the ratios off 1 so both clip branches are exercised
    b.old_log_probs.iter_mut().for_each(|l| *l += rng.gen_range(-0.5..0.5));
    let cfg = TrainConfig {
        entropy_coef: 0.05,
        ..TrainConfig::default()
    };
    let g = Graph::new();
    let terms = gen_loss(&g, &policy, &value, &b, &cfg, None);
    policy.params.zero_grads();
    value.params.zero_grads();
    g.backward_into(terms.total, &mut [&mut policy.params, &mut value.params]).unwrap();
    let pg = policy.params.flat_grads();
    let vg = value.params.flat_grads();
    let coords = rand::seq::index::sample(&mut rng, pg.len(), 150).into_vec();
    let v0 = value.clone();
    fd_check(&mut policy.params, &pg, &coords, |store| {
        let p = PolicyNet::from_params(3, 1, store.clone()).unwrap();
        gen_loss(&Graph::new(), &p, &v0, &b, &cfg, None).total.item()
    });
    let coords = rand::seq::index::sample(&mut rng, vg.len(), 100).into_vec();
    let p0 = policy.clone();
    fd_check(&mut value.params, &vg, &coords, |store| {
        let v = ValueNet::from_params(3, store.clone()).unwrap();
        gen_loss(&Graph::new(), &p0, &v, &b, &cfg, None).total.item()
    });
}

/// The smoothness term treats the unperturbed distribution as a fixed target,
/// so its gradient is checked against differences of `D_J(ref, π_θ(s+δ))`.
#[test]
fn gen_reg_gradient_holds_reference_fixed() {
    use crate::divergence::jeffreys;
    use crate::nets::GaussianPolicy;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut policy = PolicyNet::new(3, 1, HeadInit::Orthogonal(1.0), -0.3, &mut rng);
    let states = batch(&mut rng, 4, 3);
    let deltas: Vec<Vec<f64>> = batch(&mut rng, 4, 3).into_iter().map(|d| d.iter().map(|x| 0.2 * x).collect()).collect();
    let shifted: Vec<Vec<f64>> = states.iter().zip(&deltas).map(|(s, d)| s.iter().zip(d).map(|(a, b)| a + b).collect()).collect();
    let reference = policy.dists(&states).unwrap();
    let g = Graph::new();
    let r = crate::perturb::reg_gen_term(&g, &policy, &Tensor::from_rows(&states), &deltas);
    policy.params.zero_grads();
    g.backward_into(r, &mut [&mut policy.params]).unwrap();
    let pg = policy.params.flat_grads();
    let coords = rand::seq::index::sample(&mut rng, pg.len(), 150).into_vec();
    fd_check(&mut policy.params, &pg, &coords, |store| {
        let p = PolicyNet::from_params(3, 1, store.clone()).unwrap();
        let moved = p.dists(&shifted).unwrap();
        reference.iter().zip(&moved).map(|(a, b)| jeffreys(a, b).unwrap()).sum::<f64>() / 4.0
    });
}

#[test]
fn zero_weight_gen_update_is_vanilla_ppo() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let policy = PolicyNet::new(3, 1, HeadInit::Orthogonal(0.5), -0.3, &mut rng);
    let value = ValueNet::new(3, &mut rng);
    let b = ppo_batch(&mut rng, &policy, 64);
    let run = |mode: Mode| {
        let cfg = TrainConfig {
            mode,
            ppo_epochs: 2,
            minibatch_size: 16,
            ..TrainConfig::default()
        };
        let (mut p, mut v) = (policy.clone(), value.clone());
        let (mut pa, mut va) = (AdamState::new(cfg.lr), AdamState::new(cfg.lr));
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut q = ChaCha8Rng::seed_from_u64(9);
        let l = gen_update(&mut p, &mut v, &mut pa, &mut va, &b, &cfg, &mut r, &mut q).unwrap();
        (p.params.flat_values(), l)
    };
    let spec = PerturbationSpec::new(Norm::L2, 0.3, 5).with_init(PerturbInit::RandomInBall);
    let natural = run(Mode::Natural);
    let off = run(Mode::RegGen(RegSpec {
        reg_weight: 0.0,
        perturbation: spec,
    }));
    assert_eq!(off.0, natural.0);
    assert_eq!(off.1, natural.1);
    assert_eq!(off.1.reg, 0.0);
    let on = run(Mode::RegGen(RegSpec {
        reg_weight: 1.0,
        perturbation: spec,
    }));
    assert!(on.1.reg > 0.0);
    assert_ne!(on.0, natural.0);
}

fn small_cfg(mode: Mode) -> TrainConfig {
    TrainConfig {
        steps_per_iter: 256,
        minibatch_size: 64,
        total_env_steps: 768,
        ppo_epochs: 2,
        disc_updates_per_iter: 2,
        mode,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn run_metrics(mode: Mode) -> Vec<MetricsRow> {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator1D);
    let demos = expert_demos(&env, 4, 1).unwrap();
    let mut t = Trainer::new(env, small_cfg(mode), &demos).unwrap();
    let mut rows = Vec::new();
    while !t.finished() {
        rows.push(t.iteration().unwrap());
    }
    rows
}

#[test]
fn training_is_deterministic_and_reductions_are_exact() {
    let natural = run_metrics(Mode::Natural);
    assert_eq!(natural.len(), 3);
    assert_eq!(natural, run_metrics(Mode::Natural));
    let zero_radius = PerturbationSpec::new(Norm::L2, 0.0, 10).with_init(PerturbInit::RandomInBall);
    let live = PerturbationSpec::new(Norm::L2, 0.3, 3).with_init(PerturbInit::RandomInBall);
    for mode in [
        Mode::RegGen(RegSpec {
            reg_weight: 1.0,
            perturbation: zero_radius,
        }),
        Mode::RegGen(RegSpec {
            reg_weight: 0.0,
            perturbation: live,
        }),
        Mode::RegDisc(RegSpec {
            reg_weight: 1.0,
            perturbation: zero_radius,
        }),
        Mode::RegDisc(RegSpec {
            reg_weight: 0.0,
            perturbation: live,
        }),
        Mode::NoisyGen(NoiseSpec::gaussian(0.0)),
        Mode::NoisyDisc(NoiseSpec::uniform_linf(0.0)),
    ] {
        assert_eq!(run_metrics(mode), natural, "{mode:?}");
    }
    let reg = run_metrics(Mode::RegGen(RegSpec {
        reg_weight: 1.0,
        perturbation: live,
    }));
    assert!(reg.iter().all(|r| r.gen_reg > 0.0));
    assert_ne!(reg, natural);
    let noisy = run_metrics(Mode::NoisyDisc(NoiseSpec::uniform_linf(0.03)));
    assert_ne!(noisy, natural);
}

#[test]
fn rollout_invariants() {
    let env = EnvSpec::new(EnvKind::PointReach2D);
    let demos = expert_demos(&env, 3, 2).unwrap();
    let mut t = Trainer::new(env, small_cfg(Mode::Natural), &demos).unwrap();
    let roll = t.collect().unwrap();
    assert_eq!(roll.states.len(), 256);
    assert_eq!(roll.ppo.len(), 256);
    assert_eq!(roll.episode_returns.len(), 2);
    // the discriminator is a deterministic reward function
    let rescored: Vec<f64> = t
        .disc
        .probs(&roll.states, &roll.env_actions)
        .unwrap()
        .into_iter()
        .map(surrogate_reward)
        .collect();
    assert_eq!(rescored, roll.surrogate_rewards);
    let d = t.disc.probs(&roll.states, &roll.env_actions).unwrap();
    assert!(d.iter().all(|&p| p > 0.0 && p < 1.0));
    // recorded log-probs give unit ratios on a fresh evaluation
    let g = Graph::new();
    let terms = gen_loss(&g, &t.policy, &t.value, &roll.ppo, &t.cfg, None);
    let mean_adv = roll.ppo.advantages.iter().sum::<f64>() / 256.0;
    assert!((terms.ppo.item() + mean_adv).abs() < 1e-12);
    let row = t.iteration().unwrap();
    assert!(row.disc_bce >= 0.0);
}

#[test]
fn config_is_strict() {
    assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.001, "lerning_rate": 1}"#).is_err());
    let cfg: TrainConfig = serde_json::from_str(
        r#"{"mode": {"RegGen": {"reg_weight": 0.5, "perturbation": {"norm": "L2", "radius": 0.1, "steps": 10, "init": "RandomInBall"}}}}"#,
    )
    .unwrap();
    assert!(cfg.gen_reg().is_some());
    assert!(cfg.validate(128).is_ok());
    for bad in [
        TrainConfig {
            steps_per_iter: 100,
            ..TrainConfig::default()
        },
        TrainConfig {
            discount: 1.0,
            ..TrainConfig::default()
        },
        reg_disc_cfg(-1.0, 0.1),
        reg_disc_cfg(1.0, -0.1),
    ] {
        assert!(matches!(bad.validate(128), Err(Error::Config(_))));
    }
}

#[test]
fn checkpoint_round_trip_and_nan_abort() {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator1D);
    let demos = expert_demos(&env, 2, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = RunPaths {
        dir: dir.path().join("run"),
    };
    let (ck, rows) = train(env, small_cfg(Mode::Natural), &demos, "abc", &paths).unwrap();
    assert_eq!(read_metrics(&paths.metrics()).unwrap(), rows);
    let back = Checkpoint::load(&paths.checkpoint()).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.policy().unwrap().params.flat_values(), ck.policy().unwrap().params.flat_values());
    assert!(back.frozen_normalizer().frozen);

    let mut poisoned = demos.clone();
    poisoned[0].states[3][0] = f64::NAN;
    let bad = RunPaths {
        dir: dir.path().join("bad"),
    };
    let err = train(env, small_cfg(Mode::Natural), &poisoned, "abc", &bad).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(bad.last_good().exists());
}
