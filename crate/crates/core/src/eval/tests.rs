use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor, Var};
use crate::envs::{expert_demos, EnvKind};
use crate::gail::{Mode, TrainConfig, Trainer};
use crate::nets::{HeadInit, PolicyNet};

/// Mean `W·s`, fixed log-std.
struct Linear {
    w: Tensor,
    log_std: f64,
}

impl GaussianPolicy for Linear {
    fn state_dim(&self) -> usize {
        self.w.shape[0]
    }
    fn action_dim(&self) -> usize {
        self.w.shape[1]
    }
    fn dist_vars<'g>(&self, g: &'g Graph, x: Var<'g>) -> (Var<'g>, Var<'g>) {
        let m = x.matmul(g.constant(self.w.clone()));
        let l = g.constant(Tensor::full(&[1, self.action_dim()], self.log_std)).broadcast_rows(x.rows());
        (m, l)
    }
}

fn unit_normalizer(dim: usize) -> ObsNormalizer {
    let mut n = ObsNormalizer::new(dim);
    n.frozen = true;
    n
}

fn constant_policy(env: &EnvSpec) -> PolicyNet {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = PolicyNet::new(env.state_dim(), env.action_dim(), HeadInit::Zero, -1.0, &mut rng);
    // a large bias saturates the clipped action whatever the input
    p.params.get_mut("policy.out.b").unwrap().data.fill(5.0);
    p
}

#[test]
fn constant_policy_is_noise_invariant_and_has_zero_ellc() {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator1D);
    let p = constant_policy(&env);
    let norm = unit_normalizer(2);
    let rows = noise_sweep(&p, &norm, &env, &DEFAULT_NOISE_LEVELS, NoiseKind::GaussianPerDim, 4, 3).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.mean_return == rows[0].mean_return && r.std_return == rows[0].std_return));
    let states = on_policy_states(&p, &norm, &env, 3, 1).unwrap();
    for r in [0.01, 0.1, 1.0] {
        assert_eq!(ellc_on_states(&p, &states, r, DeltaRule::RandomSphere(Norm::L2), 5).unwrap(), 0.0);
    }
}

#[test]
fn level_zero_matches_plain_mean_action_rollouts() {
    let env = EnvSpec::new(EnvKind::PointReach2D);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = PolicyNet::new(4, 2, HeadInit::Orthogonal(1.0), -1.0, &mut rng);
    let mut norm = ObsNormalizer::new(4);
    norm.update(&[vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 2.0, -1.0], vec![0.5, 0.5, 0.0, 0.0]]);
    norm.frozen = true;
    let rows = noise_sweep(&p, &norm, &env, &[0.0], NoiseKind::GaussianPerDim, 3, 11).unwrap();
    let mut reset = ChaCha8Rng::seed_from_u64(11);
    let returns: Vec<f64> = (0..3)
        .map(|_| {
            let s0 = env.reset(&mut reset);
            env.rollout(s0, |s| p.dist(&norm.normalize(s)).unwrap().mean)
                .unwrap()
                .env_return()
        })
        .collect();
    let mean = returns.iter().sum::<f64>() / 3.0;
    assert!((rows[0].mean_return - mean).abs() < 1e-9);
    let again = noise_sweep(&p, &norm, &env, &[0.0], NoiseKind::GaussianPerDim, 3, 11).unwrap();
    assert_eq!(again, rows);
}

#[test]
fn sweep_is_sorted_reproducible_and_validated() {
    let env = EnvSpec::new(EnvKind::SpringPendulum);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = PolicyNet::new(2, 1, HeadInit::Orthogonal(1.0), -1.0, &mut rng);
    let norm = unit_normalizer(2);
    let rows = noise_sweep(&p, &norm, &env, &[0.3, 0.0, 0.1], NoiseKind::UniformLinfBall, 2, 4).unwrap();
    let levels: Vec<f64> = rows.iter().map(|r| r.noise_level).collect();
    assert_eq!(levels, vec![0.0, 0.1, 0.3]);
    assert!(rows.iter().all(|r| r.episodes == 2));
    assert_eq!(rows, noise_sweep(&p, &norm, &env, &[0.3, 0.0, 0.1], NoiseKind::UniformLinfBall, 2, 4).unwrap());
    assert!(noise_sweep(&p, &norm, &env, &[], NoiseKind::GaussianPerDim, 2, 4).is_err());
    assert!(noise_sweep(&p, &norm, &env, &[-0.1], NoiseKind::GaussianPerDim, 2, 4).is_err());
    assert!(noise_sweep(&p, &norm, &env, &[0.1], NoiseKind::GaussianPerDim, 0, 4).is_err());
}

#[test]
fn isotropic_linear_ellc_is_order_invariant() {
    // with W = c·I and fixed σ, D_J(π(s)‖π(s+δ)) = c²‖δ‖²/σ², whatever s and the direction
    let (c, log_std) = (0.7f64, -0.4f64);
    let mut w = Tensor::full(&[3, 3], 0.0);
    for i in 0..3 {
        w.data[i * 3 + i] = c;
    }
    let p = Linear { w, log_std };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut states: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let r = 0.3;
    let a = ellc_on_states(&p, &states, r, DeltaRule::RandomSphere(Norm::L2), 1).unwrap();
    states.reverse();
    let b = ellc_on_states(&p, &states, r, DeltaRule::RandomSphere(Norm::L2), 1).unwrap();
    let want = c * c * r / (2.0 * log_std).exp();
    assert!((a - want).abs() < 1e-12 && (b - want).abs() < 1e-12);
    assert!(ellc_on_states(&p, &states, 0.0, DeltaRule::RandomSphere(Norm::L2), 1).is_err());
}

#[test]
fn adversarial_ellc_dominates_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = PolicyNet::new(2, 1, HeadInit::Orthogonal(1.0), -1.0, &mut rng);
    let states: Vec<Vec<f64>> = (0..64).map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let random = ellc_on_states(&p, &states, 0.2, DeltaRule::RandomSphere(Norm::L2), 7).unwrap();
    let worst = ellc_on_states(&p, &states, 0.2, DeltaRule::Adversarial { norm: Norm::L2, steps: 10 }, 7).unwrap();
    assert!(worst > random, "{worst} vs {random}");
}

fn small_checkpoint(env: EnvSpec) -> Checkpoint {
    let demos = expert_demos(&env, 2, 1).unwrap();
    let cfg = TrainConfig {
        steps_per_iter: 256,
        minibatch_size: 64,
        total_env_steps: 256,
        ppo_epochs: 1,
        mode: Mode::Natural,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(env, cfg, &demos).unwrap();
    t.iteration().unwrap();
    t.checkpoint("cafe")
}

#[test]
fn reports_round_trip_and_carry_provenance() {
    let env = EnvSpec::new(EnvKind::DoubleIntegrator1D);
    let ck = small_checkpoint(env);
    let dir = tempfile::tempdir().unwrap();

    let noise = eval_noise(&ck, &env, &[0.0, 0.2], NoiseKind::GaussianPerDim, 2, 1).unwrap();
    assert_eq!(noise.meta.config_hash, "cafe");
    let path = dir.path().join("noise.csv");
    noise.write_csv(&path).unwrap();
    let back = NoiseEvalReport::read_csv(&path).unwrap();
    assert_eq!(back, noise);
    assert_eq!(back.rows.len(), 2);

    let report = ellc(&ck, &env, &[0.05, 0.2], DeltaRule::RandomSphere(Norm::L2), 1).unwrap();
    assert_eq!(report.meta.samples, 3840);
    assert_eq!(report.meta.samples, report.meta.trajectories * report.meta.horizon);
    assert!(report.rows.iter().all(|r| r.ellc >= 0.0 && r.ellc.is_finite()));
    let path = dir.path().join("ellc.csv");
    report.write_csv(&path).unwrap();
    assert_eq!(EllcReport::read_csv(&path).unwrap(), report);

    let empty = NoiseEvalReport {
        meta: noise.meta.clone(),
        rows: Vec::new(),
    };
    assert!(empty.write_csv(&dir.path().join("empty.csv")).is_err());
    assert!(ellc(&ck, &env, &[0.1, -0.1], DeltaRule::RandomSphere(Norm::L2), 1).is_err());
    let other = EnvSpec::new(EnvKind::SpringPendulum);
    assert!(matches!(eval_noise(&ck, &other, &[0.0], NoiseKind::GaussianPerDim, 1, 1), Err(Error::Config(_))));
}
