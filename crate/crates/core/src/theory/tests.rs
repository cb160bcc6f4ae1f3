use super::*;

fn zero(_: &[f64]) -> f64 {
    0.0
}
fn three(_: &[f64]) -> f64 {
    3.0
}
fn identity(s: &[f64], _: &[f64]) -> Vec<f64> {
    s.to_vec()
}

fn custom(reward: fn(&[f64]) -> f64, dynamics: fn(&[f64], &[f64]) -> Vec<f64>) -> SyntheticMdp {
    SyntheticMdp {
        name: "custom".into(),
        reward,
        dynamics,
        c: 1.0,
        l: 0.0,
        ..MdpName::Linear1d.build()
    }
}

#[test]
fn trivial_value_functions() {
    let t = value_iteration(&custom(zero, identity), 101).unwrap();
    assert!(t.v.iter().all(|v| *v == 0.0));
    let mdp = custom(three, identity);
    let t = value_iteration(&mdp, 101).unwrap();
    assert!(t.residual < VI_TOLERANCE);
    assert!(t.v.iter().all(|v| (v - 30.0).abs() < 1e-6));
    let g = grad_q_fd(&t, &mdp, &[0.2], &[0.0], 0.05).unwrap();
    assert!(g[0].abs() < 1e-6);
}

#[test]
fn linear_value_is_geometric_series() {
    let mdp = MdpName::Linear1d.build();
    let t = value_iteration(&mdp, default_grid(1)).unwrap();
    for s in [-0.8, -0.3, 0.0, 0.45, 0.9] {
        assert!((t.q(&mdp, &[s], &[0.0]) - s / 0.19).abs() < 1e-3);
    }
    let g = grad_q_fd(&t, &mdp, &[0.3], &[0.0], fd_step(&t)).unwrap();
    assert!((g[0] - 1.0 / 0.19).abs() < 1e-3);
    // action-free dynamics: the action does not matter
    let two = SyntheticMdp {
        actions: vec![vec![-1.0], vec![1.0]],
        ..mdp.clone()
    };
    let t2 = value_iteration(&two, 201).unwrap();
    let (a, b) = (
        grad_q_fd(&t2, &two, &[0.1], &[-1.0], 0.05).unwrap(),
        grad_q_fd(&t2, &two, &[0.1], &[1.0], 0.05).unwrap(),
    );
    assert_eq!(a, b);
    assert!(grad_q_fd(&t, &mdp, &[0.999], &[0.0], 0.01).is_err());
}

#[test]
fn non_convergence_is_reported() {
    let mdp = SyntheticMdp {
        gamma: 1.0 - 1e-9,
        ..custom(three, identity)
    };
    assert!(matches!(value_iteration(&mdp, 2), Err(Error::NotConverged { .. })));
    assert!(value_iteration(&SyntheticMdp { gamma: 1.0, ..mdp }, 2).is_err());
}

#[test]
fn shipped_bounds() {
    let lin = check_bound(&MdpName::Linear1d.build(), 21, default_grid(1)).unwrap();
    assert_eq!(lin.status, BoundStatus::Pass);
    let (b, m) = (lin.bound.unwrap(), lin.max_grad.unwrap());
    assert!((b - 1.0 / 0.19).abs() < 1e-12);
    assert!(m >= 0.99 * b, "{m} vs {b}");

    let con = check_bound(&MdpName::Contraction1d.build(), 21, default_grid(1)).unwrap();
    assert!((con.bound.unwrap() - 1.0 / 0.55).abs() < 1e-12);
    assert_eq!(con.pass, Some(true));
    assert!(con.max_grad.unwrap() < 0.99 * con.bound.unwrap());

    let iso = check_bound(&MdpName::Isotropic2d.build(), 5, 101).unwrap();
    assert!((iso.bound.unwrap() - 2f64.sqrt() / 0.19).abs() < 1e-12);
    assert_eq!(iso.pass, Some(true));
    assert!(iso.max_grad.unwrap() >= 0.99 * iso.bound.unwrap());

    let tanh = check_bound(&MdpName::Tanh1d.build(), 21, default_grid(1)).unwrap();
    assert_eq!(tanh.pass, Some(true));

    let pw = check_bound(&MdpName::Piecewise1d.build(), 21, 101).unwrap();
    assert_eq!(pw.status, BoundStatus::NotApplicable);
    assert_eq!((pw.bound, pw.pass), (None, None));
}

#[test]
fn dynamics_slopes() {
    let lin = check_det_condition(&MdpName::Linear1d.build(), 11, 101).unwrap();
    assert!((lin.max_dyn_grad - 0.9).abs() < 1e-9 && lin.pass);
    let tanh = check_det_condition(&MdpName::Tanh1d.build(), 11, 101).unwrap();
    assert!(tanh.pass && (tanh.max_dyn_grad - 1.0).abs() < 1e-6);
    let pw = check_det_condition(&MdpName::Piecewise1d.build(), 11, 101).unwrap();
    assert!(pw.pass && (pw.max_dyn_grad - 1.5).abs() < 1e-6);
    assert!(check_det_condition(&MdpName::Stochastic1dSmall.build(), 11, 101).is_err());
}

#[test]
fn declared_constants_cover_random_pairs() {
    for mdp in shipped() {
        let (lr, ld) = mdp.empirical_lipschitz(10_000, 1);
        assert!(lr <= mdp.l + 1e-6, "{}: reward slope {lr}", mdp.name);
        assert!(ld <= mdp.c + 1e-6, "{}: dynamics slope {ld}", mdp.name);
        assert!(ld > 0.9 * mdp.c, "{}: dynamics slope {ld}", mdp.name);
    }
}

#[test]
fn per_step_terms_decay_geometrically() {
    let mdp = MdpName::Linear1d.build();
    let t = value_iteration(&mdp, 201).unwrap();
    let grads = per_step_reward_gradients(&mdp, &t, &[0.4], 30, 1e-4);
    for (k, g) in grads.iter().enumerate() {
        assert!(g[0] <= mdp.c.powi(k as i32) * mdp.l * 1.02);
    }
}

#[test]
fn noisy_linear_stays_within_bound() {
    for name in [MdpName::Stochastic1dSmall, MdpName::Stochastic1dLarge] {
        let r = check_bound_stochastic(&name.build(), 5, 50, 3).unwrap();
        assert_eq!(r.pass, Some(true));
        assert!((r.max_grad.unwrap() - 1.0 / 0.19).abs() < 0.05 / 0.19);
    }
    assert!(mc_grad_q(&MdpName::Contraction1d.build(), &[0.0], 10, 2, 1e-3, 0).is_err());
}

#[test]
fn names_round_trip() {
    for m in MdpName::ALL {
        assert_eq!(m.as_str().parse::<MdpName>().unwrap(), m);
    }
    assert!("linear".parse::<MdpName>().is_err());
}

#[test]
fn spectral_norm_examples() {
    assert!((spectral_norm(&[3.0, 0.0, 0.0, -4.0], 2) - 4.0).abs() < 1e-12);
    assert!((spectral_norm(&[1.0, 1.0, 0.0, 1.0], 2) - (1.5 + 1.25f64.sqrt()).sqrt()).abs() < 1e-9);
    assert_eq!(spectral_norm(&[0.0; 4], 2), 0.0);
}
