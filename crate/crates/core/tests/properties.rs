use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use strol::envs::{plan, run_episode, EnvHandle, EpisodeSetup, SimulatedHuman};
use strol::humansim::{noisy_action, HumanNoise, Prior};
use strol::lyapunov::{basin_map, lyapunov_candidate, stability_margin, training_loss, BasinSpec};
use strol::metrics::{param_error, regret};
use strol::model::{ActionVector, ErrorVector, ParamBox, ParamDelta, ParamVector, StateVector};
use strol::net::{bounded_correction, CorrectionNet};
use strol::rules::{
    g_mof, g_one, g_original, net_input_dim, step_estimate, LearningContext, LearningRule, RuleKind, RuleName,
};
use strol::trainer::{batch_loss_and_grad, generate_dataset, TrainConfig};

fn envs() -> [EnvHandle; 3] {
    [EnvHandle::demo2d(), EnvHandle::robot(), EnvHandle::highway()]
}

fn context(env: &EnvHandle, seed: u64, u_scale: f64) -> LearningContext {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hb = env.human_box();
    let rb = env.robot_box();
    LearningContext {
        x: env.sample_state(&mut rng),
        u_h: ActionVector((0..hb.dim).map(|_| u_scale * rng.random_range(-hb.bound..=hb.bound)).collect()),
        u_r: ActionVector((0..rb.dim).map(|_| rng.random_range(-rb.bound..=rb.bound)).collect()),
        theta: ParamVector((0..env.theta_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()),
        alpha: rng.random_range(0.1..2.0),
    }
}

/// Rotates coordinates `i` and `j` of `v` by `angle`.
fn givens(v: &[f64], i: usize, j: usize, angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = v.to_vec();
    out[i] = c * v[i] - s * v[j];
    out[j] = s * v[i] + c * v[j];
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn margin_is_rotation_invariant(
        e in vec(-2.0..2.0f64, 4),
        g in vec(-2.0..2.0f64, 4),
        alpha in 0.01..3.0f64,
        angle in -3.2..3.2f64,
        i in 0usize..4,
        j in 0usize..4,
    ) {
        prop_assume!(i != j);
        let a = stability_margin(&ErrorVector(e.clone()), &ParamDelta(g.clone()), alpha);
        let b = stability_margin(&ErrorVector(givens(&e, i, j, angle)), &ParamDelta(givens(&g, i, j, angle)), alpha);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn negative_margin_shrinks_lyapunov_value(
        e in vec(-2.0..2.0f64, 1..6),
        seed in any::<u64>(),
        alpha in 0.01..3.0f64,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = e.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let err = ErrorVector(e.clone());
        let m = stability_margin(&err, &ParamDelta(g.clone()), alpha);
        let next = ErrorVector(e.iter().zip(&g).map(|(a, b)| a - alpha * b).collect());
        if m < 0.0 {
            prop_assert!(lyapunov_candidate(&next) < lyapunov_candidate(&err));
        }
    }

    #[test]
    fn one_at_a_time_keeps_a_single_component(seed in any::<u64>(), k in 0usize..3) {
        let env = &envs()[k];
        let ctx = context(env, seed, 1.0);
        let g = g_original(&ctx, env.env()).unwrap();
        let one = g_one(&ctx, env.env()).unwrap();
        let nonzero: Vec<usize> = (0..one.dim()).filter(|&i| one[i] != 0.0).collect();
        prop_assert!(nonzero.len() <= 1);
        for i in nonzero {
            prop_assert_eq!(one[i], g[i]);
        }
    }

    #[test]
    fn mof_is_all_or_nothing(seed in any::<u64>(), k in 0usize..3, beta in -1.0..1.0f64) {
        let env = &envs()[k];
        let ctx = context(env, seed, 1.0);
        let d = env.theta_dim();
        let modes = vec![ParamVector(vec![1.0; d]), ParamVector(vec![-1.0; d])];
        let g = g_original(&ctx, env.env()).unwrap();
        let m = g_mof(&ctx, env.env(), beta, &modes, 5).unwrap();
        prop_assert!(m == g || m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_human_input_means_no_learning(seed in any::<u64>(), k in 0usize..3) {
        let env = &envs()[k];
        let ctx = context(env, seed, 0.0);
        let d = env.theta_dim();
        let mut net = CorrectionNet::random(net_input_dim(env.env()), &[8, 8, 8, 8], d, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        net.zero_output_layer();
        let rules = [
            RuleKind::Gradient,
            RuleKind::One,
            RuleKind::Mof { beta: 0.5, modes: vec![ParamVector(vec![1.0; d])], resolution: 5 },
            RuleKind::e2e(net.clone()),
            RuleKind::strol(net),
        ];
        for rule in &rules {
            let delta = rule.delta(env.env(), &ctx).unwrap();
            prop_assert!(delta.iter().all(|&v| v == 0.0), "{} moved without input", rule.name());
        }
    }

    #[test]
    fn full_error_step_reaches_target(s in vec(-1.0..1.0f64, 3), t in vec(-1.0..1.0f64, 3)) {
        let star = ParamVector(s);
        let theta = ParamVector(t);
        let e = ErrorVector::between(&star, &theta).unwrap();
        let next = step_estimate(&theta, &ParamDelta(e.0.clone()), 1.0, None);
        for i in 0..3 {
            // up to the rounding of one subtraction and one addition
            prop_assert!((next[i] - star[i]).abs() <= 2.0 * f64::EPSILON);
        }
    }

    #[test]
    fn bounded_correction_never_exceeds_bound(seed in any::<u64>(), lambda in 0.0..3.0f64, gnorm in 0.0..20.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = CorrectionNet::random(5, &[8, 8, 8, 8], 3, lambda, &mut rng).unwrap();
        let input: Vec<f64> = (0..5).map(|_| rng.random_range(-50.0..50.0)).collect();
        let c = bounded_correction(&net, &input, gnorm).unwrap();
        prop_assert!(c.iter().map(|v| v * v).sum::<f64>().sqrt() <= lambda * gnorm + 1e-12);
    }

    #[test]
    fn plan_ignores_positive_scaling_of_theta(seed in any::<u64>(), k in 0usize..3, p in -2i32..4) {
        let env = &envs()[k];
        let ctx = context(env, seed, 1.0);
        // powers of two scale every reward exactly, so ties break identically
        let c = 2f64.powi(p);
        let scaled = ParamVector(ctx.theta.iter().map(|v| c * v).collect());
        prop_assert_eq!(plan(env.env(), &ctx.x, &ctx.theta, 5, 5), plan(env.env(), &ctx.x, &scaled, 5, 5));
    }

    #[test]
    fn metric_properties(a in vec(-1.0..1.0f64, 3), b in vec(-1.0..1.0f64, 3), c in vec(-1.0..1.0f64, 3)) {
        let (a, b, c) = (ParamVector(a), ParamVector(b), ParamVector(c));
        let ab = param_error(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, param_error(&b, &a).unwrap());
        prop_assert!(ab <= param_error(&a, &c).unwrap() + param_error(&c, &b).unwrap() + 1e-12);
        prop_assert_eq!(param_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn noisy_action_is_reproducible(seed in any::<u64>(), sigma in 0.0..1.0f64) {
        let env = EnvHandle::robot();
        let bx = env.human_box();
        let noise = HumanNoise::fractions(sigma, 0.1, &bx);
        let u = ActionVector(vec![0.1, -0.2, 0.0]);
        let a = noisy_action(&u, &noise, &bx, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = noisy_action(&u, &noise, &bx, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        prop_assert!(bx.contains(&a));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn regret_scales_with_true_weights_and_ignores_estimate_scale(seed in any::<u64>(), k in 0usize..3, p in -2i32..3) {
        let env = &envs()[k];
        let ctx = context(env, seed, 1.0);
        let star = ParamVector(ctx.theta.iter().rev().cloned().collect());
        let c = 2f64.powi(p);
        let scale = |v: &ParamVector| ParamVector(v.iter().map(|x| c * x).collect());
        let base = regret(env, &star, &ctx.theta, &ctx.x).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert_eq!(regret(env, &star, &scale(&ctx.theta), &ctx.x).unwrap(), base);
        let scaled = regret(env, &scale(&star), &ctx.theta, &ctx.x).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        prop_assert_eq!(regret(env, &star, &star, &ctx.x).unwrap(), 0.0);
    }

    #[test]
    fn contracting_steps_shrink_episode_error(seed in any::<u64>(), k in 0usize..3, sigma in 0.0..0.5f64) {
        let env = &envs()[k];
        let ctx = context(env, seed, 1.0);
        let star = ParamVector(ctx.theta.iter().map(|v| -v).collect());
        let noise = HumanNoise::fractions(sigma, 0.0, &env.human_box());
        let mut human = SimulatedHuman::new(star.clone(), noise, 5, seed);
        let setup = EpisodeSetup {
            x0: env.start_state(&mut ChaCha8Rng::seed_from_u64(seed)),
            theta0: ctx.theta.clone(),
            theta_star: Some(star.clone()),
            alpha: ctx.alpha,
            clamp: Some(ParamBox::default()),
        };
        let log = run_episode(env, &RuleKind::Gradient, &mut human, setup).unwrap();
        prop_assert_eq!(log.states.len(), env.horizon + 1);
        for s in &log.steps {
            if s.margin.is_some_and(|m| m < 0.0) {
                let before = param_error(&star, &log.thetas[s.t]).unwrap();
                let after = param_error(&star, &log.thetas[s.t + 1]).unwrap();
                prop_assert!(after < before, "t={} margin {:?}", s.t, s.margin);
            }
        }
    }
}

#[test]
fn episodes_are_reproducible() {
    let env = EnvHandle::highway();
    let run = || {
        let star = ParamVector(vec![0.5, -0.3, 0.8]);
        let mut human = SimulatedHuman::new(star.clone(), HumanNoise::fractions(0.2, 0.0, &env.human_box()), 5, 3);
        let setup = EpisodeSetup {
            x0: env.start_state(&mut ChaCha8Rng::seed_from_u64(3)),
            theta0: ParamVector(vec![0.0; 3]),
            theta_star: Some(star),
            alpha: 0.5,
            clamp: Some(ParamBox::default()),
        };
        run_episode(&env, &RuleKind::One, &mut human, setup).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn datasets_change_between_epochs() {
    let env = EnvHandle::robot();
    let mut cfg = TrainConfig::new(RuleName::Strol, Prior::modes(&[&[-1.0, 1.0], &[1.0, -1.0]], 0.1), 2.0);
    cfg.samples = 16;
    cfg.sigma = 0.25;
    let a = generate_dataset(&env, &cfg, 0);
    let b = generate_dataset(&env, &cfg, 1);
    assert_eq!(a.len(), 16);
    assert!(a.iter().zip(&b).all(|(x, y)| x.x != y.x && x.u_h != y.u_h));
    assert_eq!(a, generate_dataset(&env, &cfg, 0));
    for s in &a {
        assert!(env.human_box().contains(&s.u_h));
        assert!(s.theta.iter().chain(s.theta_star.iter()).all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn trainer_loss_matches_lyapunov_loss() {
    let env = EnvHandle::robot();
    let mut cfg = TrainConfig::new(RuleName::Strol, Prior::modes(&[&[-1.0, 1.0], &[1.0, -1.0]], 0.1), 2.0);
    cfg.samples = 32;
    let data = generate_dataset(&env, &cfg, 0);
    let net = CorrectionNet::random(net_input_dim(env.env()), &[16, 16, 16, 16], 2, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (records, mean, _) = batch_loss_and_grad(&env, &net, RuleName::Strol, &data, cfg.alpha).unwrap();
    assert_eq!(mean, training_loss(&records).unwrap() / records.len() as f64);
    for r in &records {
        assert_eq!(r.margin, stability_margin(&r.error, &r.gtilde, cfg.alpha));
    }
}

#[test]
fn basin_maps_are_deterministic() {
    let env = EnvHandle::demo2d();
    let spec = BasinSpec::new(
        StateVector(vec![-0.6, -0.6]),
        ParamVector(vec![0.0]),
        vec![ParamVector(vec![-1.0]), ParamVector(vec![1.0])],
        0.25,
    );
    let mut spec = spec;
    spec.resolution = 9;
    let a = basin_map(&env, &RuleKind::Gradient, &spec).unwrap();
    let b = basin_map(&env, &RuleKind::Gradient, &spec).unwrap();
    assert_eq!(a, b);
}
