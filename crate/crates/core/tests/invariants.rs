use igcarl::attack::{bim_perturb, random_noise, AttackConfig, NoiseShape};
use igcarl::nn::{standard_sizes, squash, Activation, GaussianHead, Mlp};
use igcarl::rng::seeded;
use igcarl::sim::{self, adversary_reward, agent_reward, observe, SimConfig, OBS_DIM};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_respect_state_invariants(
        seed in any::<u64>(),
        p in 0.0f64..1.0,
        actions in prop::collection::vec(-20.0f64..20.0, 30),
    ) {
        let cfg = SimConfig { arrival_prob: p, ..SimConfig::default() };
        let mut s = sim::reset(&cfg, seed).unwrap();
        let mut steps = 0;
        for a in actions {
            if s.done {
                break;
            }
            let out = s.step(&cfg, a).unwrap();
            steps += 1;
            prop_assert!((0.0..=cfg.v_max).contains(&s.ego.speed));
            prop_assert!(s.others.iter().all(|v| (0.0..=cfg.v_max).contains(&v.speed)));
            prop_assert!(!(out.collision && out.reached_goal));
            prop_assert_eq!(out.done, out.collision || out.reached_goal || s.step_count == cfg.max_steps);
            let r = agent_reward(&out, &cfg);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!(adversary_reward(&out) == 0.0 || adversary_reward(&out) == 1.0);
            let o = observe(&s, &cfg);
            prop_assert!(o.is_normalized());
        }
        prop_assert!(s.done);
        prop_assert!(steps <= cfg.max_steps);
    }

    #[test]
    fn identical_inputs_give_identical_trajectories(seed in any::<u64>(), a in -7.6f64..7.6) {
        let cfg = SimConfig::default();
        let mut x = sim::reset(&cfg, seed).unwrap();
        let mut y = sim::reset(&cfg, seed).unwrap();
        while !x.done {
            prop_assert_eq!(x.step(&cfg, a).unwrap(), y.step(&cfg, a).unwrap());
            prop_assert_eq!(&x, &y);
        }
    }

    #[test]
    fn bim_never_leaves_the_box(
        seed in any::<u64>(),
        eps in prop::sample::select(vec![0.0, 0.01, 0.03, 0.05, 0.3]),
        target in -7.6f64..7.6,
        iters in 0u32..60,
    ) {
        let mut rng = seeded(seed);
        let net = Mlp::random(&standard_sizes(OBS_DIM, 1), Activation::Tanh, &mut rng).unwrap();
        let obs: Vec<f64> = (0..OBS_DIM).map(|i| ((i as f64) * 0.37 + seed as f64).sin()).collect();
        let cfg = AttackConfig { iters, ..AttackConfig::new(eps, 1).unwrap() };
        let d = bim_perturb(&net, &obs, target, &cfg).unwrap();
        prop_assert!(d.iter().all(|x| x.abs() <= eps));
    }

    #[test]
    fn noise_has_the_requested_radius(seed in any::<u64>(), eps in 0.0f64..0.2) {
        let mut rng = seeded(seed);
        let obs = vec![0.0; OBS_DIM];
        let s = random_noise(&obs, eps, NoiseShape::Surface, &mut rng).unwrap();
        let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - eps).abs() <= 1e-12 * eps.max(1.0));
        let b = random_noise(&obs, eps, NoiseShape::Ball, &mut rng).unwrap();
        prop_assert!(b.iter().map(|x| x * x).sum::<f64>().sqrt() <= eps * (1.0 + 1e-12));
    }

    #[test]
    fn squashed_actions_stay_in_bounds(mean in -50.0f64..50.0, log_std in -30.0f64..10.0, noise in -10.0f64..10.0) {
        let head = GaussianHead::new(mean, log_std);
        prop_assert!((-20.0..=2.0).contains(&head.log_std));
        let s = head.sample(noise);
        prop_assert!(s.action.abs() <= 7.6);
        prop_assert!(s.log_prob.is_finite());
        prop_assert!(squash(mean).abs() <= 7.6);
    }
}
