mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_gamma, random_scenario};
use seqattack::env::{run_episode, RandomPolicy};
use seqattack::system::plan_objective;
use seqattack::{
    baseline_brute_force, baseline_random, baseline_sampling, builtin, compute_rewards, constant_selection,
    solve_optimal_plan, ActionMode, AttackPlan, MdpConfig, Scenario32, Selection,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dp_plan_beats_perturbations(seed in any::<u64>(), n in 1usize..5, horizon in 1usize..12, step in 0usize..12, eps in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = random_scenario(&mut rng, n, horizon, false);
        let gamma = random_gamma(&mut rng, n, horizon, true);
        let opt = solve_optimal_plan(&sc, &gamma).unwrap();
        let mut theta = opt.plan.theta.clone();
        theta[step % (horizon + 1)] += eps;
        let j = plan_objective(&sc, &AttackPlan { gamma, theta }).unwrap().j;
        prop_assert!(opt.objective.j <= j + 1e-9 * j.abs().max(1.0));
    }

    #[test]
    fn rewards_wait_for_the_episode(seed in any::<u64>(), multi in any::<bool>()) {
        let mode = if multi { ActionMode::MultiAgent } else { ActionMode::SingleAgent };
        let mdp = MdpConfig::new(builtin("circle3").unwrap().build().unwrap().with_horizon(6).unwrap()).with_action_mode(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = run_episode(&mut RandomPolicy { n: 3, mode, sigma: 2.0 }, &mdp, &mut rng).unwrap();
        prop_assert!(rec.rewards().is_err());
        let done = compute_rewards(&rec, &mdp).unwrap();
        prop_assert_eq!(done.rewards().unwrap().len(), 7);
        prop_assert!(done.rewards().unwrap().iter().all(|r| *r <= 0.0));
    }

    #[test]
    fn episodes_replay_per_seed(seed in any::<u64>()) {
        let mdp = MdpConfig::new(builtin("linear3").unwrap().build().unwrap());
        let episode = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(&mut RandomPolicy { n: 3, mode: ActionMode::SingleAgent, sigma: 2.0 }, &mdp, &mut rng).unwrap()
        };
        prop_assert_eq!(episode().thetas, episode().thetas);
    }
}

#[test]
fn baseline_curves_never_rise() {
    let mdp = MdpConfig::new(builtin("linear3").unwrap().build().unwrap());
    for run in [baseline_random(&mdp, 5_000, 3).unwrap(), baseline_sampling(&mdp, 500, 3).unwrap()] {
        assert!(run.curve.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
    }
}

#[test]
fn brute_force_is_a_lower_bound() {
    for mode in [ActionMode::SingleAgent, ActionMode::MultiAgent] {
        let sc = builtin("linear3").unwrap().build().unwrap().with_horizon(3).unwrap();
        let mdp = MdpConfig::new(sc).with_action_mode(mode);
        let best = baseline_brute_force(&mdp).unwrap().solution.j;
        for seed in 0..3 {
            assert!(best <= baseline_sampling(&mdp, 40, seed).unwrap().solution.j + 1e-9);
            assert!(best <= baseline_random(&mdp, 200, seed).unwrap().solution.j + 1e-9);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let file = builtin("linear3").unwrap();
    let sc64 = file.build::<f64>().unwrap();
    let sc32: Scenario32 = file.build().unwrap();
    for i in 0..3 {
        let j64 = solve_optimal_plan(&sc64, &constant_selection(&Selection::single(3, i), 50)).unwrap().objective.j;
        let j32 = solve_optimal_plan(&sc32, &constant_selection(&Selection::single(3, i), 50)).unwrap().objective.j;
        assert!((j32 as f64 - j64).abs() / j64 < 1e-4, "{j32} vs {j64}");
    }
}
