mod common;

use rand::Rng;

use common::*;
use safe_mdp::bounds::{performance_loss, safe_policy_loss_bound};
use safe_mdp::mdp::{return_of, solve_optimal, Policy};
use safe_mdp::robust::{best_case_evaluate, DEFAULT_TOLERANCE};
use safe_mdp::safe::{
    certified_improvement, solve_augmented_rmdp, solve_ramdp, solve_rbc, solve_rmdp_safe, RbcOptions, SafePolicy,
    SubgradientSchedule,
};
use safe_mdp::uncertainty::{ErrorFunction, UncertaintySet};

#[test]
fn robust_solver_rejects_a_policy_that_wins_under_every_model() {
    let (set, baseline, sim) = restrictive_fixture();
    let rho_b = return_of(&sim, &baseline).unwrap();
    let rmdp = solve_rmdp_safe(&set, &baseline, rho_b).unwrap();
    assert!(!rmdp.accepted);
    assert_eq!(rmdp.policy.as_markov(), Some(&baseline));
    let (opt, _) = solve_optimal(&sim);
    for p in vertex_models(&set) {
        let m = sim.with_transition(p).unwrap();
        let gain = return_of(&m, &opt).unwrap() - return_of(&m, &baseline).unwrap();
        assert!(gain >= 1.0 - 1e-9, "{gain}");
    }
    let rbc = solve_rbc(&set, &baseline, &RbcOptions::default()).unwrap();
    assert!(rbc.accepted);
    assert!((rbc.certified_value - 1.0).abs() < 1e-9);
}

#[test]
fn regret_solver_certifies_a_switch_that_gains_under_every_model() {
    let (set, baseline, sim) = mixed_fixture();
    let rho_b = return_of(&sim, &baseline).unwrap();
    assert!(!solve_rmdp_safe(&set, &baseline, rho_b).unwrap().accepted);
    let rbc = solve_rbc(&set, &baseline, &RbcOptions::default()).unwrap();
    assert!(rbc.accepted);
    assert!((rbc.certified_value - 5.0).abs() < 1e-9);
    let pi = rbc.policy.as_markov().unwrap();
    assert_eq!(pi.actions().unwrap()[0], 1);
    for p in vertex_models(&set) {
        let m = sim.with_transition(p).unwrap();
        let gain = return_of(&m, pi).unwrap() - return_of(&m, &baseline).unwrap();
        assert!(gain >= 5.0 - 1e-9, "{gain}");
    }
}

#[test]
fn regret_solver_keeps_the_baseline_where_the_model_is_poor() {
    let (set, baseline, sim) = two_component_fixture();
    let rho_b = return_of(&sim, &baseline).unwrap();
    assert!(!solve_rmdp_safe(&set, &baseline, rho_b).unwrap().accepted);
    let rbc = solve_rbc(&set, &baseline, &RbcOptions::default()).unwrap();
    let actions = rbc.policy.as_markov().unwrap().actions().unwrap().to_vec();
    let (opt, _) = solve_optimal(&sim);
    assert_eq!(actions[PRECISE_STATES[0]], opt.actions().unwrap()[PRECISE_STATES[0]]);
    assert_eq!(actions[IMPRECISE_START], 0);
    assert_eq!(opt.actions().unwrap()[IMPRECISE_START], 1);
    assert!((rbc.certified_value - 0.5).abs() < 1e-9);
}

#[test]
fn augmented_solver_can_trade_true_return_for_simulator_return() {
    let (set, baseline, truth) = optimistic_route_fixture();
    let rho_b = return_of(&truth, &baseline).unwrap();
    let sched = SubgradientSchedule::for_model(set.nominal());
    let armdp = solve_augmented_rmdp(&set, &baseline, rho_b, &sched).unwrap();
    assert!(armdp.accepted);
    let rho = armdp.true_return(set.nominal(), truth.transition()).unwrap();
    let optimum = return_of(&truth, &solve_optimal(&truth).0).unwrap();
    assert!((optimum - 9.0).abs() < 1e-9);
    assert!((rho - 8.15).abs() < 1e-6, "{rho}");
    let bound = safe_policy_loss_bound(&truth, set.error(), 9.0).unwrap();
    assert_eq!(bound.estimate, 0.0);
    assert!(optimum - rho > bound.value() + 0.8);

    let rmdp = solve_rmdp_safe(&set, &baseline, rho_b).unwrap();
    assert!(performance_loss(&truth, rmdp.policy.as_markov().unwrap()).unwrap().abs() < 1e-9);
}

#[test]
fn multiplier_settles_at_the_kink_of_the_dual() {
    let (set, baseline, rho_b, sched) = subgradient_fixture();
    let result = solve_augmented_rmdp(&set, &baseline, rho_b, &sched).unwrap();
    let lambda = result.diagnostics.final_lambda.unwrap();
    // Dual pieces 7.02(λ+1) − 6λ and 5.4λ + 8.1 − 6λ cross at λ = 0.12/0.18.
    assert!((lambda - 2.0 / 3.0).abs() < 1e-2, "{lambda}");
    assert!(result.accepted);
    assert!((result.certified_value - 7.02).abs() < 1e-6);
    assert!(result.diagnostics.dual_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn augmented_solver_matches_nominal_optimum_on_exact_deterministic_model() {
    let (_, _, sim) = restrictive_fixture();
    let det = sim
        .with_transition(
            safe_mdp::mdp::TransitionFunction::from_nested(
                &(0..5)
                    .map(|s| {
                        let next = [1, 2, 4, 4, 4][s];
                        vec![(0..5).map(|k| if k == next { 1.0 } else { 0.0 }).collect::<Vec<f64>>(); 2]
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
        )
        .unwrap();
    let set = UncertaintySet::new(det.clone(), ErrorFunction::zeros(5, 2)).unwrap();
    let baseline = Policy::deterministic(2, vec![0; 5]).unwrap();
    let result = solve_augmented_rmdp(&set, &baseline, -1.0, &SubgradientSchedule::for_model(&det)).unwrap();
    assert!(result.accepted);
    let rho = result.true_return(&det, det.transition()).unwrap();
    let optimum = return_of(&det, &solve_optimal(&det).0).unwrap();
    assert!((rho - optimum).abs() < 2.0 * DEFAULT_TOLERANCE / (1.0 - det.discount()));
}

#[test]
fn unattainable_baseline_return_hits_the_multiplier_cap() {
    let inst = suite_instance(3, 0);
    let sim = inst.set.nominal();
    let too_high = sim.r_max() / (1.0 - sim.discount()) + 1.0;
    let result =
        solve_augmented_rmdp(&inst.set, &inst.baseline, too_high, &SubgradientSchedule::for_model(sim)).unwrap();
    assert!(!result.accepted);
    assert_eq!(result.diagnostics.lambda_cap_hit, Some(true));
    assert_eq!(result.policy, SafePolicy::Markov(inst.baseline.clone()));
}

#[test]
fn certified_values_lower_bound_every_sampled_model() {
    for seed in 0..20 {
        let inst = suite_instance(200 + seed, 1);
        let sim = inst.set.nominal();
        let truth = &inst.truths[0];
        let rho_b = return_of(truth, &inst.baseline).unwrap();
        let results = [
            solve_ramdp(sim, inst.set.error(), &inst.baseline, rho_b).unwrap(),
            solve_rmdp_safe(&inst.set, &inst.baseline, rho_b).unwrap(),
            solve_augmented_rmdp(&inst.set, &inst.baseline, rho_b, &SubgradientSchedule::for_model(sim)).unwrap(),
        ];
        let rbc = solve_rbc(&inst.set, &inst.baseline, &RbcOptions::default()).unwrap();
        let mut rng = common::rng(seed);
        for _ in 0..50 {
            let p = inst.set.sample_member(&mut rng);
            for r in results.iter().filter(|r| r.accepted) {
                let rho = r.true_return(sim, &p).unwrap();
                assert!(r.certified_value <= rho + 1e-7, "seed {seed} {}", r.method);
            }
            if rbc.accepted {
                let m = sim.with_transition(p.clone()).unwrap();
                let gain = rbc.true_return(sim, &p).unwrap() - return_of(&m, &inst.baseline).unwrap();
                assert!(rbc.certified_value <= gain + 1e-7, "seed {seed}");
            }
        }
    }
}

#[test]
fn regret_bound_covers_robust_acceptance() {
    for seed in 0..30 {
        let inst = suite_instance(300 + seed, 1);
        let rho_b = return_of(&inst.truths[0], &inst.baseline).unwrap();
        let rmdp = solve_rmdp_safe(&inst.set, &inst.baseline, rho_b).unwrap();
        if !rmdp.accepted {
            continue;
        }
        let pi = rmdp.policy.as_markov().unwrap();
        let best_baseline = best_case_evaluate(&inst.set, &inst.baseline, 1e-12).unwrap();
        let bound = certified_improvement(&inst.set, pi, &inst.baseline, 1e-12).unwrap();
        assert!(bound.value >= rmdp.certified_value - best_baseline - 1e-7, "seed {seed}");
        let rbc = solve_rbc(&inst.set, &inst.baseline, &RbcOptions::default()).unwrap();
        assert!(rbc.certified_value >= rmdp.certified_value - best_baseline - 1e-7, "seed {seed}");
    }
}

#[test]
fn random_baselines_never_lose_on_the_true_model() {
    let mut rng = common::rng(5);
    for seed in 0..10 {
        let inst = suite_instance(400 + seed, 3);
        let sim = inst.set.nominal();
        let baseline = Policy::deterministic(
            sim.n_actions(),
            (0..sim.n_states()).map(|_| rng.random_range(0..sim.n_actions())).collect(),
        )
        .unwrap();
        let rbc = solve_rbc(&inst.set, &baseline, &RbcOptions { seed, ..Default::default() }).unwrap();
        for truth in &inst.truths {
            let gain = rbc.true_return(sim, truth.transition()).unwrap() - return_of(truth, &baseline).unwrap();
            assert!(gain >= -1e-9);
        }
    }
}
