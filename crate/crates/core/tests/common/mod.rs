//! Seeded random instances and hand-built fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_mdp::mdp::{Mdp, Policy, TransitionFunction};
use safe_mdp::oracle::row_vertices;
use safe_mdp::safe::SubgradientSchedule;
use safe_mdp::uncertainty::{ErrorFunction, UncertaintySet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random distribution with a few zero entries.
pub fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    if row.iter().all(|p| *p == 0.0) {
        row[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

pub fn random_mdp(rng: &mut ChaCha8Rng, n: usize, m: usize, gamma: f64) -> Mdp {
    let rewards: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let probs: Vec<f64> = (0..n * m).flat_map(|_| random_row(rng, n)).collect();
    let transition = TransitionFunction::new(n, m, probs).unwrap();
    Mdp::new(rewards, transition, random_row(rng, n), gamma, 1.0).unwrap()
}

/// Budgets mixing exact rows, small errors and large errors.
pub fn random_error(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ErrorFunction {
    let budgets = (0..n * m)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(0.0..0.1),
            2 => rng.random_range(0.1..0.5),
            _ => rng.random_range(0.5..1.5),
        })
        .collect();
    ErrorFunction::new(n, m, budgets).unwrap()
}

pub fn random_policy(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Policy {
    if rng.random_bool(0.5) {
        Policy::deterministic(m, (0..n).map(|_| rng.random_range(0..m)).collect()).unwrap()
    } else {
        Policy::stochastic(m, (0..n).map(|_| random_row(rng, m)).collect()).unwrap()
    }
}

/// One (simulator, budgets, baseline) instance with several true models in its set.
pub struct Instance {
    pub seed: u64,
    pub set: UncertaintySet,
    pub baseline: Policy,
    pub truths: Vec<Mdp>,
}

pub fn suite_instance(seed: u64, n_truths: usize) -> Instance {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=4);
    let m = rng.random_range(2..=3);
    let gamma = [0.7, 0.8, 0.9][rng.random_range(0..3)];
    let sim = random_mdp(&mut rng, n, m, gamma);
    let e = random_error(&mut rng, n, m);
    let baseline = Policy::deterministic(m, (0..n).map(|_| rng.random_range(0..m)).collect()).unwrap();
    let set = UncertaintySet::new(sim, e).unwrap();
    let truths = (0..n_truths)
        .map(|_| set.nominal().with_transition(set.sample_member(&mut rng)).unwrap())
        .collect();
    Instance {
        seed,
        set,
        baseline,
        truths,
    }
}

fn model(rewards: Vec<Vec<f64>>, rows: Vec<Vec<Vec<f64>>>, initial: Vec<f64>, gamma: f64, r_max: f64) -> Mdp {
    Mdp::from_nested(rewards, rows, initial, gamma, r_max).unwrap()
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[k] = 1.0;
    row
}

/// Start state with a reward-free and a rewarded action into a shared gamble.
///
/// States: start, gamble, win (+10 once), lose (−10 once), end (absorbing).
/// Only the gamble row is uncertain. The rewarded action wins by exactly 1 under every
/// model, yet the worst case of the gamble makes the robust return fall below the
/// baseline's true return.
pub fn restrictive_fixture() -> (UncertaintySet, Policy, Mdp) {
    let end = 4;
    let rewards = vec![
        vec![0.0, 1.0],
        vec![0.0, 0.0],
        vec![10.0, 10.0],
        vec![-10.0, -10.0],
        vec![0.0, 0.0],
    ];
    let gamble = vec![0.0, 0.0, 0.7, 0.3, 0.0];
    let rows = vec![
        vec![unit(5, 1), unit(5, 1)],
        vec![gamble.clone(), gamble],
        vec![unit(5, end), unit(5, end)],
        vec![unit(5, end), unit(5, end)],
        vec![unit(5, end), unit(5, end)],
    ];
    let sim = model(rewards, rows, unit(5, 0), 0.9, 10.0);
    let e = ErrorFunction::new(5, 2, vec![0.0, 0.0, 0.8, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let set = UncertaintySet::new(sim.clone(), e).unwrap();
    (set, Policy::deterministic(2, vec![0; 5]).unwrap(), sim)
}

/// Start state where one action pays 10 at once, next to an independent uncertain gamble.
///
/// States: start, gamble, win, lose, end; the initial mass is split between start and
/// gamble. Both actions at the gamble share its uncertainty, so switching only at the
/// start is worth at least `10·p0(start)` under every model, with equality when no
/// mass flows back to the start.
pub fn mixed_fixture() -> (UncertaintySet, Policy, Mdp) {
    let end = 4;
    let rewards = vec![
        vec![0.0, 10.0],
        vec![0.0, 0.0],
        vec![10.0, 10.0],
        vec![-10.0, -10.0],
        vec![0.0, 0.0],
    ];
    let gamble = vec![0.0, 0.0, 0.9, 0.1, 0.0];
    let rows = vec![
        vec![unit(5, end), unit(5, end)],
        vec![gamble.clone(), gamble],
        vec![unit(5, end), unit(5, end)],
        vec![unit(5, end), unit(5, end)],
        vec![unit(5, end), unit(5, end)],
    ];
    let sim = model(rewards, rows, vec![0.5, 0.5, 0.0, 0.0, 0.0], 0.9, 10.0);
    let e = ErrorFunction::new(5, 2, vec![0.0, 0.0, 1.6, 1.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let set = UncertaintySet::new(sim.clone(), e).unwrap();
    (set, Policy::deterministic(2, vec![0; 5]).unwrap(), sim)
}

/// Two disconnected components entered with equal probability.
///
/// Precise component (states 0, 1): action 1 at state 0 pays 1 more, no error.
/// Imprecise component (states 2..=5): both actions gamble on win/lose; action 1 looks
/// better in the simulator but has the wider budget.
pub const PRECISE_STATES: [usize; 2] = [0, 1];
pub const IMPRECISE_START: usize = 2;

pub fn two_component_fixture() -> (UncertaintySet, Policy, Mdp) {
    let n = 6;
    let (end1, win, lose, end2) = (1, 3, 4, 5);
    let rewards = vec![
        vec![0.0, 1.0],
        vec![0.0, 0.0],
        vec![0.0, 0.0],
        vec![10.0, 10.0],
        vec![-10.0, -10.0],
        vec![0.0, 0.0],
    ];
    let mut safe_gamble = vec![0.0; n];
    safe_gamble[win] = 0.8;
    safe_gamble[lose] = 0.2;
    let mut risky_gamble = vec![0.0; n];
    risky_gamble[win] = 0.9;
    risky_gamble[lose] = 0.1;
    let rows = vec![
        vec![unit(n, end1), unit(n, end1)],
        vec![unit(n, end1), unit(n, end1)],
        vec![safe_gamble, risky_gamble],
        vec![unit(n, end2), unit(n, end2)],
        vec![unit(n, end2), unit(n, end2)],
        vec![unit(n, end2), unit(n, end2)],
    ];
    let sim = model(rewards, rows, vec![0.5, 0.0, 0.5, 0.0, 0.0, 0.0], 0.9, 10.0);
    let mut budgets = vec![0.0; n * 2];
    budgets[IMPRECISE_START * 2] = 0.8;
    budgets[IMPRECISE_START * 2 + 1] = 1.6;
    let set = UncertaintySet::new(sim.clone(), ErrorFunction::new(n, 2, budgets).unwrap()).unwrap();
    (set, Policy::deterministic(2, vec![0; n]).unwrap(), sim)
}

/// Start state choosing between two gambles on absorbing −1/+1 leaves.
///
/// The baseline's gamble is estimated too optimistically and the better gamble too
/// pessimistically, each by half its budget, so the regret-optimal policy keeps the
/// baseline and its loss meets the regret bound with equality.
pub fn tight_fixture() -> (Mdp, UncertaintySet, Policy) {
    let rewards = vec![vec![0.0, 0.0], vec![-1.0, -1.0], vec![1.0, 1.0]];
    let leaves = |first: Vec<f64>, second: Vec<f64>| {
        vec![
            vec![first, second],
            vec![unit(3, 1), unit(3, 1)],
            vec![unit(3, 2), unit(3, 2)],
        ]
    };
    let truth = model(
        rewards.clone(),
        leaves(vec![0.0, 0.75, 0.25], vec![0.0, 0.0, 1.0]),
        unit(3, 0),
        0.9,
        1.0,
    );
    let sim = model(
        rewards,
        leaves(vec![0.0, 0.625, 0.375], vec![0.0, 0.25, 0.75]),
        unit(3, 0),
        0.9,
        1.0,
    );
    let e = ErrorFunction::new(3, 2, vec![0.25, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
    (
        truth,
        UncertaintySet::new(sim, e).unwrap(),
        Policy::deterministic(2, vec![0; 3]).unwrap(),
    )
}

/// Safe action (0.78 per step) against a gamble that beats it in the simulator but
/// not in the worst case; the baseline return 6 is reachable only by the safe action.
pub fn subgradient_fixture() -> (UncertaintySet, Policy, f64, SubgradientSchedule) {
    let (safe, win, lose) = (1, 2, 3);
    let rewards = vec![vec![0.0, 0.0], vec![0.78, 0.78], vec![1.0, 1.0], vec![0.0, 0.0]];
    let mut gamble = vec![0.0; 4];
    gamble[win] = 0.9;
    gamble[lose] = 0.1;
    let rows = vec![
        vec![unit(4, safe), gamble],
        vec![unit(4, safe), unit(4, safe)],
        vec![unit(4, win), unit(4, win)],
        vec![unit(4, lose), unit(4, lose)],
    ];
    let sim = model(rewards, rows, unit(4, 0), 0.9, 1.0);
    let e = ErrorFunction::new(4, 2, vec![0.0, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let schedule = SubgradientSchedule::for_model(&sim);
    let set = UncertaintySet::new(sim, e).unwrap();
    (set, Policy::deterministic(2, vec![1, 0, 0, 0]).unwrap(), 6.0, schedule)
}

/// Every combination of row vertices of the uncertain rows.
pub fn vertex_models(set: &UncertaintySet) -> Vec<TransitionFunction> {
    let sim = set.nominal();
    let (n, m) = (sim.n_states(), sim.n_actions());
    let mut models = vec![sim.transition().as_slice().to_vec()];
    for s in 0..n {
        for a in 0..m {
            let budget = set.error().get(s, a);
            if budget == 0.0 {
                continue;
            }
            let vertices = row_vertices(sim.transition().row(s, a), budget);
            let offset = (s * m + a) * n;
            models = models
                .into_iter()
                .flat_map(|base| {
                    vertices.iter().map(move |v| {
                        let mut next = base.clone();
                        next[offset..offset + n].copy_from_slice(v);
                        next
                    })
                })
                .collect();
        }
    }
    models
        .into_iter()
        .map(|p| TransitionFunction::new(n, m, p).unwrap())
        .collect()
}

/// Start state with an exact route to a paying state and a slightly better-paid route
/// whose simulator row is optimistic; the baseline goes straight to a zero state.
///
/// Actions at the start: 0 → paying state, 1 → reward 0.05 then the paying state with
/// probability 1 in the simulator (0.9 in the returned true model), 2 → zero state.
pub fn optimistic_route_fixture() -> (UncertaintySet, Policy, Mdp) {
    let (paying, other_paying, zero) = (1, 2, 3);
    let rewards = vec![vec![0.0, 0.05, 0.0], vec![1.0; 3], vec![1.0; 3], vec![0.0; 3]];
    let stay = |k: usize| vec![unit(4, k); 3];
    let rows = |p: f64| {
        let mut route = unit(4, other_paying);
        route[other_paying] = p;
        route[zero] = 1.0 - p;
        vec![
            vec![unit(4, paying), route, unit(4, zero)],
            stay(paying),
            stay(other_paying),
            stay(zero),
        ]
    };
    let sim = model(rewards.clone(), rows(1.0), unit(4, 0), 0.9, 1.0);
    let truth = model(rewards, rows(0.9), unit(4, 0), 0.9, 1.0);
    let mut budgets = vec![0.0; 12];
    budgets[1] = 0.2;
    let set = UncertaintySet::new(sim, ErrorFunction::new(4, 3, budgets).unwrap()).unwrap();
    (set, Policy::deterministic(3, vec![2, 0, 0, 0]).unwrap(), truth)
}
