//! Product-state MDPs that run an uncertain chain `x` alongside the simulator chain `y`.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::mdp::{return_of, Mdp, Policy, TransitionFunction};
use crate::robust::{RobustModel, Sense};
use crate::uncertainty::{ResponseOrder, UncertaintySet};

/// Augmented state index of `(x, y)`.
pub fn pair_index(n_base: usize, x: usize, y: usize) -> usize {
    x * n_base + y
}

fn product_initial(initial: &[f64]) -> Vec<f64> {
    initial.iter().flat_map(|px| initial.iter().map(move |py| px * py)).collect()
}

fn product_rewards(sim: &Mdp, lambda1: f64, lambda2: f64) -> Vec<f64> {
    let (n, m) = (sim.n_states(), sim.n_actions());
    let mut out = Vec::with_capacity(n * n * m);
    for x in 0..n {
        for y in 0..n {
            for a in 0..m {
                out.push(lambda1 * sim.reward(x, a) + lambda2 * sim.reward(y, a));
            }
        }
    }
    out
}

fn product_r_max(sim: &Mdp, lambda1: f64, lambda2: f64) -> f64 {
    let weight = lambda1 + lambda2;
    if weight > 0.0 {
        sim.r_max() * weight
    } else {
        sim.r_max()
    }
}

fn check_weights(lambda1: f64, lambda2: f64) -> Result<()> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
        return Err(Error::Parameter(format!("weights ({lambda1}, {lambda2}) must be nonnegative")));
    }
    Ok(())
}

/// `M^A_{λ1,λ2}`: rewards `λ1 r(x,a) + λ2 r(y,a)`, dynamics `P(x'|x,a)·P̂(y'|y,a)`,
/// start `p0(x)p0(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMdp {
    pub lambda1: f64,
    pub lambda2: f64,
    n_base: usize,
    mdp: Mdp,
}

impl AugmentedMdp {
    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        pair_index(self.n_base, x, y)
    }

    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.n_base, i % self.n_base)
    }
}

/// Builds the augmented MDP whose `x` side follows `uncertain_transition` and
/// whose `y` side follows the simulator.
pub fn build_augmented(
    simulator: &Mdp,
    uncertain_transition: &TransitionFunction,
    lambda1: f64,
    lambda2: f64,
) -> Result<AugmentedMdp> {
    check_weights(lambda1, lambda2)?;
    let (n, m) = (simulator.n_states(), simulator.n_actions());
    if uncertain_transition.n_states() != n || uncertain_transition.n_actions() != m {
        return Err(Error::Dimension("uncertain transition does not match the simulator".into()));
    }
    let sim_t = simulator.transition();
    let big = n * n;
    let mut probs = Vec::with_capacity(big * m * big);
    for x in 0..n {
        for y in 0..n {
            for a in 0..m {
                let px = uncertain_transition.row(x, a);
                let py = sim_t.row(y, a);
                for p in px {
                    probs.extend(py.iter().map(|q| p * q));
                }
            }
        }
    }
    let transition = TransitionFunction::new(big, m, probs)?;
    let mdp = Mdp::new(
        product_rewards(simulator, lambda1, lambda2),
        transition,
        product_initial(simulator.initial()),
        simulator.discount(),
        product_r_max(simulator, lambda1, lambda2) * (1.0 + 1e-12),
    )?;
    Ok(AugmentedMdp { lambda1, lambda2, n_base: n, mdp })
}

/// `L_P(π, λ) = ρ(π, M^A_{λ,1}(P)) − λ·ρ_B`.
pub fn lagrangian_value(aug: &AugmentedMdp, pi: &Policy, lambda: f64, baseline_return: f64) -> Result<f64> {
    if (aug.lambda1 - lambda).abs() > 0.0 || aug.lambda2 != 1.0 {
        return Err(Error::Parameter(format!(
            "augmented weights ({}, {}) do not match ({lambda}, 1)",
            aug.lambda1, aug.lambda2
        )));
    }
    Ok(return_of(&aug.mdp, pi)? - lambda * baseline_return)
}

/// Stationary policy over augmented states.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPolicy {
    n_base: usize,
    policy: Policy,
}

impl AugmentedPolicy {
    pub fn new(n_base: usize, policy: Policy) -> Result<Self> {
        if policy.n_states() != n_base * n_base {
            return Err(Error::Dimension(format!(
                "augmented policy has {} states, expected {}",
                policy.n_states(),
                n_base * n_base
            )));
        }
        Ok(Self { n_base, policy })
    }

    /// `π(x, y) = π(x)`.
    pub fn lift(pi: &Policy) -> Self {
        let n = pi.n_states();
        let rows: Vec<Vec<f64>> = (0..n * n).map(|i| pi.row(i / n).to_vec()).collect();
        let policy = match pi.actions() {
            Some(actions) => Policy::from_actions(pi.n_actions(), (0..n * n).map(|i| actions[i / n]).collect()),
            None => Policy::stochastic(pi.n_actions(), rows).expect("rows of a valid policy"),
        };
        Self { n_base: n, policy }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    /// Return when `x` follows `true_transition` and `y` follows the simulator.
    pub fn true_return(&self, simulator: &Mdp, true_transition: &TransitionFunction) -> Result<f64> {
        let aug = build_augmented(simulator, true_transition, 1.0, 0.0)?;
        return_of(aug.mdp(), &self.policy)
    }
}

/// Robust augmented model: the `x` row ranges over the budget ball of the simulator
/// row while the `y` row is pinned to the simulator.
#[derive(Debug, Clone)]
pub struct AugmentedRobust<'a> {
    set: &'a UncertaintySet,
    lambda1: f64,
    lambda2: f64,
    rewards: Vec<f64>,
    initial: Vec<f64>,
}

impl<'a> AugmentedRobust<'a> {
    pub fn new(set: &'a UncertaintySet, lambda1: f64, lambda2: f64) -> Result<Self> {
        check_weights(lambda1, lambda2)?;
        let sim = set.nominal();
        Ok(Self {
            set,
            lambda1,
            lambda2,
            rewards: product_rewards(sim, lambda1, lambda2),
            initial: product_initial(sim.initial()),
        })
    }

    /// `w(x') = Σ_y' P̂(y'|y,a) V(x',y')`.
    fn partial_expectation(&self, v: &[f64], y: usize, a: usize, w: &mut [f64]) {
        let n = self.set.n_states();
        let py = self.set.nominal().transition().row(y, a);
        for (xp, wx) in w.iter_mut().enumerate() {
            *wx = py.iter().zip(&v[xp * n..(xp + 1) * n]).map(|(p, val)| p * val).sum();
        }
    }
}

impl RobustModel for AugmentedRobust<'_> {
    fn n_states(&self) -> usize {
        self.set.n_states() * self.set.n_states()
    }

    fn n_actions(&self) -> usize {
        self.set.n_actions()
    }

    fn discount(&self) -> f64 {
        self.set.nominal().discount()
    }

    fn initial(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.initial)
    }

    fn rewards(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.rewards)
    }

    fn value_scale(&self) -> f64 {
        let sim = self.set.nominal();
        product_r_max(sim, self.lambda1, self.lambda2) / (1.0 - sim.discount())
    }

    fn q_values(&self, v: &[f64], sense: Sense, q: &mut [f64]) {
        let sim = self.set.nominal();
        let (n, m) = (sim.n_states(), sim.n_actions());
        let gamma = sim.discount();
        let mut w = vec![0.0; n];
        for y in 0..n {
            for a in 0..m {
                self.partial_expectation(v, y, a, &mut w);
                let order = ResponseOrder::new(&w, sense);
                for x in 0..n {
                    let k = pair_index(n, x, y) * m + a;
                    let ext = order.value(sim.transition().row(x, a), self.set.error().get(x, a), &w);
                    q[k] = self.rewards[k] + gamma * ext;
                }
            }
        }
    }

    fn response_kernel(&self, v: &[f64], sense: Sense) -> Vec<f64> {
        let sim = self.set.nominal();
        let (n, m) = (sim.n_states(), sim.n_actions());
        let big = n * n;
        let mut out = vec![0.0; big * m * big];
        let mut w = vec![0.0; n];
        let mut px = vec![0.0; n];
        for y in 0..n {
            for a in 0..m {
                self.partial_expectation(v, y, a, &mut w);
                let order = ResponseOrder::new(&w, sense);
                let py = sim.transition().row(y, a);
                for x in 0..n {
                    order.row(sim.transition().row(x, a), self.set.error().get(x, a), &mut px);
                    let start = (pair_index(n, x, y) * m + a) * big;
                    let row = &mut out[start..start + big];
                    for (xp, p) in px.iter().enumerate() {
                        for (yp, q) in py.iter().enumerate() {
                            row[pair_index(n, xp, yp)] = p * q;
                        }
                    }
                }
            }
        }
        out
    }
}
