//! Finite discounted MDPs, stationary policies, exact evaluation and optimal solving.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::linalg;

/// Allowed deviation of an input probability row from unit mass.
pub const ROW_TOLERANCE: f64 = 1e-9;
/// Allowed deviation of a policy row from unit mass.
pub const POLICY_TOLERANCE: f64 = 1e-12;
/// Value-iteration accuracy of [`solve_optimal`] in policy-loss units.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-8;

/// Checks that `row` is a distribution within `tol` and rescales it to unit mass.
pub(crate) fn normalize_distribution(row: &mut [f64], tol: f64, what: &str) -> Result<()> {
    if row.is_empty() {
        return Err(Error::Distribution(format!("{what}: empty row")));
    }
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Distribution(format!("{what}: entry {p} is not a probability")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Distribution(format!("{what}: sums to {sum}")));
    }
    if (sum - 1.0).abs() > 1e-12 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

/// Transition probabilities `P(x'|x,a)` stored as `[x][a][x']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFunction {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TransitionFunction {
    /// Validates a flat `[x][a][x']` buffer; rows within [`ROW_TOLERANCE`] of unit mass are rescaled.
    pub fn new(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Dimension("at least one state and one action are required".into()));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "transition buffer has {} entries, expected {}",
                probs.len(),
                n_states * n_actions * n_states
            )));
        }
        for (k, row) in probs.chunks_mut(n_states).enumerate() {
            let (s, a) = (k / n_actions, k % n_actions);
            normalize_distribution(row, ROW_TOLERANCE, &format!("transition row ({s},{a})"))?;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    /// Builds from nested `[state][action][next]` rows.
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, |r| r.len());
        let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_state) in rows.iter().enumerate() {
            if per_state.len() != n_actions {
                return Err(Error::Dimension(format!("state {s} has {} actions", per_state.len())));
            }
            for (a, row) in per_state.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::Dimension(format!("row ({s},{a}) has length {}", row.len())));
                }
                probs.extend_from_slice(row);
            }
        }
        Self::new(n_states, n_actions, probs)
    }

    /// Uniform rows everywhere.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_states as f64;
        Self { n_states, n_actions, probs: vec![p; n_states * n_actions * n_states] }
    }

    pub(crate) fn from_raw(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), n_states * n_actions * n_states);
        Self { n_states, n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub(crate) fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &mut self.probs[start..start + self.n_states]
    }

    /// Flat `[x][a][x']` view.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect()
    }
}

/// A finite discounted MDP `⟨X, A, r, P, p0, γ⟩` with reward bound `r_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    reward: Vec<f64>,
    transition: TransitionFunction,
    initial: Vec<f64>,
    discount: f64,
    r_max: f64,
    relaxed_rewards: bool,
}

impl Mdp {
    /// `reward` is flat `[x][a]`.
    pub fn new(
        reward: Vec<f64>,
        transition: TransitionFunction,
        mut initial: Vec<f64>,
        discount: f64,
        r_max: f64,
    ) -> Result<Self> {
        let (n_states, n_actions) = (transition.n_states(), transition.n_actions());
        if reward.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if initial.len() != n_states {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries, expected {n_states}",
                initial.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Parameter(format!("discount {discount} is not in (0,1)")));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::Parameter(format!("r_max {r_max} must be positive")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite() || r.abs() > r_max) {
            return Err(Error::Parameter(format!("reward {r} exceeds r_max {r_max}")));
        }
        normalize_distribution(&mut initial, ROW_TOLERANCE, "initial distribution")?;
        Ok(Self { n_states, n_actions, reward, transition, initial, discount, r_max, relaxed_rewards: false })
    }

    /// Builds from nested `[state][action]` rewards and `[state][action][next]` rows.
    pub fn from_nested(
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
        discount: f64,
        r_max: f64,
    ) -> Result<Self> {
        let transition = TransitionFunction::from_nested(&transition)?;
        if reward.len() != transition.n_states() || reward.iter().any(|r| r.len() != transition.n_actions()) {
            return Err(Error::Dimension("reward shape does not match transitions".into()));
        }
        Self::new(reward.concat(), transition, initial, discount, r_max)
    }

    /// Same model with different rewards; the reward bound is no longer enforced.
    pub(crate) fn with_relaxed_rewards(&self, reward: Vec<f64>) -> Self {
        debug_assert_eq!(reward.len(), self.reward.len());
        Self { reward, relaxed_rewards: true, ..self.clone() }
    }

    /// Same rewards and initial distribution, different dynamics.
    pub fn with_transition(&self, transition: TransitionFunction) -> Result<Self> {
        if transition.n_states() != self.n_states || transition.n_actions() != self.n_actions {
            return Err(Error::Dimension("transition shape does not match the model".into()));
        }
        Ok(Self { transition, ..self.clone() })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Flat `[x][a]` rewards.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition(&self) -> &TransitionFunction {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// True for reward-adjusted models whose rewards may exceed `r_max`.
    pub fn has_relaxed_rewards(&self) -> bool {
        self.relaxed_rewards
    }

    /// Largest reward magnitude, at least `r_max`.
    pub fn reward_bound(&self) -> f64 {
        self.reward.iter().fold(self.r_max, |m, r| m.max(r.abs()))
    }

    /// Bound on any value magnitude.
    pub fn value_scale(&self) -> f64 {
        self.reward_bound() / (1.0 - self.discount)
    }
}

/// Stationary Markov policy, stored as an action distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    actions: Option<Vec<usize>>,
}

impl Policy {
    pub fn deterministic(n_actions: usize, actions: Vec<usize>) -> Result<Self> {
        if n_actions == 0 || actions.is_empty() {
            return Err(Error::Dimension("empty policy".into()));
        }
        if let Some(a) = actions.iter().find(|a| **a >= n_actions) {
            return Err(Error::Dimension(format!("action {a} out of range for {n_actions} actions")));
        }
        Ok(Self::from_actions(n_actions, actions))
    }

    pub(crate) fn from_actions(n_actions: usize, actions: Vec<usize>) -> Self {
        let n_states = actions.len();
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self { n_states, n_actions, probs, actions: Some(actions) }
    }

    pub fn stochastic(n_actions: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if n_actions == 0 || rows.is_empty() {
            return Err(Error::Dimension("empty policy".into()));
        }
        let n_states = rows.len();
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, mut row) in rows.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Dimension(format!("policy row {s} has {} entries", row.len())));
            }
            normalize_distribution(&mut row, POLICY_TOLERANCE, &format!("policy row {s}"))?;
            probs.extend(row);
        }
        Ok(Self { n_states, n_actions, probs, actions: None })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self { n_states, n_actions, probs: vec![p; n_states * n_actions], actions: None }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Chosen actions for deterministic policies.
    pub fn actions(&self) -> Option<&[usize]> {
        self.actions.as_deref()
    }

    pub fn is_deterministic(&self) -> bool {
        self.actions.is_some()
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, model is {n_states}x{n_actions}",
                self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// State values `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl Deref for ValueFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Normalized discounted state occupancy `u = (1-γ)(I - γPπᵀ)⁻¹p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy(pub Vec<f64>);

impl Deref for Occupancy {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// State-to-state kernel `Pπ` (row-major) and reward vector `rπ` of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    pub n_states: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
}

pub(crate) fn induce(
    transition: &[f64],
    reward: &[f64],
    n_states: usize,
    n_actions: usize,
    pi: &Policy,
) -> InducedChain {
    let mut kernel = vec![0.0; n_states * n_states];
    let mut r = vec![0.0; n_states];
    for s in 0..n_states {
        let out = &mut kernel[s * n_states..(s + 1) * n_states];
        for a in 0..n_actions {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * reward[s * n_actions + a];
            let row = &transition[(s * n_actions + a) * n_states..(s * n_actions + a + 1) * n_states];
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }
    InducedChain { n_states, transition: kernel, reward: r }
}

/// Marginalizes transitions and rewards over the policy's action distribution.
pub fn induced_kernel(mdp: &Mdp, pi: &Policy) -> Result<InducedChain> {
    pi.check_shape(mdp.n_states, mdp.n_actions)?;
    Ok(induce(mdp.transition.as_slice(), &mdp.reward, mdp.n_states, mdp.n_actions, pi))
}

/// Solves `V = r + γPV` for a Markov chain.
pub(crate) fn evaluate_chain(chain: &InducedChain, discount: f64, scale: f64) -> Result<Vec<f64>> {
    let n = chain.n_states;
    if n <= linalg::DENSE_LIMIT {
        linalg::solve_discounted(&chain.transition, n, discount, &chain.reward)
    } else {
        Ok(linalg::iterate_discounted(&chain.transition, n, discount, &chain.reward, 1e-10 * scale))
    }
}

/// Value function of `pi` in `mdp`.
pub fn evaluate_policy(mdp: &Mdp, pi: &Policy) -> Result<ValueFunction> {
    let chain = induced_kernel(mdp, pi)?;
    evaluate_chain(&chain, mdp.discount, mdp.value_scale()).map(ValueFunction)
}

/// Return `ρ(π, M) = p0ᵀV^π`.
pub fn return_of(mdp: &Mdp, pi: &Policy) -> Result<f64> {
    let v = evaluate_policy(mdp, pi)?;
    Ok(dot(&mdp.initial, &v))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Q(x,a) = r(x,a) + γ Σ P(x'|x,a) V(x')`, flat `[x][a]`.
pub fn q_values(mdp: &Mdp, v: &[f64]) -> Vec<f64> {
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            q[s * m + a] = mdp.reward(s, a) + mdp.discount * dot(mdp.transition.row(s, a), v);
        }
    }
    q
}

/// Greedy action per state; ties go to the lowest index.
pub fn greedy_actions(q: &[f64], n_actions: usize) -> Vec<usize> {
    q.chunks(n_actions)
        .map(|row| {
            let mut best = 0;
            for a in 1..n_actions {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

fn row_max(q: &[f64], n_actions: usize) -> Vec<f64> {
    q.chunks(n_actions).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Bellman optimality operator `T[V](x) = max_a Q(x,a)`.
pub fn bellman_optimality(mdp: &Mdp, v: &[f64]) -> Vec<f64> {
    row_max(&q_values(mdp, v), mdp.n_actions)
}

/// Optimal deterministic policy by value iteration; the greedy policy is
/// [`OPTIMALITY_TOLERANCE`]-optimal.
pub fn solve_optimal(mdp: &Mdp) -> (Policy, ValueFunction) {
    let gamma = mdp.discount;
    let threshold = OPTIMALITY_TOLERANCE * (1.0 - gamma) / (2.0 * gamma);
    let mut v = vec![0.0; mdp.n_states];
    loop {
        let next = bellman_optimality(mdp, &v);
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if diff <= threshold {
            break;
        }
    }
    let actions = greedy_actions(&q_values(mdp, &v), mdp.n_actions);
    (Policy::from_actions(mdp.n_actions, actions), ValueFunction(v))
}

/// Optimal deterministic policy by value iteration followed by exact policy
/// iteration, so the returned values solve the optimality equation to solver precision.
pub fn solve_optimal_exact(mdp: &Mdp) -> Result<(Policy, ValueFunction)> {
    let m = mdp.n_actions;
    let tie = 1e-12 * mdp.value_scale();
    let (mut pi, _) = solve_optimal(mdp);
    loop {
        let v = evaluate_policy(mdp, &pi)?;
        let q = q_values(mdp, &v);
        let current = pi.actions().expect("deterministic iterate");
        let best = greedy_actions(&q, m);
        let mut changed = false;
        let next: Vec<usize> = (0..mdp.n_states)
            .map(|s| {
                if q[s * m + best[s]] > q[s * m + current[s]] + tie {
                    changed = true;
                    best[s]
                } else {
                    current[s]
                }
            })
            .collect();
        if !changed {
            return Ok((pi, v));
        }
        pi = Policy::from_actions(m, next);
    }
}

/// Normalized discounted occupancy of `pi` started from `p0`.
pub fn occupancy(mdp: &Mdp, pi: &Policy) -> Result<Occupancy> {
    let chain = induced_kernel(mdp, pi)?;
    chain_occupancy(&chain, mdp.initial(), mdp.discount).map(Occupancy)
}

pub(crate) fn chain_occupancy(chain: &InducedChain, initial: &[f64], discount: f64) -> Result<Vec<f64>> {
    let n = chain.n_states;
    let b: Vec<f64> = initial.iter().map(|p| (1.0 - discount) * p).collect();
    if n <= linalg::DENSE_LIMIT {
        linalg::solve_discounted_transpose(&chain.transition, n, discount, &b)
    } else {
        Ok(linalg::iterate_discounted_transpose(&chain.transition, n, discount, &b, 1e-12))
    }
}
