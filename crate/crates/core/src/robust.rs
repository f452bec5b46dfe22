//! Robust Bellman operators, robust value iteration and worst/best-case policy evaluation.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::mdp::{dot, evaluate_chain, greedy_actions, induce, Policy, TransitionFunction, ValueFunction};
use crate::uncertainty::{ResponseOrder, UncertaintySet};

pub use crate::uncertainty::Sense;

/// Default accuracy of robust solves in return units.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// An MDP whose transition rows are chosen adversarially (or optimistically)
/// from per-row sets.
pub trait RobustModel: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn initial(&self) -> Cow<'_, [f64]>;
    /// Flat `[x][a]` rewards.
    fn rewards(&self) -> Cow<'_, [f64]>;
    /// Bound on value magnitudes.
    fn value_scale(&self) -> f64;
    /// `Q(x,a) = r(x,a) + γ·ext_p pᵀv` for every pair, flat `[x][a]`.
    fn q_values(&self, v: &[f64], sense: Sense, q: &mut [f64]);
    /// Extremal rows against `v`, flat `[x][a][x']`.
    fn response_kernel(&self, v: &[f64], sense: Sense) -> Vec<f64>;
}

impl RobustModel for UncertaintySet {
    fn n_states(&self) -> usize {
        self.nominal().n_states()
    }

    fn n_actions(&self) -> usize {
        self.nominal().n_actions()
    }

    fn discount(&self) -> f64 {
        self.nominal().discount()
    }

    fn initial(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.nominal().initial())
    }

    fn rewards(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.nominal().rewards())
    }

    fn value_scale(&self) -> f64 {
        self.nominal().value_scale()
    }

    fn q_values(&self, v: &[f64], sense: Sense, q: &mut [f64]) {
        let mdp = self.nominal();
        let order = ResponseOrder::new(v, sense);
        let m = mdp.n_actions();
        for s in 0..mdp.n_states() {
            for a in 0..m {
                let row = mdp.transition().row(s, a);
                q[s * m + a] = mdp.reward(s, a) + mdp.discount() * order.value(row, self.error().get(s, a), v);
            }
        }
    }

    fn response_kernel(&self, v: &[f64], sense: Sense) -> Vec<f64> {
        let mdp = self.nominal();
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let order = ResponseOrder::new(v, sense);
        let mut out = vec![0.0; n * m * n];
        for s in 0..n {
            for a in 0..m {
                let k = (s * m + a) * n;
                order.row(mdp.transition().row(s, a), self.error().get(s, a), &mut out[k..k + n]);
            }
        }
        out
    }
}

fn policy_backup(q: &[f64], n_actions: usize, pi: &Policy) -> Vec<f64> {
    q.chunks(n_actions).enumerate().map(|(s, row)| dot(pi.row(s), row)).collect()
}

fn max_backup(q: &[f64], n_actions: usize) -> Vec<f64> {
    q.chunks(n_actions).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Robust Bellman update: maximizing over actions, or averaging under a fixed policy.
pub(crate) fn backup<M: RobustModel + ?Sized>(model: &M, v: &[f64], sense: Sense, pi: Option<&Policy>) -> Vec<f64> {
    let m = model.n_actions();
    let mut q = vec![0.0; model.n_states() * m];
    model.q_values(v, sense, &mut q);
    match pi {
        Some(pi) => policy_backup(&q, m, pi),
        None => max_backup(&q, m),
    }
}

/// Value iterate of a robust operator.
#[derive(Debug, Clone)]
pub(crate) struct FixedPoint {
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Iterates until successive sup-norm change ≤ `tol(1−γ)/(2γ)`.
pub(crate) fn fixed_point<M: RobustModel + ?Sized>(
    model: &M,
    sense: Sense,
    pi: Option<&Policy>,
    tol: f64,
    warm: Option<&[f64]>,
) -> FixedPoint {
    let gamma = model.discount();
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut v = warm.map_or_else(|| vec![0.0; model.n_states()], <[f64]>::to_vec);
    let mut iterations = 0;
    loop {
        let next = backup(model, &v, sense, pi);
        iterations += 1;
        let diff = sup_diff(&next, &v);
        v = next;
        if diff <= threshold {
            return FixedPoint { values: v, iterations };
        }
    }
}

/// Robust optimum of a model: values, greedy policy and iteration count.
pub(crate) fn robust_optimum<M: RobustModel + ?Sized>(model: &M, tol: f64, warm: Option<&[f64]>) -> (FixedPoint, Policy) {
    let fp = fixed_point(model, Sense::Worst, None, tol, warm);
    let mut q = vec![0.0; model.n_states() * model.n_actions()];
    model.q_values(&fp.values, Sense::Worst, &mut q);
    let policy = Policy::from_actions(model.n_actions(), greedy_actions(&q, model.n_actions()));
    (fp, policy)
}

/// Extremal return of a fixed policy and the kernel attaining it.
#[derive(Debug, Clone)]
pub(crate) struct PolicyExtreme {
    pub value: f64,
    pub kernel: Vec<f64>,
    pub values: Vec<f64>,
}

/// Value iteration followed by adversary policy iteration with exact evaluation,
/// so the returned kernel attains the returned value.
pub(crate) fn policy_extreme<M: RobustModel + ?Sized>(
    model: &M,
    pi: &Policy,
    sense: Sense,
    tol: f64,
) -> Result<PolicyExtreme> {
    let (n, m) = (model.n_states(), model.n_actions());
    pi.check_shape(n, m)?;
    let gamma = model.discount();
    let rewards = model.rewards();
    let initial = model.initial();
    let scale = model.value_scale();
    let mut v = fixed_point(model, sense, Some(pi), tol, None).values;
    let better = |a: f64, b: f64| match sense {
        Sense::Worst => a < b,
        Sense::Best => a > b,
    };
    let mut best: Option<PolicyExtreme> = None;
    let mut previous_kernel: Option<Vec<f64>> = None;
    for _ in 0..100 {
        let kernel = model.response_kernel(&v, sense);
        if previous_kernel.as_ref() == Some(&kernel) {
            break;
        }
        let chain = induce(&kernel, &rewards, n, m, pi);
        let exact = evaluate_chain(&chain, gamma, scale)?;
        let value = dot(&initial, &exact);
        let improved = best.as_ref().is_none_or(|b| better(value, b.value - 1e-15 * scale * flip(sense)));
        if !improved {
            break;
        }
        v = exact.clone();
        best = Some(PolicyExtreme { value, kernel: kernel.clone(), values: exact });
        previous_kernel = Some(kernel);
    }
    best.ok_or_else(|| Error::Numerical("policy evaluation produced no iterate".into()))
}

fn flip(sense: Sense) -> f64 {
    match sense {
        Sense::Worst => 1.0,
        Sense::Best => -1.0,
    }
}

/// Result of robust value iteration.
#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub value: ValueFunction,
    pub policy: Policy,
    /// Minimizing rows against the final value function.
    pub worst_model: TransitionFunction,
    pub iterations: usize,
    /// `‖T[V] − V‖∞` at the returned value.
    pub residual: f64,
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Parameter(format!("tolerance {tol} must be positive")));
    }
    Ok(())
}

/// `T[V](x) = max_a { r(x,a) + γ min_{p ∈ U(x,a)} pᵀV }`.
pub fn robust_bellman_apply(set: &UncertaintySet, v: &[f64]) -> Result<ValueFunction> {
    if v.len() != set.n_states() {
        return Err(Error::Dimension(format!("value has {} entries for {} states", v.len(), set.n_states())));
    }
    Ok(ValueFunction(backup(set, v, Sense::Worst, None)))
}

/// Robust optimal value, greedy policy and minimizing model.
pub fn robust_value_iteration(set: &UncertaintySet, tol: f64) -> Result<RobustSolution> {
    check_tol(tol)?;
    let (fp, policy) = robust_optimum(set, tol, None);
    let next = backup(set, &fp.values, Sense::Worst, None);
    let residual = sup_diff(&next, &fp.values);
    let kernel = set.response_kernel(&fp.values, Sense::Worst);
    Ok(RobustSolution {
        worst_model: TransitionFunction::from_raw(set.n_states(), set.n_actions(), kernel),
        value: ValueFunction(fp.values),
        policy,
        iterations: fp.iterations,
        residual,
    })
}

/// Extremal return of `pi` over the set with an attaining member.
pub fn evaluate_extreme(
    set: &UncertaintySet,
    pi: &Policy,
    sense: Sense,
    tol: f64,
) -> Result<(f64, TransitionFunction)> {
    check_tol(tol)?;
    let ext = policy_extreme(set, pi, sense, tol)?;
    Ok((ext.value, TransitionFunction::from_raw(set.n_states(), set.n_actions(), ext.kernel)))
}

/// `min_{P ∈ U} ρ(π, M(P))` and a minimizing member.
pub fn robust_evaluate_policy(set: &UncertaintySet, pi: &Policy, tol: f64) -> Result<(f64, TransitionFunction)> {
    evaluate_extreme(set, pi, Sense::Worst, tol)
}

/// `max_{P ∈ U} ρ(π, M(P))`.
pub fn best_case_evaluate(set: &UncertaintySet, pi: &Policy, tol: f64) -> Result<f64> {
    evaluate_extreme(set, pi, Sense::Best, tol).map(|(v, _)| v)
}
