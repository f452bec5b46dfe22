//! Lagrangian saddle point of the augmented robust MDP by projected subgradient descent
//! on the multiplier.

use crate::augmented::{AugmentedPolicy, AugmentedRobust};
use crate::error::{Error, Result};
use crate::mdp::{dot, Mdp, Policy};
use crate::robust::{
    policy_extreme, robust_evaluate_policy, robust_optimum, robust_value_iteration, RobustModel, Sense,
    DEFAULT_TOLERANCE,
};
use crate::uncertainty::UncertaintySet;

use super::{check_baseline, Diagnostics, Method, SafePolicy, SafePolicyResult};

/// Window over which the best dual value must stop improving to count as converged.
const CONVERGENCE_WINDOW: usize = 10;
const CONVERGENCE_TOLERANCE: f64 = 1e-6;

/// Step sizes `α_j = alpha0/(j+1)` for the multiplier update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientSchedule {
    pub alpha0: f64,
    pub max_iters: usize,
    pub lambda_cap: f64,
    pub lambda_init: f64,
}

impl SubgradientSchedule {
    /// Steps normalized by the return scale `Rmax/(1−γ)`; cap at `10³` times that scale.
    pub fn for_model(mdp: &Mdp) -> Self {
        let scale = mdp.r_max() / (1.0 - mdp.discount());
        Self { alpha0: 1.0 / scale, max_iters: 200, lambda_cap: 1e3 * scale, lambda_init: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Parameter(format!("alpha0 {} must be positive", self.alpha0)));
        }
        if !(self.lambda_cap > 0.0 && self.lambda_cap.is_finite()) {
            return Err(Error::Parameter(format!("lambda cap {} must be positive", self.lambda_cap)));
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init <= self.lambda_cap) {
            return Err(Error::Parameter(format!("lambda init {} must lie in [0, cap]", self.lambda_init)));
        }
        Ok(())
    }

    pub fn step_size(&self, j: usize) -> f64 {
        self.alpha0 / (j as f64 + 1.0)
    }
}

/// `λ' = max(0, λ − α·violation)` where `violation` is the constraint slack.
pub fn subgradient_step(lambda: f64, alpha: f64, violation: f64) -> f64 {
    (lambda - alpha * violation).max(0.0)
}

/// Solution of the inner robust problem at one multiplier.
#[derive(Debug, Clone)]
struct DualPoint {
    lambda: f64,
    dual: f64,
    slack: f64,
    policy: Policy,
    warm: Vec<f64>,
}

fn evaluate_multiplier(
    set: &UncertaintySet,
    lambda: f64,
    baseline_return: f64,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<DualPoint> {
    let model = AugmentedRobust::new(set, lambda, 1.0)?;
    let (fp, policy) = robust_optimum(&model, tol, warm);
    let dual = dot(&model.initial(), &fp.values) - lambda * baseline_return;
    let constraint = AugmentedRobust::new(set, 1.0, 0.0)?;
    let worst = policy_extreme(&constraint, &policy, Sense::Worst, tol)?.value;
    Ok(DualPoint { lambda, dual, slack: worst - baseline_return, policy, warm: fp.values })
}

/// Augmented robust policy maximizing simulator return subject to a worst-case
/// true-side return above the baseline.
///
/// A certified policy exists exactly when the robust optimum beats the baseline;
/// otherwise the dual is unbounded, the multiplier is reported at its cap and the
/// baseline is returned.
pub fn solve_augmented_rmdp(
    set: &UncertaintySet,
    baseline: &Policy,
    baseline_return: f64,
    sched: &SubgradientSchedule,
) -> Result<SafePolicyResult> {
    check_baseline(baseline, set.n_states(), set.n_actions(), Some(baseline_return))?;
    sched.validate()?;
    let tol = DEFAULT_TOLERANCE;
    let robust = robust_value_iteration(set, tol)?;
    let (robust_value, _) = robust_evaluate_policy(set, &robust.policy, tol)?;
    if robust_value <= baseline_return {
        return Ok(SafePolicyResult {
            policy: SafePolicy::Markov(baseline.clone()),
            certified_value: robust_value,
            accepted: false,
            method: Method::Armdp,
            diagnostics: Diagnostics {
                iterations: Some(0),
                final_lambda: Some(sched.lambda_cap),
                lambda_cap_hit: Some(true),
                dual_converged: Some(false),
                certified: true,
                ..Default::default()
            },
        });
    }

    let mut current = evaluate_multiplier(set, sched.lambda_init, baseline_return, tol, None)?;
    let mut best_dual = current.dual;
    let mut feasible: Option<DualPoint> = (current.slack > 0.0).then(|| current.clone());
    let mut lambda_history = vec![current.lambda];
    let mut dual_history = vec![best_dual];
    for j in 0..sched.max_iters {
        let trial = subgradient_step(current.lambda, sched.step_size(j), current.slack).min(sched.lambda_cap);
        if trial != current.lambda {
            let point = evaluate_multiplier(set, trial, baseline_return, tol, Some(&current.warm))?;
            if point.slack > 0.0 && feasible.as_ref().is_none_or(|f| point.dual < f.dual) {
                feasible = Some(point.clone());
            }
            if point.dual <= best_dual {
                best_dual = point.dual;
                current = point;
            }
        }
        lambda_history.push(current.lambda);
        dual_history.push(best_dual);
    }

    let converged = dual_history.len() > CONVERGENCE_WINDOW
        && dual_history.windows(2).rev().take(CONVERGENCE_WINDOW).all(|w| (w[0] - w[1]).abs() < CONVERGENCE_TOLERANCE);
    let lambda_cap_hit = current.lambda >= sched.lambda_cap;
    let (policy, slack) = if current.slack > 0.0 {
        (current.policy.clone(), current.slack)
    } else if let Some(f) = feasible {
        (f.policy, f.slack)
    } else {
        (AugmentedPolicy::lift(&robust.policy).policy().clone(), robust_value - baseline_return)
    };
    Ok(SafePolicyResult {
        policy: SafePolicy::Augmented(AugmentedPolicy::new(set.n_states(), policy)?),
        certified_value: baseline_return + slack,
        accepted: true,
        method: Method::Armdp,
        diagnostics: Diagnostics {
            iterations: Some(sched.max_iters),
            final_lambda: Some(current.lambda),
            lambda_cap_hit: Some(lambda_cap_hit),
            dual_converged: Some(converged),
            dual_value: Some(best_dual),
            certified: true,
            lambda_history,
            dual_history,
            ..Default::default()
        },
    })
}
