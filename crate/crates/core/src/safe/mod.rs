//! Safe policy search: each solver returns a policy certified to match the baseline
//! on every model in the uncertainty set, or the baseline itself.

mod armdp;
mod rbc;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::augmented::AugmentedPolicy;
use crate::error::{Error, Result};
use crate::mdp::{return_of, solve_optimal, Mdp, Policy, TransitionFunction};
use crate::robust::{robust_evaluate_policy, robust_value_iteration, DEFAULT_TOLERANCE};
use crate::uncertainty::{ErrorFunction, UncertaintySet};

pub use armdp::{solve_augmented_rmdp, subgradient_step, SubgradientSchedule};
pub use rbc::{certified_improvement, coupled_worstcase, solve_rbc, ImprovementBound, RbcOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ramdp,
    Rmdp,
    Armdp,
    Rbc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ramdp, Method::Rmdp, Method::Armdp, Method::Rbc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ramdp => "ramdp",
            Method::Rmdp => "rmdp",
            Method::Armdp => "armdp",
            Method::Rbc => "rbc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

/// Policy produced by a safe solver.
#[derive(Debug, Clone, PartialEq)]
pub enum SafePolicy {
    Markov(Policy),
    Augmented(AugmentedPolicy),
}

impl SafePolicy {
    /// Return when deployed on the true dynamics; augmented policies co-simulate
    /// the simulator chain.
    pub fn true_return(&self, simulator: &Mdp, true_transition: &TransitionFunction) -> Result<f64> {
        match self {
            SafePolicy::Markov(pi) => return_of(&simulator.with_transition(true_transition.clone())?, pi),
            SafePolicy::Augmented(pi) => pi.true_return(simulator, true_transition),
        }
    }

    pub fn as_markov(&self) -> Option<&Policy> {
        match self {
            SafePolicy::Markov(pi) => Some(pi),
            SafePolicy::Augmented(_) => None,
        }
    }
}

/// Solver diagnostics; fields not produced by a method stay `None` or empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_cap_hit: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    /// False when acceptance rests on an uncertified estimate.
    pub certified: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lambda_history: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafePolicyResult {
    pub policy: SafePolicy,
    /// Lower bound compared against the baseline: a return for ramdp, rmdp and
    /// armdp, an improvement over the baseline for rbc.
    pub certified_value: f64,
    /// False when the policy is the baseline fallback.
    pub accepted: bool,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl SafePolicyResult {
    pub fn true_return(&self, simulator: &Mdp, true_transition: &TransitionFunction) -> Result<f64> {
        self.policy.true_return(simulator, true_transition)
    }
}

fn check_baseline(baseline: &Policy, n_states: usize, n_actions: usize, baseline_return: Option<f64>) -> Result<()> {
    baseline.check_shape(n_states, n_actions)?;
    if let Some(rho) = baseline_return {
        if !rho.is_finite() {
            return Err(Error::Parameter(format!("baseline return {rho} is not finite")));
        }
    }
    Ok(())
}

fn decide(
    candidate: Policy,
    value: f64,
    baseline: &Policy,
    baseline_return: f64,
    method: Method,
    diagnostics: Diagnostics,
) -> SafePolicyResult {
    let accepted = value > baseline_return;
    SafePolicyResult {
        policy: SafePolicy::Markov(if accepted { candidate } else { baseline.clone() }),
        certified_value: value,
        accepted,
        method,
        diagnostics: Diagnostics { certified: true, ..diagnostics },
    }
}

/// Simulator with rewards `r(x,a) − γ·Rmax·e(x,a)/(1−γ)`.
pub fn adjust_rewards(simulator: &Mdp, e: &ErrorFunction) -> Result<Mdp> {
    e.check_shape(simulator.n_states(), simulator.n_actions())?;
    let gamma = simulator.discount();
    let penalty = gamma * simulator.r_max() / (1.0 - gamma);
    let rewards = simulator.rewards().iter().zip(e.as_slice()).map(|(r, err)| r - penalty * err).collect();
    Ok(simulator.with_relaxed_rewards(rewards))
}

/// Optimal policy of the reward-adjusted simulator, accepted when its adjusted
/// return beats the baseline.
pub fn solve_ramdp(
    simulator: &Mdp,
    e: &ErrorFunction,
    baseline: &Policy,
    baseline_return: f64,
) -> Result<SafePolicyResult> {
    check_baseline(baseline, simulator.n_states(), simulator.n_actions(), Some(baseline_return))?;
    let adjusted = adjust_rewards(simulator, e)?;
    let (pi, _) = solve_optimal(&adjusted);
    let value = return_of(&adjusted, &pi)?;
    Ok(decide(pi, value, baseline, baseline_return, Method::Ramdp, Diagnostics::default()))
}

/// Robust optimal policy, accepted when its worst-case return beats the baseline.
pub fn solve_rmdp_safe(set: &UncertaintySet, baseline: &Policy, baseline_return: f64) -> Result<SafePolicyResult> {
    check_baseline(baseline, set.n_states(), set.n_actions(), Some(baseline_return))?;
    let sol = robust_value_iteration(set, DEFAULT_TOLERANCE)?;
    let (value, _) = robust_evaluate_policy(set, &sol.policy, DEFAULT_TOLERANCE)?;
    let diagnostics = Diagnostics { iterations: Some(sol.iterations), residual: Some(sol.residual), ..Default::default() };
    Ok(decide(sol.policy, value, baseline, baseline_return, Method::Rmdp, diagnostics))
}
