//! JSON documents for models and policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::uncertainty::{error_from_counts, CountTable, ErrorFunction, UncertaintySet};

/// A model as stored on disk; `counts` or `error` optionally describe its accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub r_max: f64,
    /// `[state][action]`.
    pub reward: Vec<Vec<f64>>,
    /// `[state][action][next]`.
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<Vec<Vec<u64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Vec<Vec<f64>>>,
}

/// Where the error budgets of a model come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorSource {
    /// Concentration bound on the stored counts at confidence `1 − delta`.
    Counts { delta: f64 },
    /// The stored `error` table.
    Inline,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.check_shape()?;
        Ok(doc)
    }

    /// Pretty JSON; floats use the shortest representation that parses back to the
    /// same bits.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents serialize")
    }

    pub fn from_mdp(mdp: &Mdp) -> Self {
        let n = mdp.n_states();
        let m = mdp.n_actions();
        Self {
            n_states: n,
            n_actions: m,
            gamma: mdp.discount(),
            r_max: mdp.r_max(),
            reward: mdp.rewards().chunks(m).map(|c| c.to_vec()).collect(),
            transition: mdp.transition().to_nested(),
            initial_dist: mdp.initial().to_vec(),
            counts: None,
            error: None,
        }
    }

    fn check_shape(&self) -> Result<()> {
        let (n, m) = (self.n_states, self.n_actions);
        if n == 0 || m == 0 {
            return Err(Error::Dimension("models need at least one state and one action".into()));
        }
        let table = |len: usize, what: &str, expected: usize| -> Result<()> {
            if len != expected {
                return Err(Error::Dimension(format!("{what} has {len} entries, expected {expected}")));
            }
            Ok(())
        };
        table(self.reward.len(), "reward", n)?;
        table(self.transition.len(), "transition", n)?;
        table(self.initial_dist.len(), "initial_dist", n)?;
        for (s, r) in self.reward.iter().enumerate() {
            table(r.len(), &format!("reward[{s}]"), m)?;
        }
        for (s, rows) in self.transition.iter().enumerate() {
            table(rows.len(), &format!("transition[{s}]"), m)?;
            for (a, row) in rows.iter().enumerate() {
                table(row.len(), &format!("transition[{s}][{a}]"), n)?;
            }
        }
        if let Some(counts) = &self.counts {
            table(counts.len(), "counts", n)?;
            for (s, rows) in counts.iter().enumerate() {
                table(rows.len(), &format!("counts[{s}]"), m)?;
                for (a, row) in rows.iter().enumerate() {
                    table(row.len(), &format!("counts[{s}][{a}]"), n)?;
                }
            }
        }
        if let Some(error) = &self.error {
            table(error.len(), "error", n)?;
            for (s, r) in error.iter().enumerate() {
                table(r.len(), &format!("error[{s}]"), m)?;
            }
        }
        Ok(())
    }

    pub fn to_mdp(&self) -> Result<Mdp> {
        self.check_shape()?;
        Mdp::from_nested(self.reward.clone(), self.transition.clone(), self.initial_dist.clone(), self.gamma, self.r_max)
    }

    pub fn count_table(&self) -> Result<Option<CountTable>> {
        self.check_shape()?;
        self.counts.as_deref().map(CountTable::from_nested).transpose()
    }

    pub fn error_function(&self, source: ErrorSource) -> Result<ErrorFunction> {
        match source {
            ErrorSource::Inline => {
                let rows = self.error.as_deref().ok_or_else(|| Error::Parameter("model has no error table".into()))?;
                self.check_shape()?;
                ErrorFunction::from_nested(rows)
            }
            ErrorSource::Counts { delta } => {
                let counts = self.count_table()?.ok_or_else(|| Error::Parameter("model has no counts".into()))?;
                error_from_counts(&counts, delta)
            }
        }
    }

    pub fn uncertainty_set(&self, source: ErrorSource) -> Result<UncertaintySet> {
        UncertaintySet::new(self.to_mdp()?, self.error_function(source)?)
    }
}

/// A policy as stored on disk: one action per state, or action probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyDocument {
    Actions { actions: Vec<usize> },
    Probabilities { probabilities: Vec<Vec<f64>> },
}

impl PolicyDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let keys = value.as_object().map(|o| o.len()).unwrap_or(0);
        if keys != 1 {
            return Err(Error::Parse("policy must have exactly one of `actions` or `probabilities`".into()));
        }
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_policy(pi: &Policy) -> Self {
        match pi.actions() {
            Some(actions) => PolicyDocument::Actions { actions: actions.to_vec() },
            None => PolicyDocument::Probabilities { probabilities: pi.to_nested() },
        }
    }

    pub fn to_policy(&self, n_states: usize, n_actions: usize) -> Result<Policy> {
        let pi = match self {
            PolicyDocument::Actions { actions } => Policy::deterministic(n_actions, actions.clone())?,
            PolicyDocument::Probabilities { probabilities } => Policy::stochastic(n_actions, probabilities.clone())?,
        };
        if pi.n_states() != n_states {
            return Err(Error::Dimension(format!("policy covers {} states, model has {n_states}", pi.n_states())));
        }
        Ok(pi)
    }
}
