//! L1 error budgets, rectangular uncertainty sets and the worst-case row oracle.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{normalize_distribution, Mdp, Policy, TransitionFunction, ROW_TOLERANCE};

/// L1 diameter of the probability simplex.
pub const MAX_BUDGET: f64 = 2.0;
/// Slack allowed on L1 membership checks.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-12;

/// Per-(state, action) L1 budgets `e(x,a) ∈ [0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFunction {
    n_states: usize,
    n_actions: usize,
    budget: Vec<f64>,
}

impl ErrorFunction {
    /// Flat `[x][a]` budgets; values above 2 are clipped.
    pub fn new(n_states: usize, n_actions: usize, budget: Vec<f64>) -> Result<Self> {
        if budget.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "error function has {} entries, expected {}",
                budget.len(),
                n_states * n_actions
            )));
        }
        if let Some(e) = budget.iter().find(|e| e.is_nan() || **e < 0.0) {
            return Err(Error::Parameter(format!("error budget {e} is negative")));
        }
        let budget = budget.into_iter().map(|e| e.min(MAX_BUDGET)).collect();
        Ok(Self { n_states, n_actions, budget })
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Dimension("ragged error function".into()));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn constant(n_states: usize, n_actions: usize, e: f64) -> Result<Self> {
        Self::new(n_states, n_actions, vec![e; n_states * n_actions])
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, budget: vec![0.0; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.budget[s * self.n_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.budget
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.budget.chunks(self.n_actions).map(|c| c.to_vec()).collect()
    }

    /// `‖e‖∞`.
    pub fn norm_inf(&self) -> f64 {
        self.budget.iter().copied().fold(0.0, f64::max)
    }

    /// `e_π(x) = Σ_a π(a|x) e(x,a)`.
    pub fn policy_weighted(&self, pi: &Policy) -> Result<Vec<f64>> {
        pi.check_shape(self.n_states, self.n_actions)?;
        Ok((0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| pi.prob(s, a) * self.get(s, a)).sum())
            .collect())
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Dimension(format!(
                "error function is {}x{}, model is {n_states}x{n_actions}",
                self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// Visit counts `N(x,a,x')`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    n_states: usize,
    n_actions: usize,
    counts: Vec<u64>,
}

impl CountTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, counts: vec![0; n_states * n_actions * n_states] }
    }

    /// Flat `[x][a][x']` counts.
    pub fn new(n_states: usize, n_actions: usize, counts: Vec<u64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || counts.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "count table has {} entries for {n_states} states and {n_actions} actions",
                counts.len()
            )));
        }
        Ok(Self { n_states, n_actions, counts })
    }

    pub fn from_nested(rows: &[Vec<Vec<u64>>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, |r| r.len());
        let mut counts = Vec::with_capacity(n_states * n_actions * n_states);
        for per_state in rows {
            if per_state.len() != n_actions || per_state.iter().any(|r| r.len() != n_states) {
                return Err(Error::Dimension("ragged count table".into()));
            }
            per_state.iter().for_each(|r| counts.extend_from_slice(r));
        }
        Self::new(n_states, n_actions, counts)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[u64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.counts[start..start + self.n_states]
    }

    pub(crate) fn row_mut(&mut self, s: usize, a: usize) -> &mut [u64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &mut self.counts[start..start + self.n_states]
    }

    /// `N(x,a)`.
    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.row(s, a).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<u64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect()
    }

    /// `k/N(x,a)` per next state, `None` when the pair was never visited.
    pub fn empirical_row(&self, s: usize, a: usize) -> Option<Vec<f64>> {
        let n = self.visits(s, a);
        (n > 0).then(|| self.row(s, a).iter().map(|&k| k as f64 / n as f64).collect())
    }

    /// Empirical transition function; unvisited rows are uniform.
    pub fn empirical_transition(&self) -> TransitionFunction {
        let uniform = 1.0 / self.n_states as f64;
        let mut probs = Vec::with_capacity(self.counts.len());
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                match self.empirical_row(s, a) {
                    Some(row) => probs.extend(row),
                    None => probs.extend(std::iter::repeat_n(uniform, self.n_states)),
                }
            }
        }
        TransitionFunction::from_raw(self.n_states, self.n_actions, probs)
    }
}

/// `ln(2^n - 2)` without overflow, for `n ≥ 2`.
fn ln_two_pow_minus_two(n: usize) -> f64 {
    n as f64 * LN_2 + (-(2.0f64).powi(1 - n as i32)).ln_1p()
}

/// L1 concentration budget `√((2/N)·ln(|X||A|(2^|X| − 2)/δ))`, clipped to `[0, 2]`;
/// unvisited pairs get the full simplex.
pub fn error_from_counts(counts: &CountTable, delta: f64) -> Result<ErrorFunction> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta {delta} is not in (0,1)")));
    }
    let (n, m) = (counts.n_states, counts.n_actions);
    let log_term = if n >= 2 {
        ((n * m) as f64).ln() + ln_two_pow_minus_two(n) - delta.ln()
    } else {
        0.0
    };
    let mut budget = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            let visits = counts.visits(s, a);
            let e = if visits == 0 {
                MAX_BUDGET
            } else if n < 2 {
                0.0
            } else {
                (2.0 / visits as f64 * log_term.max(0.0)).sqrt().min(MAX_BUDGET)
            };
            budget.push(e);
        }
    }
    ErrorFunction::new(n, m, budget)
}

/// Whether the oracle minimizes or maximizes `pᵀv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Worst,
    Best,
}

/// Mass-moving order shared by every row responding to the same value vector.
#[derive(Debug, Clone)]
pub(crate) struct ResponseOrder {
    receiver: usize,
    donors: Vec<usize>,
}

impl ResponseOrder {
    pub(crate) fn new(values: &[f64], sense: Sense) -> Self {
        let cost = |i: usize| match sense {
            Sense::Worst => values[i],
            Sense::Best => -values[i],
        };
        let mut receiver = 0;
        for i in 1..values.len() {
            if cost(i) < cost(receiver) {
                receiver = i;
            }
        }
        let mut donors: Vec<usize> = (0..values.len()).filter(|&i| i != receiver).collect();
        donors.sort_by(|&i, &j| cost(j).total_cmp(&cost(i)).then(i.cmp(&j)));
        Self { receiver, donors }
    }

    fn moved_mass(&self, row: &[f64], budget: f64) -> f64 {
        (budget.min(MAX_BUDGET) / 2.0).min(1.0 - row[self.receiver]).max(0.0)
    }

    /// Extremal `pᵀv` over the budget ball around `row`.
    pub(crate) fn value(&self, row: &[f64], budget: f64, values: &[f64]) -> f64 {
        let base: f64 = row.iter().zip(values).map(|(p, v)| p * v).sum();
        let eps = self.moved_mass(row, budget);
        if eps == 0.0 {
            return base;
        }
        let mut value = base + eps * values[self.receiver];
        let mut remaining = eps;
        for &j in &self.donors {
            let take = row[j].min(remaining);
            value -= take * values[j];
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
        value
    }

    /// Extremal row itself.
    pub(crate) fn row(&self, row: &[f64], budget: f64, out: &mut [f64]) {
        out.copy_from_slice(row);
        let eps = self.moved_mass(row, budget);
        if eps == 0.0 {
            return;
        }
        out[self.receiver] += eps;
        let mut remaining = eps;
        for &j in &self.donors {
            let take = out[j].min(remaining);
            out[j] -= take;
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
    }
}

/// Minimizes `pᵀv` over `{p ∈ Δ : ‖p − p̂‖₁ ≤ e}`, returning the minimizer and the minimum.
///
/// Moves `min(e/2, 1 − p̂_i)` mass onto the lowest-value state `i`, taking it from the
/// highest-value states first. Ties go to the lowest state index.
pub fn worst_case_response(nominal_row: &[f64], budget: f64, values: &[f64]) -> Result<(Vec<f64>, f64)> {
    extreme_response(nominal_row, budget, values, Sense::Worst)
}

/// Minimizer (`Sense::Worst`) or maximizer (`Sense::Best`) of `pᵀv` over the budget ball.
pub fn extreme_response(nominal_row: &[f64], budget: f64, values: &[f64], sense: Sense) -> Result<(Vec<f64>, f64)> {
    let mut row = nominal_row.to_vec();
    normalize_distribution(&mut row, ROW_TOLERANCE, "nominal row")?;
    if values.len() != row.len() {
        return Err(Error::Dimension(format!("{} values for a row of length {}", values.len(), row.len())));
    }
    if budget.is_nan() || budget < 0.0 {
        return Err(Error::Parameter(format!("budget {budget} is negative")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("values must be finite".into()));
    }
    let order = ResponseOrder::new(values, sense);
    let mut out = vec![0.0; row.len()];
    order.row(&row, budget, &mut out);
    let value = out.iter().zip(values).map(|(p, v)| p * v).sum();
    Ok((out, value))
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Rectangular L1 uncertainty set `U(P̂, e)` around a simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    nominal: Mdp,
    error: ErrorFunction,
}

impl UncertaintySet {
    pub fn new(nominal: Mdp, error: ErrorFunction) -> Result<Self> {
        error.check_shape(nominal.n_states(), nominal.n_actions())?;
        Ok(Self { nominal, error })
    }

    pub fn nominal(&self) -> &Mdp {
        &self.nominal
    }

    pub fn error(&self) -> &ErrorFunction {
        &self.error
    }

    pub fn n_states(&self) -> usize {
        self.nominal.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.nominal.n_actions()
    }

    /// Whether every row of `candidate` lies within its budget of the nominal row.
    pub fn contains(&self, candidate: &TransitionFunction) -> bool {
        let (n, m) = (self.n_states(), self.n_actions());
        if candidate.n_states() != n || candidate.n_actions() != m {
            return false;
        }
        (0..n).all(|s| {
            (0..m).all(|a| {
                let row = candidate.row(s, a);
                let mass: f64 = row.iter().sum();
                row.iter().all(|p| *p >= 0.0)
                    && (mass - 1.0).abs() <= ROW_TOLERANCE
                    && l1_distance(row, self.nominal.transition().row(s, a))
                        <= self.error.get(s, a) + MEMBERSHIP_TOLERANCE
            })
        })
    }

    /// Largest row-wise L1 distance between two members; at most `2·max e`.
    pub fn mirror_membership_bound(&self, p1: &TransitionFunction, p2: &TransitionFunction) -> Result<f64> {
        for (name, p) in [("first", p1), ("second", p2)] {
            if !self.contains(p) {
                return Err(Error::Membership(format!("{name} transition function")));
            }
        }
        let (n, m) = (self.n_states(), self.n_actions());
        let mut worst: f64 = 0.0;
        for s in 0..n {
            for a in 0..m {
                worst = worst.max(l1_distance(p1.row(s, a), p2.row(s, a)));
            }
        }
        Ok(worst)
    }

    /// Random member of the set; mixes interior points with extreme points.
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionFunction {
        let (n, m) = (self.n_states(), self.n_actions());
        let mut probs = Vec::with_capacity(n * m * n);
        let mut row = vec![0.0; n];
        for s in 0..n {
            for a in 0..m {
                let nominal = self.nominal.transition().row(s, a);
                let e = self.error.get(s, a);
                if rng.random_bool(0.3) {
                    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                    ResponseOrder::new(&v, Sense::Worst).row(nominal, e, &mut row);
                } else {
                    sample_row_within(nominal, e, rng, &mut row);
                }
                probs.extend_from_slice(&row);
            }
        }
        TransitionFunction::from_raw(n, m, probs)
    }
}

/// Random distribution within L1 distance `radius` of `center`.
pub fn sample_row_within<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R, out: &mut [f64]) {
    let mut target: Vec<f64> = center.iter().map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    if rng.random_bool(0.5) {
        let k = rng.random_range(0..center.len());
        target.iter_mut().enumerate().for_each(|(i, t)| *t = if i == k { 1.0 } else { 0.0 });
    }
    let total: f64 = target.iter().sum();
    target.iter_mut().for_each(|t| *t /= total);
    let dist = l1_distance(&target, center);
    let reach = if dist > 0.0 { (radius / dist).min(1.0) } else { 0.0 };
    let t = reach * rng.random::<f64>();
    for ((o, c), q) in out.iter_mut().zip(center).zip(&target) {
        *o = (1.0 - t) * c + t * q;
    }
}
