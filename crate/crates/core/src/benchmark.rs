//! Synthetic grid benchmark: a true model, a baseline that ignores the second grid
//! dimension, sampled simulators, and the improvement experiment over sample sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::optimal_return;
use crate::error::{Error, Result};
use crate::mdp::{return_of, solve_optimal_exact, Mdp, Policy, TransitionFunction};
use crate::safe::{solve_ramdp, solve_rbc, solve_rmdp_safe, RbcOptions};
use crate::uncertainty::{error_from_counts, CountTable, UncertaintySet};

/// Largest grid accepted by [`BenchmarkConfig::validate`].
pub const MAX_GRID_STATES: usize = 10_000;
const INC1: usize = 0;
const DEC1: usize = 1;
const INC2: usize = 2;
const DEC2: usize = 3;

/// How the sampler picks state-action pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// Every pair equally often.
    Uniform,
    /// Uniform states; the baseline action with probability `1 − epsilon`, else uniform.
    BaselineMix { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub dim1: usize,
    pub dim2: usize,
    pub success_base: f64,
    pub success_slope: f64,
    pub gamma: f64,
    pub r_max: f64,
    pub seed: u64,
    pub sample_sizes: Vec<u64>,
    pub delta: f64,
    pub behavior: Behavior,
    pub n_trials: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dim1: 5,
            dim2: 5,
            success_base: 0.6,
            success_slope: 0.35,
            gamma: 0.95,
            r_max: 1.0,
            seed: 0,
            sample_sizes: vec![200, 2_000, 200_000, 20_000_000, 200_000_000, 2_000_000_000],
            delta: 0.05,
            behavior: Behavior::Uniform,
            n_trials: 20,
        }
    }
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim1 == 0 || self.dim2 == 0 {
            return Err(Error::Parameter("grid dimensions must be at least 1".into()));
        }
        if self.dim1.checked_mul(self.dim2).is_none_or(|n| n > MAX_GRID_STATES) {
            return Err(Error::TooLarge(format!("grid {}x{} exceeds {MAX_GRID_STATES} states", self.dim1, self.dim2)));
        }
        if !(self.success_base > 0.0 && self.success_base <= 1.0) {
            return Err(Error::Parameter(format!("success_base {} is not in (0,1]", self.success_base)));
        }
        if !self.success_slope.is_finite() {
            return Err(Error::Parameter("success_slope must be finite".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma {} is not in (0,1)", self.gamma)));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::Parameter(format!("r_max {} must be positive", self.r_max)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("delta {} is not in (0,1)", self.delta)));
        }
        if let Behavior::BaselineMix { epsilon } = self.behavior {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Parameter(format!("epsilon {epsilon} is not in [0,1]")));
            }
        }
        Ok(())
    }

    /// Success probability of a move in column `j`.
    fn success(&self, j: usize) -> f64 {
        let span = self.dim2.saturating_sub(1).max(1) as f64;
        (self.success_base + self.success_slope * j as f64 / span).clamp(0.05, 1.0)
    }
}

/// True grid model and the baseline that is optimal once the second dimension is
/// averaged out.
///
/// States are `(i, j)` indexed `i·dim2 + j`; actions move one step along a dimension
/// and succeed with a probability that grows with `j`; a failed move drops `i` by one.
/// Rewards grow with `i`.
pub fn make_grid_benchmark(cfg: &BenchmarkConfig) -> Result<(Mdp, Policy)> {
    cfg.validate()?;
    let (n1, n2) = (cfg.dim1, cfg.dim2);
    let n = n1 * n2;
    let m = 4;
    let level = |i: usize| cfg.r_max * i as f64 / n1.saturating_sub(1).max(1) as f64;
    let mut reward = Vec::with_capacity(n * m);
    let mut probs = vec![0.0; n * m * n];
    for i in 0..n1 {
        for j in 0..n2 {
            let s = i * n2 + j;
            let q = cfg.success(j);
            for a in 0..m {
                reward.push(level(i));
                let target = match a {
                    INC1 => (i + 1).min(n1 - 1) * n2 + j,
                    DEC1 => i.saturating_sub(1) * n2 + j,
                    INC2 => i * n2 + (j + 1).min(n2 - 1),
                    DEC2 => i * n2 + j.saturating_sub(1),
                    _ => unreachable!("four actions"),
                };
                let row = &mut probs[(s * m + a) * n..(s * m + a + 1) * n];
                row[target] += q;
                row[i.saturating_sub(1) * n2 + j] += 1.0 - q;
            }
        }
    }
    let transition = TransitionFunction::new(n, m, probs)?;
    let mdp = Mdp::new(reward, transition, vec![1.0 / n as f64; n], cfg.gamma, cfg.r_max)?;
    let baseline = projected_baseline(cfg, level)?;
    Ok((mdp, baseline))
}

/// Optimal dimension-one policy when success rates are averaged over columns,
/// lifted so every column repeats it.
fn projected_baseline(cfg: &BenchmarkConfig, level: impl Fn(usize) -> f64) -> Result<Policy> {
    let (n1, n2) = (cfg.dim1, cfg.dim2);
    let q = (0..n2).map(|j| cfg.success(j)).sum::<f64>() / n2 as f64;
    let mut probs = vec![0.0; n1 * 2 * n1];
    let mut reward = Vec::with_capacity(n1 * 2);
    for i in 0..n1 {
        for (a, target) in [(i + 1).min(n1 - 1), i.saturating_sub(1)].into_iter().enumerate() {
            reward.push(level(i));
            let row = &mut probs[(i * 2 + a) * n1..(i * 2 + a + 1) * n1];
            row[target] += q;
            row[i.saturating_sub(1)] += 1.0 - q;
        }
    }
    let projected = Mdp::new(reward, TransitionFunction::new(n1, 2, probs)?, vec![1.0 / n1 as f64; n1], cfg.gamma, cfg.r_max)?;
    let (pi, _) = solve_optimal_exact(&projected)?;
    let actions = pi.actions().expect("deterministic optimum");
    let lifted = (0..n1 * n2).map(|s| if actions[s / n2] == 0 { INC1 } else { DEC1 }).collect();
    Policy::deterministic(4, lifted)
}

/// Splits `total` draws over `weights` (summing to one) by sequential binomials.
fn multinomial<R: Rng + ?Sized>(total: u64, weights: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut left = total;
    let mut mass = 1.0;
    for (k, (&w, o)) in weights.iter().zip(out.iter_mut()).enumerate() {
        if left == 0 {
            *o = 0;
            continue;
        }
        if k + 1 == weights.len() || mass <= w {
            *o = left;
            left = 0;
            continue;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, p).expect("probability in [0,1]").sample(rng);
        *o = draw;
        left -= draw;
        mass -= w;
    }
}

/// Visit counts from `n_samples` transitions of `true_mdp`: pairs are drawn from the
/// behavior distribution and next states from the true rows. Deterministic per seed.
pub fn sample_model(
    true_mdp: &Mdp,
    n_samples: u64,
    behavior: Behavior,
    baseline: &Policy,
    seed: u64,
) -> Result<CountTable> {
    let (n, m) = (true_mdp.n_states(), true_mdp.n_actions());
    baseline.check_shape(n, m)?;
    let mut pair_weights = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            let w = match behavior {
                Behavior::Uniform => 1.0 / m as f64,
                Behavior::BaselineMix { epsilon } => {
                    if !(0.0..=1.0).contains(&epsilon) {
                        return Err(Error::Parameter(format!("epsilon {epsilon} is not in [0,1]")));
                    }
                    (1.0 - epsilon) * baseline.prob(s, a) + epsilon / m as f64
                }
            };
            pair_weights.push(w / n as f64);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visits = vec![0u64; n * m];
    multinomial(n_samples, &pair_weights, &mut rng, &mut visits);
    let mut counts = CountTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            let k = visits[s * m + a];
            if k > 0 {
                multinomial(k, true_mdp.transition().row(s, a), &mut rng, counts.row_mut(s, a));
            }
        }
    }
    Ok(counts)
}

/// Methods compared by the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BenchMethod {
    /// Optimal policy of the empirical simulator.
    #[serde(rename = "EXP")]
    Exp,
    /// Reward-adjusted simulator.
    #[serde(rename = "RWA")]
    Rwa,
    /// Robust MDP.
    #[serde(rename = "ROB")]
    Rob,
    /// Robust baseline regret.
    #[serde(rename = "RBC")]
    Rbc,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [BenchMethod::Exp, BenchMethod::Rwa, BenchMethod::Rob, BenchMethod::Rbc];

    pub fn label(self) -> &'static str {
        match self {
            BenchMethod::Exp => "EXP",
            BenchMethod::Rwa => "RWA",
            BenchMethod::Rob => "ROB",
            BenchMethod::Rbc => "RBC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: BenchMethod,
    pub sample_size: u64,
    pub trial: usize,
    pub improvement_pct: f64,
}

/// Whether the true model was inside the trial's uncertainty set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialMembership {
    pub sample_size: u64,
    pub trial: usize,
    pub true_model_in_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: BenchmarkConfig,
    pub rows: Vec<ResultRow>,
    pub membership: Vec<TrialMembership>,
    /// Improvement of the true optimal policy: 100, or 0 when it equals the baseline.
    pub optimal_reference_pct: f64,
    pub optimal_return: f64,
    pub baseline_return: f64,
}

impl ExperimentResult {
    pub fn membership_violation_rate(&self) -> f64 {
        if self.membership.is_empty() {
            return 0.0;
        }
        self.membership.iter().filter(|t| !t.true_model_in_set).count() as f64 / self.membership.len() as f64
    }

    pub fn in_set(&self, sample_size: u64, trial: usize) -> bool {
        self.membership.iter().any(|t| t.sample_size == sample_size && t.trial == trial && t.true_model_in_set)
    }

    /// Mean improvement of `method` at `sample_size`, over all trials or only those
    /// whose uncertainty set contains the true model.
    pub fn mean(&self, method: BenchMethod, sample_size: u64, in_set_only: bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.sample_size == sample_size)
            .filter(|r| !in_set_only || self.in_set(r.sample_size, r.trial))
            .map(|r| r.improvement_pct)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Seed of one `(trial, sample size)` job.
pub fn job_seed(seed: u64, trial: usize, size_index: usize) -> u64 {
    let mut z = seed ^ ((trial as u64) << 32 | size_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples a simulator for every trial and sample size, runs each method and
/// records its improvement over the baseline on the true model as a percentage of
/// the optimal improvement.
pub fn run_experiment(cfg: &BenchmarkConfig) -> Result<ExperimentResult> {
    let (true_mdp, baseline) = make_grid_benchmark(cfg)?;
    let optimal = optimal_return(&true_mdp)?;
    let rho_b = return_of(&true_mdp, &baseline)?;
    let span = (optimal - rho_b).abs();
    let degenerate = span <= 1e-12 * true_mdp.value_scale();
    let pct = |rho: f64| if degenerate { 0.0 } else { 100.0 * (rho - rho_b) / span };

    let jobs: Vec<(usize, usize)> =
        (0..cfg.n_trials).flat_map(|t| (0..cfg.sample_sizes.len()).map(move |k| (t, k))).collect();
    let outcomes: Vec<Result<(Vec<ResultRow>, TrialMembership)>> = jobs
        .par_iter()
        .map(|&(trial, k)| {
            let size = cfg.sample_sizes[k];
            let seed = job_seed(cfg.seed, trial, k);
            let counts = sample_model(&true_mdp, size, cfg.behavior, &baseline, seed)?;
            let e = error_from_counts(&counts, cfg.delta)?;
            let sim = true_mdp.with_transition(counts.empirical_transition())?;
            let set = UncertaintySet::new(sim.clone(), e.clone())?;
            let in_set = set.contains(true_mdp.transition());
            let (exp, _) = solve_optimal_exact(&sim)?;
            let rwa = solve_ramdp(&sim, &e, &baseline, rho_b)?;
            let rob = solve_rmdp_safe(&set, &baseline, rho_b)?;
            let rbc = solve_rbc(&set, &baseline, &RbcOptions { seed, ..RbcOptions::default() })?;
            let returns = [
                return_of(&true_mdp, &exp)?,
                rwa.true_return(&sim, true_mdp.transition())?,
                rob.true_return(&sim, true_mdp.transition())?,
                rbc.true_return(&sim, true_mdp.transition())?,
            ];
            let rows = BenchMethod::ALL
                .iter()
                .zip(returns)
                .map(|(&method, rho)| ResultRow { method, sample_size: size, trial, improvement_pct: pct(rho) })
                .collect();
            Ok((rows, TrialMembership { sample_size: size, trial, true_model_in_set: in_set }))
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len() * 4);
    let mut membership = Vec::with_capacity(jobs.len());
    for outcome in outcomes {
        let (r, mem) = outcome?;
        rows.extend(r);
        membership.push(mem);
    }
    rows.sort_by(|a, b| (a.method, a.sample_size, a.trial).cmp(&(b.method, b.sample_size, b.trial)));
    membership.sort_by_key(|m| (m.sample_size, m.trial));
    Ok(ExperimentResult {
        config: cfg.clone(),
        rows,
        membership,
        optimal_reference_pct: if degenerate { 0.0 } else { 100.0 },
        optimal_return: optimal,
        baseline_return: rho_b,
    })
}
