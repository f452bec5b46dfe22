//! Robust baseline regret: maximize a certified lower bound on
//! `min_{P ∈ U} ρ(π, P) − ρ(π_B, P)`.
//!
//! The bound runs the candidate and the baseline as a coupled pair chain under the
//! same adversarial dynamics. On the diagonal both chains share a state and, when
//! they also share an action, they share the next state too. Off the diagonal the
//! two rows are chosen independently, with the baseline row allowed to depend on the
//! candidate's next state, which only weakens the adversary's constraints.

use std::borrow::Cow;
use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{dot, induce, return_of, solve_optimal, Policy, TransitionFunction};
use crate::robust::{backup, evaluate_extreme, fixed_point, robust_value_iteration, RobustModel, Sense, DEFAULT_TOLERANCE};
use crate::uncertainty::{l1_distance, ResponseOrder, UncertaintySet, MEMBERSHIP_TOLERANCE};

use super::{check_baseline, Diagnostics, Method, SafePolicy, SafePolicyResult};

/// Search options for [`solve_rbc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbcOptions {
    /// Starting models for the policy/model alternation.
    pub restarts: usize,
    /// Alternation rounds per restart.
    pub rounds: usize,
    /// Accept on the certified bound (true) or on the local-search estimate (false).
    pub certified: bool,
    pub seed: u64,
    pub tol: f64,
    /// Policy-improvement passes applied to each candidate.
    pub improvement_passes: usize,
}

impl Default for RbcOptions {
    fn default() -> Self {
        Self { restarts: 5, rounds: 20, certified: true, seed: 0, tol: DEFAULT_TOLERANCE, improvement_passes: 10 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Coupling {
    action: usize,
    baseline_action: usize,
    weight: f64,
    synchronous: bool,
}

/// Pair chain over `(x, z)`: `x` follows the candidate, `z` the baseline.
struct PairChain<'a> {
    set: &'a UncertaintySet,
    couplings: Vec<Vec<Coupling>>,
    rewards: Vec<f64>,
    initial: Vec<f64>,
    /// `(z, b)` rows the baseline side may use off the diagonal.
    split_rows: Vec<bool>,
}

/// Per-sweep quantities derived from the current pair values.
struct SweepData {
    diagonal: Vec<f64>,
    diagonal_order: ResponseOrder,
    /// Per `(z, b)`: `h(x') = min_q Σ_z' q(z') W(x', z')` and its order.
    inner: Vec<Option<(Vec<f64>, ResponseOrder)>>,
}

impl<'a> PairChain<'a> {
    fn new(set: &'a UncertaintySet, pi: &Policy, baseline: &Policy) -> Self {
        let sim = set.nominal();
        let (n, m) = (sim.n_states(), sim.n_actions());
        let mut couplings = Vec::with_capacity(n * n);
        let mut rewards = Vec::with_capacity(n * n);
        let mut split_rows = vec![false; n * m];
        for x in 0..n {
            for z in 0..n {
                let mut list = Vec::new();
                if x == z {
                    let shared: Vec<f64> = (0..m).map(|a| pi.prob(x, a).min(baseline.prob(x, a))).collect();
                    let rest = 1.0 - shared.iter().sum::<f64>();
                    for (a, &w) in shared.iter().enumerate() {
                        if w > 0.0 {
                            list.push(Coupling { action: a, baseline_action: a, weight: w, synchronous: true });
                        }
                    }
                    if rest > 1e-15 {
                        for a in 0..m {
                            let ra = pi.prob(x, a) - shared[a];
                            for b in 0..m {
                                let rb = baseline.prob(x, b) - shared[b];
                                if ra > 0.0 && rb > 0.0 {
                                    list.push(Coupling {
                                        action: a,
                                        baseline_action: b,
                                        weight: ra * rb / rest,
                                        synchronous: false,
                                    });
                                }
                            }
                        }
                    }
                } else {
                    for a in 0..m {
                        for b in 0..m {
                            let w = pi.prob(x, a) * baseline.prob(z, b);
                            if w > 0.0 {
                                list.push(Coupling { action: a, baseline_action: b, weight: w, synchronous: false });
                            }
                        }
                    }
                }
                for c in list.iter().filter(|c| !c.synchronous) {
                    split_rows[z * m + c.baseline_action] = true;
                }
                rewards.push(list.iter().map(|c| c.weight * (sim.reward(x, c.action) - sim.reward(z, c.baseline_action))).sum());
                couplings.push(list);
            }
        }
        let mut initial = vec![0.0; n * n];
        for (x, p) in sim.initial().iter().enumerate() {
            initial[x * n + x] = *p;
        }
        Self { set, couplings, rewards, initial, split_rows }
    }

    fn n_base(&self) -> usize {
        self.set.n_states()
    }

    fn sweep_data(&self, w: &[f64], extra_rows: &[(usize, usize)]) -> SweepData {
        let sim = self.set.nominal();
        let (n, m) = (sim.n_states(), sim.n_actions());
        let diagonal: Vec<f64> = (0..n).map(|x| w[x * n + x]).collect();
        let diagonal_order = ResponseOrder::new(&diagonal, Sense::Worst);
        let row_orders: Vec<ResponseOrder> =
            (0..n).map(|xp| ResponseOrder::new(&w[xp * n..(xp + 1) * n], Sense::Worst)).collect();
        let mut inner: Vec<Option<(Vec<f64>, ResponseOrder)>> = (0..n * m).map(|_| None).collect();
        let needed = (0..n * m).filter(|k| self.split_rows[*k]).chain(extra_rows.iter().map(|(z, b)| z * m + b));
        for k in needed {
            if inner[k].is_some() {
                continue;
            }
            let (z, b) = (k / m, k % m);
            let row = sim.transition().row(z, b);
            let e = self.set.error().get(z, b);
            let h: Vec<f64> =
                (0..n).map(|xp| row_orders[xp].value(row, e, &w[xp * n..(xp + 1) * n])).collect();
            let order = ResponseOrder::new(&h, Sense::Worst);
            inner[k] = Some((h, order));
        }
        SweepData { diagonal, diagonal_order, inner }
    }

    /// Worst expected next pair value for one coupled action choice at `(x, z)`.
    fn expectation_at(&self, data: &SweepData, x: usize, z: usize, c: &Coupling) -> f64 {
        let sim = self.set.nominal();
        let m = sim.n_actions();
        let row = sim.transition().row(x, c.action);
        let e = self.set.error().get(x, c.action);
        if c.synchronous {
            data.diagonal_order.value(row, e, &data.diagonal)
        } else {
            let (h, order) = data.inner[z * m + c.baseline_action].as_ref().expect("inner row prepared");
            order.value(row, e, h)
        }
    }
}

impl RobustModel for PairChain<'_> {
    fn n_states(&self) -> usize {
        self.n_base() * self.n_base()
    }

    fn n_actions(&self) -> usize {
        1
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
        2.0 * self.set.nominal().value_scale()
    }

    fn q_values(&self, v: &[f64], _sense: Sense, q: &mut [f64]) {
        let n = self.n_base();
        let gamma = self.discount();
        let data = self.sweep_data(v, &[]);
        for x in 0..n {
            for z in 0..n {
                let k = x * n + z;
                let future: f64 =
                    self.couplings[k].iter().map(|c| c.weight * self.expectation_at(&data, x, z, c)).sum();
                q[k] = self.rewards[k] + gamma * future;
            }
        }
    }

    fn response_kernel(&self, v: &[f64], _sense: Sense) -> Vec<f64> {
        let sim = self.set.nominal();
        let (n, m) = (sim.n_states(), sim.n_actions());
        let big = n * n;
        let data = self.sweep_data(v, &[]);
        let mut out = vec![0.0; big * big];
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for x in 0..n {
            for z in 0..n {
                let k = x * n + z;
                let row_out = &mut out[k * big..(k + 1) * big];
                for c in &self.couplings[k] {
                    let nominal = sim.transition().row(x, c.action);
                    let e = self.set.error().get(x, c.action);
                    if c.synchronous {
                        data.diagonal_order.row(nominal, e, &mut p);
                        for (xp, px) in p.iter().enumerate() {
                            row_out[xp * n + xp] += c.weight * px;
                        }
                    } else {
                        let (_, order) = data.inner[z * m + c.baseline_action].as_ref().expect("inner row prepared");
                        order.row(nominal, e, &mut p);
                        let zrow = sim.transition().row(z, c.baseline_action);
                        let ze = self.set.error().get(z, c.baseline_action);
                        for (xp, px) in p.iter().enumerate() {
                            if *px == 0.0 {
                                continue;
                            }
                            ResponseOrder::new(&v[xp * n..(xp + 1) * n], Sense::Worst).row(zrow, ze, &mut q);
                            for (zp, qz) in q.iter().enumerate() {
                                row_out[xp * n + zp] += c.weight * px * qz;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Certified lower bound on the worst-case improvement of a policy over the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementBound {
    /// Guaranteed lower bound.
    pub value: f64,
    /// Pair-chain value before the residual correction.
    pub estimate: f64,
    /// Sup-norm Bellman residual of the returned pair values.
    pub residual: f64,
}

struct PairSolution {
    bound: ImprovementBound,
    values: Vec<f64>,
}

fn solve_pair_chain(chain: &PairChain<'_>, tol: f64) -> PairSolution {
    let gamma = chain.discount();
    let fp = fixed_point(chain, Sense::Worst, None, tol, None);
    let next = backup(chain, &fp.values, Sense::Worst, None);
    let residual = next.iter().zip(&fp.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let estimate = dot(&chain.initial, &fp.values);
    PairSolution {
        bound: ImprovementBound { value: estimate - residual / (1.0 - gamma), estimate, residual },
        values: fp.values,
    }
}

/// Lower bound on `min_{P ∈ U} ρ(π, P) − ρ(π_B, P)` from the coupled pair chain.
pub fn certified_improvement(
    set: &UncertaintySet,
    pi: &Policy,
    baseline: &Policy,
    tol: f64,
) -> Result<ImprovementBound> {
    pi.check_shape(set.n_states(), set.n_actions())?;
    baseline.check_shape(set.n_states(), set.n_actions())?;
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be positive")));
    }
    Ok(solve_pair_chain(&PairChain::new(set, pi, baseline), tol).bound)
}

/// Greedy switch of each state's action against the pair values of the current
/// candidate, evaluated on the diagonal where the two chains meet.
fn improve_on_diagonal(set: &UncertaintySet, baseline: &Policy, current: &Policy, pair_values: &[f64]) -> Policy {
    let sim = set.nominal();
    let (n, m) = (sim.n_states(), sim.n_actions());
    let gamma = sim.discount();
    let chain = PairChain::new(set, current, baseline);
    let extra: Vec<(usize, usize)> =
        (0..n).flat_map(|x| (0..m).filter(move |b| baseline.prob(x, *b) > 0.0).map(move |b| (x, b))).collect();
    let data = chain.sweep_data(pair_values, &extra);
    let scale = sim.value_scale();
    let mut actions = Vec::with_capacity(n);
    for x in 0..n {
        let score = |a: usize| -> f64 {
            let mut total = 0.0;
            for b in 0..m {
                let w = baseline.prob(x, b);
                if w == 0.0 {
                    continue;
                }
                let c = Coupling { action: a, baseline_action: b, weight: w, synchronous: a == b };
                total += w * (sim.reward(x, a) - sim.reward(x, b) + gamma * chain.expectation_at(&data, x, x, &c));
            }
            total
        };
        let scores: Vec<f64> = (0..m).map(score).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let near = |a: usize| scores[a] >= best - 1e-12 * scale;
        let preferred = baseline.actions().map(|acts| acts[x]).filter(|a| near(*a));
        let kept = current.actions().map(|acts| acts[x]).filter(|a| near(*a));
        let chosen = preferred.or(kept).unwrap_or_else(|| (0..m).find(|a| near(*a)).unwrap_or(0));
        actions.push(chosen);
    }
    Policy::from_actions(m, actions)
}

/// State of one policy during the model local search: `(I − γPπ)⁻¹`, values and occupancy weights.
struct LinearState {
    inverse: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    reward: Vec<f64>,
}

impl LinearState {
    fn new(set: &UncertaintySet, transition: &TransitionFunction, pi: &Policy) -> Result<Self> {
        let sim = set.nominal();
        let (n, m) = (sim.n_states(), sim.n_actions());
        let chain = induce(transition.as_slice(), sim.rewards(), n, m, pi);
        let inverse = linalg::discounted_inverse(&chain.transition, n, sim.discount())?;
        let mut state = Self { inverse, values: vec![0.0; n], weights: vec![0.0; n], reward: chain.reward };
        state.refresh(sim.initial());
        Ok(state)
    }

    fn refresh(&mut self, initial: &[f64]) {
        let n = self.values.len();
        for i in 0..n {
            self.values[i] = dot(&self.inverse[i * n..(i + 1) * n], &self.reward);
        }
        for j in 0..n {
            self.weights[j] = (0..n).map(|i| initial[i] * self.inverse[i * n + j]).sum();
        }
    }

    fn value(&self, initial: &[f64]) -> f64 {
        dot(initial, &self.values)
    }

    /// Return after adding `delta` to row `x` of `Pπ` with weight `w = π(a|x)`.
    fn shifted_return(&self, initial: &[f64], gamma: f64, x: usize, w: f64, delta: &[f64]) -> f64 {
        if w == 0.0 {
            return self.value(initial);
        }
        let n = self.values.len();
        let col: f64 = (0..n).map(|j| delta[j] * self.inverse[j * n + x]).sum();
        let gain = gamma * w * self.weights[x] * dot(delta, &self.values);
        self.value(initial) + gain / (1.0 - gamma * w * col)
    }

    fn apply(&mut self, initial: &[f64], gamma: f64, x: usize, w: f64, delta: &[f64]) {
        if w == 0.0 {
            return;
        }
        let n = self.values.len();
        let col: Vec<f64> = (0..n).map(|i| self.inverse[i * n + x]).collect();
        let row: Vec<f64> =
            (0..n).map(|j| gamma * w * (0..n).map(|k| delta[k] * self.inverse[k * n + j]).sum::<f64>()).collect();
        let denom = 1.0 - gamma * w * dot(delta, &col);
        for i in 0..n {
            let ci = col[i] / denom;
            for j in 0..n {
                self.inverse[i * n + j] += ci * row[j];
            }
        }
        self.refresh(initial);
    }
}

/// Row-wise coordinate descent on `D(P) = ρ(π, P) − ρ(π_B, P)` over the set,
/// starting at `init`. Returns the final member and its exact `D`.
pub fn coupled_worstcase(
    set: &UncertaintySet,
    pi: &Policy,
    baseline: &Policy,
    init: &TransitionFunction,
) -> Result<(TransitionFunction, f64)> {
    pi.check_shape(set.n_states(), set.n_actions())?;
    baseline.check_shape(set.n_states(), set.n_actions())?;
    if !set.contains(init) {
        return Err(Error::Membership("initial model".into()));
    }
    let sim = set.nominal();
    let (n, m) = (sim.n_states(), sim.n_actions());
    let gamma = sim.discount();
    let initial = sim.initial();
    let mut model = init.clone();
    let mut candidate = vec![0.0; n];
    let mut delta = vec![0.0; n];
    for _sweep in 0..50 {
        let mut own = LinearState::new(set, &model, pi)?;
        let mut base = LinearState::new(set, &model, baseline)?;
        let mut improved = false;
        for x in 0..n {
            for a in 0..m {
                let (wp, wb) = (pi.prob(x, a), baseline.prob(x, a));
                let e = set.error().get(x, a);
                if (wp == 0.0 && wb == 0.0) || e == 0.0 {
                    continue;
                }
                let nominal = sim.transition().row(x, a);
                let current: Vec<f64> = model.row(x, a).to_vec();
                let d_now = own.value(initial) - base.value(initial);
                let gradient: Vec<f64> = (0..n)
                    .map(|j| gamma * (wp * own.weights[x] * own.values[j] - wb * base.weights[x] * base.values[j]))
                    .collect();
                let mut best: Option<(f64, Vec<f64>)> = None;
                let mut consider = |row: &[f64]| {
                    if l1_distance(row, nominal) > e + MEMBERSHIP_TOLERANCE {
                        return;
                    }
                    let delta: Vec<f64> = row.iter().zip(&current).map(|(r, c)| r - c).collect();
                    let d = own.shifted_return(initial, gamma, x, wp, &delta)
                        - base.shifted_return(initial, gamma, x, wb, &delta);
                    if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, row.to_vec()));
                    }
                };
                let order = ResponseOrder::new(&gradient, Sense::Worst);
                order.row(nominal, e, &mut candidate);
                consider(&candidate);
                for receiver in 0..n {
                    forced_receiver_row(nominal, e, &gradient, receiver, &mut candidate);
                    consider(&candidate);
                }
                consider(nominal);
                if let Some((d, row)) = best {
                    if d < d_now - 1e-9 {
                        for (dl, (r, c)) in delta.iter_mut().zip(row.iter().zip(&current)) {
                            *dl = r - c;
                        }
                        own.apply(initial, gamma, x, wp, &delta);
                        base.apply(initial, gamma, x, wb, &delta);
                        model.row_mut(x, a).copy_from_slice(&row);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    let candidate_model = sim.with_transition(model.clone())?;
    let d = return_of(&candidate_model, pi)? - return_of(&candidate_model, baseline)?;
    Ok((model, d))
}

/// Greedy extreme row with a fixed receiver: donors in descending `c`, ties by index.
fn forced_receiver_row(nominal: &[f64], budget: f64, c: &[f64], receiver: usize, out: &mut [f64]) {
    out.copy_from_slice(nominal);
    let eps = (budget.min(2.0) / 2.0).min(1.0 - nominal[receiver]).max(0.0);
    if eps == 0.0 {
        return;
    }
    let mut donors: Vec<usize> = (0..c.len()).filter(|&i| i != receiver).collect();
    donors.sort_by(|&i, &j| c[j].total_cmp(&c[i]).then(i.cmp(&j)));
    out[receiver] += eps;
    let mut remaining = eps;
    for j in donors {
        let take = out[j].min(remaining);
        out[j] -= take;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
}

/// Candidate policies from alternating optimal policies and adversarial models.
fn alternation_pool(set: &UncertaintySet, baseline: &Policy, opts: &RbcOptions) -> Result<(Vec<Policy>, usize)> {
    let sim = set.nominal();
    let (nominal_opt, _) = solve_optimal(sim);
    let mut inits = vec![sim.transition().clone()];
    if opts.restarts > 1 {
        inits.push(evaluate_extreme(set, &nominal_opt, Sense::Worst, opts.tol)?.1);
    }
    if opts.restarts > 2 {
        inits.push(evaluate_extreme(set, baseline, Sense::Worst, opts.tol)?.1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while inits.len() < opts.restarts {
        inits.push(set.sample_member(&mut rng));
    }
    let mut pool = Vec::new();
    let mut rounds = 0;
    for init in inits.into_iter().take(opts.restarts.max(1)) {
        let mut model = init;
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        for _ in 0..opts.rounds {
            rounds += 1;
            let (pi, _) = solve_optimal(&sim.with_transition(model.clone())?);
            let key = pi.actions().expect("optimal policies are deterministic").to_vec();
            if !seen.insert(key) {
                break;
            }
            let (next, _) = coupled_worstcase(set, &pi, baseline, &model)?;
            pool.push(pi);
            model = next;
        }
    }
    pool.push(nominal_opt);
    Ok((pool, rounds))
}

/// Policy maximizing a certified lower bound on worst-case improvement over the
/// baseline; falls back to the baseline unless the bound is positive.
pub fn solve_rbc(set: &UncertaintySet, baseline: &Policy, opts: &RbcOptions) -> Result<SafePolicyResult> {
    check_baseline(baseline, set.n_states(), set.n_actions(), None)?;
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {} must be positive", opts.tol)));
    }
    let (mut pool, rounds) = alternation_pool(set, baseline, opts)?;
    pool.push(robust_value_iteration(set, opts.tol)?.policy);

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    pool.retain(|pi| seen.insert(pi.actions().expect("deterministic candidate").to_vec()));

    let mut best_policy = baseline.clone();
    let mut best_value = 0.0;
    let mut evaluated = 0;
    if opts.certified {
        let mut scored: HashSet<Vec<usize>> = HashSet::new();
        for start in pool {
            let mut pi = start;
            let chain = PairChain::new(set, &pi, baseline);
            let mut sol = solve_pair_chain(&chain, opts.tol);
            evaluated += 1;
            scored.insert(pi.actions().unwrap_or_default().to_vec());
            for _ in 0..opts.improvement_passes {
                let next = improve_on_diagonal(set, baseline, &pi, &sol.values);
                let key = next.actions().unwrap_or_default().to_vec();
                if next == pi || !scored.insert(key) {
                    break;
                }
                let next_sol = solve_pair_chain(&PairChain::new(set, &next, baseline), opts.tol);
                evaluated += 1;
                if next_sol.bound.value <= sol.bound.value {
                    break;
                }
                pi = next;
                sol = next_sol;
            }
            if sol.bound.value > best_value && pi != *baseline {
                best_value = sol.bound.value;
                best_policy = pi;
            }
        }
    } else {
        for pi in pool {
            let (_, d) = coupled_worstcase(set, &pi, baseline, set.nominal().transition())?;
            evaluated += 1;
            if d > best_value && pi != *baseline {
                best_value = d;
                best_policy = pi;
            }
        }
    }
    let accepted = best_policy != *baseline;
    Ok(SafePolicyResult {
        policy: SafePolicy::Markov(best_policy),
        certified_value: best_value,
        accepted,
        method: Method::Rbc,
        diagnostics: Diagnostics {
            iterations: Some(rounds),
            candidates: Some(evaluated),
            certified: opts.certified,
            ..Default::default()
        },
    })
}
