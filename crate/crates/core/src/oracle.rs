//! Brute-force references for the fast solvers. Deliberately simple and slow; none of
//! them calls the code it is meant to check.

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, TransitionFunction};
use crate::uncertainty::{ErrorFunction, UncertaintySet, MAX_BUDGET};

/// Largest simplex grid enumerated by [`brute_force_worst_response`].
const GRID_LIMIT: u64 = 20_000_000;
/// Largest policy count enumerated by [`enumerate_optimal_policy`].
const POLICY_LIMIT: u64 = 1_000_000;
/// Largest candidate product searched by the robust and coupled oracles.
const PRODUCT_LIMIT: u64 = 5_000_000;

/// Dense Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numerical("singular system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

/// `p0ᵀ(I − γPπ)⁻¹rπ` with rows looked up through `row`.
fn return_with<'a>(mdp: &Mdp, pi: &Policy, row: impl Fn(usize, usize) -> &'a [f64]) -> Result<f64> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let mut a = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        a[s * n + s] = 1.0;
        for act in 0..m {
            let w = pi.prob(s, act);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, act);
            for (t, p) in row(s, act).iter().enumerate() {
                a[s * n + t] -= gamma * w * p;
            }
        }
    }
    let v = gauss_solve(a, r)?;
    Ok(mdp.initial().iter().zip(&v).map(|(p, x)| p * x).sum())
}

/// Return of `pi` in `mdp` by elimination.
pub fn reference_return(mdp: &Mdp, pi: &Policy) -> Result<f64> {
    check_policy(mdp, pi)?;
    return_with(mdp, pi, |s, a| mdp.transition().row(s, a))
}

fn check_policy(mdp: &Mdp, pi: &Policy) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension("policy does not match the model".into()));
    }
    Ok(())
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn row_value(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// For receiver `r`, moves `min(e/2, 1 − p̂_r)` mass onto `r`, draining donors in
/// the given order.
fn shifted_row(nominal: &[f64], budget: f64, receiver: usize, donors: &[usize]) -> Vec<f64> {
    let mut p = nominal.to_vec();
    let mut left = (budget.min(MAX_BUDGET) / 2.0).min(1.0 - p[receiver]).max(0.0);
    p[receiver] += left;
    for &d in donors {
        let take = p[d].min(left);
        p[d] -= take;
        left -= take;
    }
    p
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Every vertex of `{p ∈ Δ : ‖p − p̂‖₁ ≤ e}` (one per receiver and donor order,
/// deduplicated) together with `p̂`.
pub fn row_vertices(nominal: &[f64], budget: f64) -> Vec<Vec<f64>> {
    let d = nominal.len();
    let mut out = vec![nominal.to_vec()];
    for r in 0..d {
        let others: Vec<usize> = (0..d).filter(|&i| i != r).collect();
        for order in permutations(&others) {
            let p = shifted_row(nominal, budget, r, &order);
            if !out.iter().any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15)) {
                out.push(p);
            }
        }
    }
    out
}

/// Minimum of `pᵀv` over the budget ball around `nominal_row`, taken as the smaller
/// of a simplex grid search with spacing `grid_step` and a per-receiver greedy
/// enumeration.
pub fn brute_force_worst_response(nominal_row: &[f64], budget: f64, values: &[f64], grid_step: f64) -> Result<f64> {
    let d = nominal_row.len();
    if values.len() != d {
        return Err(Error::Dimension(format!("{} values for a row of length {d}", values.len())));
    }
    if d == 0 || d > 4 {
        return Err(Error::TooLarge(format!("grid search needs 1 to 4 coordinates, got {d}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::Parameter(format!("grid step {grid_step} is not in (0,1]")));
    }
    let k = (1.0 / grid_step).round() as u64;
    if binomial(k + d as u64 - 1, d as u64 - 1) > GRID_LIMIT {
        return Err(Error::TooLarge(format!("grid with step {grid_step} in {d} coordinates")));
    }
    let budget = budget.min(MAX_BUDGET);
    let mut best = row_value(nominal_row, values);

    let mut point = vec![0u64; d];
    let mut p = vec![0.0; d];
    grid_walk(&mut point, 0, k, &mut |pt| {
        for (x, &c) in p.iter_mut().zip(pt) {
            *x = c as f64 / k as f64;
        }
        let dist: f64 = p.iter().zip(nominal_row).map(|(a, b)| (a - b).abs()).sum();
        if dist <= budget + 1e-12 {
            best = best.min(row_value(&p, values));
        }
    });

    for r in 0..d {
        let mut donors: Vec<usize> = (0..d).filter(|&i| i != r).collect();
        donors.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
        best = best.min(row_value(&shifted_row(nominal_row, budget, r, &donors), values));
    }
    Ok(best)
}

fn grid_walk(point: &mut [u64], at: usize, left: u64, visit: &mut impl FnMut(&[u64])) {
    if at + 1 == point.len() {
        point[at] = left;
        visit(point);
        return;
    }
    for c in 0..=left {
        point[at] = c;
        grid_walk(point, at + 1, left - c, visit);
    }
}

/// Best deterministic policy by exhaustive enumeration; the first maximizer in
/// lexicographic order wins ties.
pub fn enumerate_optimal_policy(mdp: &Mdp) -> Result<(Policy, f64)> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let count = (m as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if count > POLICY_LIMIT {
        return Err(Error::TooLarge(format!("{m}^{n} deterministic policies")));
    }
    let mut actions = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let pi = Policy::deterministic(m, actions.clone())?;
        let rho = reference_return(mdp, &pi)?;
        if best.as_ref().is_none_or(|(_, b)| rho > *b) {
            best = Some((actions.clone(), rho));
        }
        if !advance(&mut actions, &vec![m; n]) {
            break;
        }
    }
    let (actions, rho) = best.expect("at least one policy");
    Ok((Policy::deterministic(m, actions)?, rho))
}

/// Mixed-radix increment; false after the last combination.
fn advance(digits: &mut [usize], radix: &[usize]) -> bool {
    for (d, &r) in digits.iter_mut().zip(radix).rev() {
        *d += 1;
        if *d < r {
            return true;
        }
        *d = 0;
    }
    false
}

/// Candidate rows for every pair some policy in `policies` can take.
fn candidate_rows(set: &UncertaintySet, policies: &[&Policy], limit: usize) -> Result<Vec<((usize, usize), Vec<Vec<f64>>)>> {
    let sim = set.nominal();
    let (n, m) = (sim.n_states(), sim.n_actions());
    for pi in policies {
        check_policy(sim, pi)?;
    }
    let mut out = Vec::new();
    let mut product: u64 = 1;
    for s in 0..n {
        for a in 0..m {
            if policies.iter().all(|pi| pi.prob(s, a) == 0.0) {
                continue;
            }
            let rows = row_vertices(sim.transition().row(s, a), set.error().get(s, a));
            if rows.len() > limit {
                return Err(Error::TooLarge(format!("{} candidate rows at ({s}, {a}), limit {limit}", rows.len())));
            }
            product = product.saturating_mul(rows.len() as u64);
            if product > PRODUCT_LIMIT {
                return Err(Error::TooLarge("candidate product exceeds the search limit".into()));
            }
            out.push(((s, a), rows));
        }
    }
    Ok(out)
}

/// Visits every transition function assembled from one candidate per active row.
fn for_each_model(
    set: &UncertaintySet,
    rows: &[((usize, usize), Vec<Vec<f64>>)],
    mut visit: impl FnMut(&TransitionFunction) -> Result<()>,
) -> Result<()> {
    let sim = set.nominal();
    let (n, m) = (sim.n_states(), sim.n_actions());
    let mut flat = sim.transition().as_slice().to_vec();
    let radix: Vec<usize> = rows.iter().map(|(_, c)| c.len()).collect();
    let mut pick = vec![0usize; rows.len()];
    loop {
        for (((s, a), cands), &i) in rows.iter().zip(&pick) {
            let k = (s * m + a) * n;
            flat[k..k + n].copy_from_slice(&cands[i]);
        }
        visit(&TransitionFunction::new(n, m, flat.clone())?)?;
        if !advance(&mut pick, &radix) {
            return Ok(());
        }
    }
}

/// Worst-case return of `pi` over the product of per-row vertex candidates.
/// `per_row_candidates` caps the vertex count of any single row.
pub fn brute_force_robust_return(set: &UncertaintySet, pi: &Policy, per_row_candidates: usize) -> Result<f64> {
    let rows = candidate_rows(set, &[pi], per_row_candidates)?;
    let sim = set.nominal();
    let mut best = f64::INFINITY;
    for_each_model(set, &rows, |t| {
        best = best.min(return_with(sim, pi, |s, a| t.row(s, a))?);
        Ok(())
    })?;
    Ok(best)
}

/// Minimum of `ρ(π,P) − ρ(πB,P)` over the product of per-row vertex candidates.
/// This is the exact minimum when it sits at row vertices and an upper bound on it
/// otherwise.
pub fn brute_force_coupled_min(set: &UncertaintySet, pi: &Policy, baseline: &Policy) -> Result<f64> {
    if set.n_states() > 3 || set.n_actions() > 2 {
        return Err(Error::TooLarge("coupled search supports at most 3 states and 2 actions".into()));
    }
    let rows = candidate_rows(set, &[pi, baseline], usize::MAX)?;
    let sim = set.nominal();
    let mut best = f64::INFINITY;
    for_each_model(set, &rows, |t| {
        let gap = return_with(sim, pi, |s, a| t.row(s, a))? - return_with(sim, baseline, |s, a| t.row(s, a))?;
        best = best.min(gap);
        Ok(())
    })?;
    Ok(best)
}

/// Lowest `pᵀv` over the budget ball by sorting: fill the cheapest state, drain the
/// dearest.
fn sorted_min(nominal: &[f64], budget: f64, v: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let cheapest = idx[0];
    let mut p = nominal.to_vec();
    let mut left = (budget.min(MAX_BUDGET) / 2.0).min(1.0 - p[cheapest]).max(0.0);
    p[cheapest] += left;
    for &j in idx.iter().rev() {
        if j == cheapest {
            continue;
        }
        let take = p[j].min(left);
        p[j] -= take;
        left -= take;
    }
    row_value(&p, v)
}

/// `max_a { r(x,a) − γRmax e(x,a)/(1−γ) + γ P̂(·|x,a)ᵀv }`.
pub fn reference_adjusted_bellman(mdp: &Mdp, e: &ErrorFunction, v: &[f64]) -> Vec<f64> {
    let gamma = mdp.discount();
    let penalty = gamma * mdp.r_max() / (1.0 - gamma);
    (0..mdp.n_states())
        .map(|x| {
            (0..mdp.n_actions())
                .map(|a| mdp.reward(x, a) - penalty * e.get(x, a) + gamma * row_value(mdp.transition().row(x, a), v))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `max_a { r(x,a) + γ min_{p ∈ U(x,a)} pᵀv }`.
pub fn reference_robust_bellman(set: &UncertaintySet, v: &[f64]) -> Vec<f64> {
    let sim = set.nominal();
    let gamma = sim.discount();
    (0..sim.n_states())
        .map(|x| {
            (0..sim.n_actions())
                .map(|a| sim.reward(x, a) + gamma * sorted_min(sim.transition().row(x, a), set.error().get(x, a), v))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Robust operator of the augmented model over pair states `(x, y)` indexed `x·n + y`:
/// the `x` row is adversarial, the `y` row follows the simulator.
pub fn reference_augmented_bellman(set: &UncertaintySet, lambda1: f64, lambda2: f64, v: &[f64]) -> Vec<f64> {
    let sim = set.nominal();
    let (n, m) = (sim.n_states(), sim.n_actions());
    let gamma = sim.discount();
    let mut out = Vec::with_capacity(n * n);
    for x in 0..n {
        for y in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..m {
                let py = sim.transition().row(y, a);
                let w: Vec<f64> =
                    (0..n).map(|xp| (0..n).map(|yp| py[yp] * v[xp * n + yp]).sum()).collect();
                let r = lambda1 * sim.reward(x, a) + lambda2 * sim.reward(y, a);
                best = best.max(r + gamma * sorted_min(sim.transition().row(x, a), set.error().get(x, a), &w));
            }
            out.push(best);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Mdp {
        Mdp::from_nested(
            vec![vec![0.0, 0.9], vec![1.0, 1.0]],
            vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            vec![1.0, 0.0],
            0.5,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn elimination_solves_small_system() {
        let x = gauss_solve(vec![0.0, 2.0, 1.0, 1.0], vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn enumeration_matches_geometric_series() {
        // a1 at s0 earns 0.9 and stays; s1 earns 1 forever after a0: 0 + 0.5·2 = 1 < 1.8.
        let (pi, rho) = enumerate_optimal_policy(&chain()).unwrap();
        assert_eq!(pi.actions().unwrap(), &[1, 0]);
        assert!((rho - 0.9 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_action_has_unique_policy() {
        let mdp = Mdp::from_nested(vec![vec![0.3]], vec![vec![vec![1.0]]], vec![1.0], 0.9, 1.0).unwrap();
        let (pi, rho) = enumerate_optimal_policy(&mdp).unwrap();
        assert_eq!(pi.actions().unwrap(), &[0]);
        assert!((rho - 3.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_guard() {
        let n = 21;
        let mdp = Mdp::new(vec![0.0; n * 2], TransitionFunction::uniform(n, 2), vec![1.0 / n as f64; n], 0.9, 1.0).unwrap();
        assert!(matches!(enumerate_optimal_policy(&mdp), Err(Error::TooLarge(_))));
    }

    #[test]
    fn worst_response_examples() {
        let v = [1.0, 0.0];
        assert!((brute_force_worst_response(&[0.5, 0.5], 0.4, &v, 1e-3).unwrap() - 0.3).abs() < 1e-12);
        assert!(brute_force_worst_response(&[0.5, 0.5], 2.5, &v, 1e-3).unwrap().abs() < 1e-12);
        assert!((brute_force_worst_response(&[0.2, 0.3, 0.5], 0.0, &[1.0, 2.0, 3.0], 1e-2).unwrap() - 2.3).abs() < 1e-12);
        let c = brute_force_worst_response(&[0.2, 0.3, 0.5], 1.0, &[4.0; 3], 1e-2).unwrap();
        assert!((c - 4.0).abs() < 1e-12);
    }

    #[test]
    fn worst_response_guards() {
        assert!(matches!(brute_force_worst_response(&[0.2; 5], 0.1, &[0.0; 5], 0.1), Err(Error::TooLarge(_))));
        assert!(matches!(brute_force_worst_response(&[0.25; 4], 0.1, &[0.0; 4], 1e-4), Err(Error::TooLarge(_))));
        assert!(brute_force_worst_response(&[0.5, 0.5], 0.1, &[0.0], 0.1).is_err());
    }

    #[test]
    fn vertices_stay_in_the_ball() {
        let nominal = [0.1, 0.6, 0.3];
        let verts = row_vertices(&nominal, 0.5);
        assert!(verts.len() <= 7);
        for p in &verts {
            let dist: f64 = p.iter().zip(&nominal).map(|(a, b)| (a - b).abs()).sum();
            assert!(dist <= 0.5 + 1e-12);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn zero_budget_robust_return_is_nominal() {
        let mdp = chain();
        let set = UncertaintySet::new(mdp.clone(), ErrorFunction::zeros(2, 2)).unwrap();
        let pi = Policy::deterministic(2, vec![0, 0]).unwrap();
        let rho = brute_force_robust_return(&set, &pi, 16).unwrap();
        assert!((rho - reference_return(&mdp, &pi).unwrap()).abs() < 1e-12);
        assert!(brute_force_coupled_min(&set, &pi, &pi).unwrap().abs() < 1e-12);
    }

    #[test]
    fn robust_return_shrinks_with_budget() {
        let mdp = chain();
        let pi = Policy::deterministic(2, vec![0, 0]).unwrap();
        let mut last = f64::INFINITY;
        for e in [0.0, 0.2, 0.6, 1.2, 2.0] {
            let set = UncertaintySet::new(mdp.clone(), ErrorFunction::constant(2, 2, e).unwrap()).unwrap();
            let rho = brute_force_robust_return(&set, &pi, 16).unwrap();
            assert!(rho <= last + 1e-12);
            last = rho;
        }
    }

    #[test]
    fn product_guard() {
        let mdp = chain();
        let set = UncertaintySet::new(mdp, ErrorFunction::constant(2, 2, 0.5).unwrap()).unwrap();
        let pi = Policy::deterministic(2, vec![0, 0]).unwrap();
        assert!(matches!(brute_force_robust_return(&set, &pi, 1), Err(Error::TooLarge(_))));
    }
}
