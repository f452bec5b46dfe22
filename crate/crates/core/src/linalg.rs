//! Dense linear algebra on row-major `f64` buffers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest chain size solved with a dense factorization.
pub(crate) const DENSE_LIMIT: usize = 2000;

/// Builds `I - γ·P` for a row-major `n × n` kernel.
fn discounted_system(kernel: &[f64], n: usize, discount: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - discount * kernel[i * n + j]
    })
}

/// Solves `(I - γP) x = b`.
pub(crate) fn solve_discounted(kernel: &[f64], n: usize, discount: f64, b: &[f64]) -> Result<Vec<f64>> {
    let a = discounted_system(kernel, n, discount);
    let rhs = DVector::from_column_slice(b);
    a.lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Numerical("singular discounted system".into()))
}

/// Solves `(I - γP)ᵀ x = b`.
pub(crate) fn solve_discounted_transpose(
    kernel: &[f64],
    n: usize,
    discount: f64,
    b: &[f64],
) -> Result<Vec<f64>> {
    let a = discounted_system(kernel, n, discount).transpose();
    let rhs = DVector::from_column_slice(b);
    a.lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Numerical("singular discounted system".into()))
}

/// Row-major inverse of `I - γP`.
pub(crate) fn discounted_inverse(kernel: &[f64], n: usize, discount: f64) -> Result<Vec<f64>> {
    let inv = discounted_system(kernel, n, discount)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular discounted system".into()))?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    Ok(out)
}

/// Fixed point of `x = b + γPx` by successive approximation.
pub(crate) fn iterate_discounted(kernel: &[f64], n: usize, discount: f64, b: &[f64], tol: f64) -> Vec<f64> {
    let mut x = b.to_vec();
    let mut next = vec![0.0; n];
    loop {
        let mut diff: f64 = 0.0;
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            let s: f64 = row.iter().zip(&x).map(|(p, v)| p * v).sum();
            next[i] = b[i] + discount * s;
            diff = diff.max((next[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if diff * discount <= tol * (1.0 - discount) {
            return x;
        }
    }
}

/// Fixed point of `x = b + γPᵀx` by successive approximation.
pub(crate) fn iterate_discounted_transpose(
    kernel: &[f64],
    n: usize,
    discount: f64,
    b: &[f64],
    tol: f64,
) -> Vec<f64> {
    let mut x = b.to_vec();
    loop {
        let mut next = b.to_vec();
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            for (j, p) in row.iter().enumerate() {
                next[j] += discount * p * x[i];
            }
        }
        let diff = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if diff * discount <= tol * (1.0 - discount) {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_iterative_solutions_agree() {
        let kernel = vec![0.2, 0.8, 0.5, 0.5];
        let b = vec![1.0, -2.0];
        let direct = solve_discounted(&kernel, 2, 0.9, &b).unwrap();
        let iter = iterate_discounted(&kernel, 2, 0.9, &b, 1e-13);
        for (d, i) in direct.iter().zip(&iter) {
            assert!((d - i).abs() < 1e-10);
        }
        let direct_t = solve_discounted_transpose(&kernel, 2, 0.9, &b).unwrap();
        let iter_t = iterate_discounted_transpose(&kernel, 2, 0.9, &b, 1e-13);
        for (d, i) in direct_t.iter().zip(&iter_t) {
            assert!((d - i).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_times_system_is_identity() {
        let kernel = vec![0.1, 0.6, 0.3, 0.0, 1.0, 0.0, 0.5, 0.25, 0.25];
        let inv = discounted_inverse(&kernel, 3, 0.8).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    let a = if i == k { 1.0 } else { 0.0 } - 0.8 * kernel[i * 3 + k];
                    s += a * inv[k * 3 + j];
                }
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((s - id).abs() < 1e-12);
            }
        }
    }
}
