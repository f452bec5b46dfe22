//! Safe policy improvement for tabular discounted MDPs.
//!
//! A simulator `M̂` is known together with per-(state, action) L1 error
//! budgets `e(x,a)` that bound how far its transition rows may be from the
//! true ones. The solvers in [`safe`] return a policy that is guaranteed to
//! perform at least as well as a baseline on every model in the resulting
//! uncertainty set, or fall back to the baseline.
//!
//! ```
//! use safe_mdp::mdp::{Mdp, Policy, return_of, solve_optimal};
//!
//! let mdp = Mdp::from_nested(
//!     vec![vec![0.0, 0.9], vec![1.0, 1.0]],
//!     vec![
//!         vec![vec![0.0, 1.0], vec![1.0, 0.0]],
//!         vec![vec![0.0, 1.0], vec![0.0, 1.0]],
//!     ],
//!     vec![1.0, 0.0],
//!     0.5,
//!     1.0,
//! )
//! .unwrap();
//! let (policy, _) = solve_optimal(&mdp);
//! assert_eq!(policy.actions().unwrap(), &[1, 0]);
//! assert!((return_of(&mdp, &policy).unwrap() - 1.8).abs() < 1e-9);
//! ```

pub mod augmented;
pub mod benchmark;
pub mod bounds;
pub mod document;
mod error;
mod linalg;
pub mod mdp;
pub mod oracle;
pub mod robust;
pub mod safe;
pub mod uncertainty;

pub use error::{Error, Result};
