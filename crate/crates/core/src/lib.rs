//! Staged advantage estimation over prefix trees of teacher traces.
//!
//! The crate covers the whole pipeline on a synthetic staged-reasoning task:
//!
//! * [`trace_store`]: prefix tree with rollout statistics.
//! * [`constraints`]: ordering constraints between the samples of a group.
//! * [`baselines`]: prefix-value baselines and centered staged advantages.
//! * [`solver`]: projection, penalty and equality-norm advantage solvers.
//! * [`env`]: the token environment and the UCT teacher.
//! * [`trainer`]: tabular softmax policy and the policy-gradient loop.
//! * [`exact`]: enumeration oracles for small environments.
//! * [`cli`]: the `generate` / `train` / `verify` commands.

pub mod baselines;
pub mod cli;
pub mod constraints;
pub mod env;
pub mod exact;
pub mod solver;
pub mod trace_store;
pub mod trainer;
