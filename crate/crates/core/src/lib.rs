//! Numerical laboratory for a robust multiclass admission and scheduling
//! problem in heavy traffic.
//!
//! A family of single-server systems indexed by n serves I customer classes
//! whose arrival and service rates are known only up to perturbations priced
//! by a discounted Kullback-Leibler penalty. At diffusion scale the workload
//! behaves like a one-dimensional reflected diffusion on [0, beta], and the
//! cheapest way to carry a workload level concentrates queue lengths on a
//! piecewise-linear curve. The crate builds every layer of that picture:
//!
//! - [`model`]: primitives, first-order scaling relations, and the n-th
//!   system's rates, capacities, and workload weights;
//! - [`reduction`]: the minimizing curve gamma and the induced workload
//!   holding cost;
//! - [`skorokhod`]: the two-sided reflection map on [0, beta];
//! - [`rsdg`]: the reduced one-dimensional game; a finite-difference solve
//!   of the penalized Hamilton-Jacobi-Bellman equation with a gradient
//!   constraint, the free boundary beta_eps, and a Monte-Carlo cross-check
//!   of the value;
//! - [`policy`]: the candidate admission and scheduling rule driven by the
//!   solved value function, plus reference policies;
//! - [`adversary`]: rate perturbations, including the equilibrium feedback
//!   perturbation built from V' and its truncated variants;
//! - [`simulator`]: an exact event-by-event simulation of the n-th system
//!   under any policy/adversary pair;
//! - [`metrics`]: pathwise discounted cost accounting, penalty identities,
//!   and the distance-to-curve diagnostic;
//! - [`harness`]: replication plans, the convergence, collapse, and
//!   ambiguity-sweep experiments, and reproducible CSV emission.

pub mod adversary;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod reduction;
pub mod rsdg;
pub mod simulator;
pub mod skorokhod;

#[cfg(test)]
pub(crate) mod testutil;
