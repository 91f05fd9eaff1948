//! Service and admission policies for the n-th system.
//!
//! The candidate policy starves the class that is currently cheapest to
//! hold (the low-priority class), splits the server among the remaining
//! nonempty classes in proportion to their traffic intensities, and rejects
//! arrivals in exactly two cases: a full buffer (forced) and, for the class
//! that is cheapest to reject per unit of workload, a scaled workload at or
//! above the cutoff a (overload). Two baselines, admit-all and static
//! priority, share the same interface for comparison runs.
//!
//! Decision functions are stateless; they read the pre-event state and
//! immutable parameters, so they can be called from any thread.

use crate::error::{Error, Result};
use crate::model::{DerivedModel, ScaledModel};

/// Admission verdict for a pending arrival.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Admit,
    /// Buffer full: admitting would exceed the capacity.
    Forced,
    /// Workload at or above the cutoff and the arrival is of the rejection
    /// class.
    Overload,
}

impl Admission {
    pub fn is_reject(self) -> bool {
        !matches!(self, Admission::Admit)
    }
}

/// Parameters of the candidate policy, frozen at construction.
#[derive(Clone, Debug)]
pub struct CandidatePolicy {
    /// Per-class fill targets b_hat_i - delta0 on the diffusion scale.
    pub a_hat: Vec<f64>,
    /// Workload cutoff for overload rejections: min(beta_eps, theta . a_hat).
    pub a: f64,
    /// Barrier the cutoff was built from, echoed into result headers.
    pub beta_eps: f64,
    /// Class whose arrivals are rejected on overload.
    pub i_star: usize,
    /// Traffic intensities used for the proportional split.
    pub rho: Vec<f64>,
}

impl CandidatePolicy {
    pub fn new(d: &DerivedModel, beta_eps: f64) -> Result<Self> {
        if !(beta_eps > 0.0) || beta_eps > d.b + 1e-9 {
            return Err(Error::Domain {
                what: "beta_eps",
                value: beta_eps,
                lo: 0.0,
                hi: d.b,
            });
        }
        Ok(CandidatePolicy {
            a_hat: d.a_hat.clone(),
            a: beta_eps.min(d.a_upper),
            beta_eps,
            i_star: d.i_star,
            rho: d.rho.clone(),
        })
    }

    /// Index of the class currently given lowest priority: the largest i
    /// with x_hat_i strictly below its fill target, or the last class when
    /// every queue is at or above target.
    pub fn low_priority_class(&self, x_hat: &[f64]) -> usize {
        for i in (0..x_hat.len()).rev() {
            if x_hat[i] < self.a_hat[i] {
                return i;
            }
        }
        x_hat.len() - 1
    }

    /// Effort split for a diffusion-scaled state: zero at the empty state,
    /// otherwise intensity-proportional over the nonempty classes excluding
    /// the low-priority one, with the whole server on the last class when it
    /// is the only nonempty one.
    pub fn allocate_scaled(&self, x_hat: &[f64]) -> Vec<f64> {
        let k = x_hat.len();
        let mut u = vec![0.0; k];
        if x_hat.iter().all(|&v| v == 0.0) {
            return u;
        }
        let low = self.low_priority_class(x_hat);
        let denom: f64 = (0..k)
            .filter(|&i| i != low && x_hat[i] > 0.0)
            .map(|i| self.rho[i])
            .sum();
        if denom > 0.0 {
            for i in 0..k {
                if i != low && x_hat[i] > 0.0 {
                    u[i] = self.rho[i] / denom;
                }
            }
        } else {
            // Only the low-priority class is nonempty; it must be the last,
            // because the empty classes are all strictly below their targets.
            debug_assert_eq!(low, k - 1);
            debug_assert!(x_hat[k - 1] > 0.0);
            u[k - 1] = 1.0;
        }
        u
    }
}

/// A service and admission policy over integer queue states.
#[derive(Clone, Debug)]
pub enum Policy {
    Candidate(CandidatePolicy),
    /// Intensity-proportional service over all nonempty classes; rejects
    /// only on full buffers.
    AdmitAll,
    /// Full effort to the first nonempty class of `order` (internal
    /// indices); rejects only on full buffers.
    StaticPriority { order: Vec<usize> },
}

impl Policy {
    pub fn static_priority(order: Vec<usize>, num_classes: usize) -> Result<Self> {
        let mut seen = vec![false; num_classes];
        if order.len() != num_classes {
            return Err(Error::PolicyInfeasible {
                msg: format!(
                    "priority order has {} entries, expected {num_classes}",
                    order.len()
                ),
            });
        }
        for &i in &order {
            if i >= num_classes || seen[i] {
                return Err(Error::PolicyInfeasible {
                    msg: format!("priority order is not a permutation: {order:?}"),
                });
            }
            seen[i] = true;
        }
        Ok(Policy::StaticPriority { order })
    }

    /// Effort fractions for the pre-event state; entries are nonnegative,
    /// vanish on empty queues and sum to 1 whenever some queue is nonempty.
    pub fn allocate(&self, d: &DerivedModel, sc: &ScaledModel, x: &[u64]) -> Vec<f64> {
        match self {
            Policy::Candidate(c) => {
                let x_hat: Vec<f64> =
                    x.iter().map(|&q| q as f64 * sc.inv_sqrt_n).collect();
                c.allocate_scaled(&x_hat)
            }
            Policy::AdmitAll => {
                let mut u = vec![0.0; x.len()];
                let denom: f64 = (0..x.len())
                    .filter(|&i| x[i] > 0)
                    .map(|i| d.rho[i])
                    .sum();
                if denom > 0.0 {
                    for i in 0..x.len() {
                        if x[i] > 0 {
                            u[i] = d.rho[i] / denom;
                        }
                    }
                }
                u
            }
            Policy::StaticPriority { order } => {
                let mut u = vec![0.0; x.len()];
                if let Some(&i) = order.iter().find(|&&i| x[i] > 0) {
                    u[i] = 1.0;
                }
                u
            }
        }
    }

    /// Admission decision for an arrival of `class` against the pre-event
    /// state.
    pub fn admit(&self, sc: &ScaledModel, x: &[u64], class: usize) -> Admission {
        debug_assert!(x[class] <= sc.capacity[class]);
        if x[class] >= sc.capacity[class] {
            return Admission::Forced;
        }
        if let Policy::Candidate(c) = self {
            if class == c.i_star && sc.workload(x) >= c.a {
                return Admission::Overload;
            }
        }
        Admission::Admit
    }

    /// Identifier used in result-file headers.
    pub fn label(&self) -> String {
        match self {
            Policy::Candidate(_) => "candidate".into(),
            Policy::AdmitAll => "admit-all".into(),
            Policy::StaticPriority { order } => {
                let parts: Vec<String> = order.iter().map(|i| i.to_string()).collect();
                format!("static:{}", parts.join(","))
            }
        }
    }
}

/// Fails fast when an effort vector leaves the admissible set: negative
/// entries, effort on an empty queue, or total above 1.
pub fn check_allocation(x: &[u64], u: &[f64]) -> Result<()> {
    let mut total = 0.0;
    for i in 0..u.len() {
        if !(u[i] >= 0.0) {
            return Err(Error::PolicyInfeasible {
                msg: format!("effort {} on class {i} is negative", u[i]),
            });
        }
        if x[i] == 0 && u[i] != 0.0 {
            return Err(Error::PolicyInfeasible {
                msg: format!("effort {} on empty class {i}", u[i]),
            });
        }
        total += u[i];
    }
    if total > 1.0 + 1e-9 {
        return Err(Error::PolicyInfeasible {
            msg: format!("total effort {total} exceeds 1"),
        });
    }
    Ok(())
}
