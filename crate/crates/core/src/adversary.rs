//! Rate perturbations for the n-th system. An adversary chooses, at every
//! event epoch, arrival and service intensities
//!
//!   psi1_i = lambda_n_i + psi1_hat_i sqrt(lambda_i n),
//!   psi2_i = mu_n_i + psi2_hat_i sqrt(mu_i n),
//!
//! held constant until the next event, and pays for the drift it induces
//! through KL penalties (see the metrics module). The scaled perturbations
//! psi1_hat, psi2_hat are the natural coordinates: the null adversary has
//! both zero, the equilibrium adversary derives them from the slope of the
//! workload-game value function at the pre-event state, constant shifts fix
//! them, and the truncation wrapper zeroes any entry whose magnitude
//! exceeds a bound k.
//!
//! Sign convention of the equilibrium rule: arrivals are pushed up and
//! services down, both proportionally to V' evaluated at the limit-weight
//! workload of the pre-event state, so the induced workload drift matches
//! the one-dimensional game's equilibrium feedback.

use crate::error::{Error, Result};
use crate::model::{DerivedModel, ScaledModel};
use crate::rsdg::ValueFunction;
use std::sync::Arc;

/// Arrival and service intensities for one event interval, with their
/// scaled perturbations.
#[derive(Clone, Debug, Default)]
pub struct IntensityPair {
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub psi1_hat: Vec<f64>,
    pub psi2_hat: Vec<f64>,
}

impl IntensityPair {
    pub fn zeros(num_classes: usize) -> Self {
        IntensityPair {
            psi1: vec![0.0; num_classes],
            psi2: vec![0.0; num_classes],
            psi1_hat: vec![0.0; num_classes],
            psi2_hat: vec![0.0; num_classes],
        }
    }

    /// Recovers the scaled perturbations from the intensities; inverse of
    /// the intensity formulas above.
    pub fn hats_from_intensities(d: &DerivedModel, sc: &ScaledModel, psi1: &[f64], psi2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nf = sc.n as f64;
        let h1 = (0..psi1.len())
            .map(|i| (psi1[i] - sc.lambda_n[i]) / (d.params.lambda[i] * nf).sqrt())
            .collect();
        let h2 = (0..psi2.len())
            .map(|i| (psi2[i] - sc.mu_n[i]) / (d.params.mu[i] * nf).sqrt())
            .collect();
        (h1, h2)
    }
}

/// Weights splitting a workload perturbation between the arrival and
/// service sides of one class; the split is chosen so the two sides add
/// back to the class diffusion coefficient.
fn kappa_weights(d: &DerivedModel, i: usize) -> (f64, f64) {
    let k1 = d.params.kappa1[i];
    let k2 = d.params.kappa2[i];
    let s = k1 + k2;
    let w1 = k1 * std::f64::consts::SQRT_2 / s;
    let w2 = k2 * std::f64::consts::SQRT_2 / (s * d.rho[i].sqrt());
    (w1, w2)
}

/// Per-class feedback gain: the class share of the aggregate ambiguity,
/// with the n-dependent workload weights in the normalizer.
fn gain(d: &DerivedModel, sc: &ScaledModel, i: usize) -> f64 {
    let k = d.num_classes();
    let mut denom = 0.0;
    for j in (0..k).rev() {
        denom += (sc.theta_n[j] * d.sigma_hat[j]).powi(2) * d.eps_hat[j];
    }
    d.theta[i] * d.sigma_hat[i] * d.eps_hat[i] * d.sigma * d.sigma * d.epsilon / denom
}

/// Uniform bound on every scaled perturbation the equilibrium adversary can
/// emit at this n: the slope never exceeds r and the gains are fixed.
pub fn c0_bound(d: &DerivedModel, sc: &ScaledModel) -> f64 {
    let mut c0 = 0.0f64;
    for i in 0..d.num_classes() {
        let (w1, w2) = kappa_weights(d, i);
        c0 = c0.max(w1.max(w2) * gain(d, sc, i) * d.r);
    }
    c0
}

/// Workload of an integer state under the limit weights theta (the
/// argument of V' in the equilibrium rule; the policy cutoff uses the
/// n-dependent weights instead).
fn limit_workload(d: &DerivedModel, sc: &ScaledModel, x: &[u64]) -> f64 {
    let mut w = 0.0;
    for i in (0..x.len()).rev() {
        w += d.theta[i] * (x[i] as f64);
    }
    w * sc.inv_sqrt_n
}

/// A rate-perturbation strategy. Intensities depend only on the pre-event
/// state, so they are constant between events.
#[derive(Clone)]
pub enum Adversary {
    /// Reference measure: no perturbation.
    Null,
    /// Slope-driven perturbation from a solved workload game.
    Equilibrium { vf: Arc<ValueFunction> },
    /// Constant scaled perturbations.
    ConstantShift { c1: Vec<f64>, c2: Vec<f64> },
    /// Wraps another adversary, zeroing any scaled perturbation whose
    /// magnitude strictly exceeds k.
    Truncated { inner: Box<Adversary>, k: f64 },
}

impl std::fmt::Debug for Adversary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl Adversary {
    pub fn truncated(inner: Adversary, k: f64) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::Domain {
                what: "truncation bound",
                value: k,
                lo: 0.0,
                hi: f64::MAX,
            });
        }
        Ok(Adversary::Truncated {
            inner: Box::new(inner),
            k,
        })
    }

    /// Identifier used in result-file headers.
    pub fn label(&self) -> String {
        match self {
            Adversary::Null => "null".into(),
            Adversary::Equilibrium { .. } => "equilibrium".into(),
            Adversary::ConstantShift { c1, c2 } => {
                let fmt = |v: &[f64]| {
                    v.iter()
                        .map(|x| format!("{x}"))
                        .collect::<Vec<_>>()
                        .join(",")
                };
                format!("shift:c1={};c2={}", fmt(c1), fmt(c2))
            }
            Adversary::Truncated { inner, k } => format!("truncate(k={k}):{}", inner.label()),
        }
    }

    /// Intensities for the pre-event state `x`, written into `out`.
    pub fn intensities_into(
        &self,
        d: &DerivedModel,
        sc: &ScaledModel,
        x: &[u64],
        out: &mut IntensityPair,
    ) -> Result<()> {
        let k = d.num_classes();
        debug_assert_eq!(x.len(), k);
        match self {
            Adversary::Null => {
                for i in 0..k {
                    out.psi1_hat[i] = 0.0;
                    out.psi2_hat[i] = 0.0;
                }
            }
            Adversary::Equilibrium { vf } => {
                let slope = vf.slope_at(limit_workload(d, sc, x));
                for i in 0..k {
                    let (w1, w2) = kappa_weights(d, i);
                    let base = gain(d, sc, i) * slope;
                    out.psi1_hat[i] = w1 * base;
                    out.psi2_hat[i] = -w2 * base;
                }
            }
            Adversary::ConstantShift { c1, c2 } => {
                out.psi1_hat.copy_from_slice(c1);
                out.psi2_hat.copy_from_slice(c2);
            }
            Adversary::Truncated { inner, k: bound } => {
                inner.intensities_into(d, sc, x, out)?;
                for i in 0..k {
                    if out.psi1_hat[i].abs() > *bound {
                        out.psi1_hat[i] = 0.0;
                    }
                    if out.psi2_hat[i].abs() > *bound {
                        out.psi2_hat[i] = 0.0;
                    }
                }
            }
        }
        let nf = sc.n as f64;
        for i in 0..k {
            let p1 = sc.lambda_n[i] + out.psi1_hat[i] * (d.params.lambda[i] * nf).sqrt();
            let p2 = sc.mu_n[i] + out.psi2_hat[i] * (d.params.mu[i] * nf).sqrt();
            if !p1.is_finite() {
                return Err(Error::NonFiniteIntensity { class: i, value: p1 });
            }
            if !p2.is_finite() {
                return Err(Error::NonFiniteIntensity { class: i, value: p2 });
            }
            if p1 <= 0.0 || p2 <= 0.0 {
                return Err(Error::IntensityNonpositive {
                    class: i,
                    n: sc.n,
                    min_n: self.min_admissible_n(d).unwrap_or(0),
                });
            }
            out.psi1[i] = p1;
            out.psi2[i] = p2;
        }
        Ok(())
    }

    /// Convenience wrapper allocating a fresh pair.
    pub fn intensities(
        &self,
        d: &DerivedModel,
        sc: &ScaledModel,
        x: &[u64],
    ) -> Result<IntensityPair> {
        let mut out = IntensityPair::zeros(d.num_classes());
        self.intensities_into(d, sc, x, &mut out)?;
        Ok(out)
    }

    /// Largest scaled perturbation each side can emit at this n, used for
    /// discount-tail bounds.
    pub fn hat_upper_bounds(&self, d: &DerivedModel, sc: &ScaledModel) -> (Vec<f64>, Vec<f64>) {
        let k = d.num_classes();
        match self {
            Adversary::Null => (vec![0.0; k], vec![0.0; k]),
            Adversary::Equilibrium { .. } => {
                let mut hi1 = Vec::with_capacity(k);
                for i in 0..k {
                    let (w1, _w2) = kappa_weights(d, i);
                    hi1.push(w1 * gain(d, sc, i) * d.r);
                }
                (hi1, vec![0.0; k])
            }
            Adversary::ConstantShift { c1, c2 } => (c1.clone(), c2.clone()),
            Adversary::Truncated { inner, k: bound } => {
                let (hi1, hi2) = inner.hat_upper_bounds(d, sc);
                let trunc = |v: f64| match inner.as_ref() {
                    Adversary::ConstantShift { .. } => {
                        if v.abs() > *bound {
                            0.0
                        } else {
                            v
                        }
                    }
                    _ => v.min(*bound),
                };
                (
                    hi1.into_iter().map(trunc).collect(),
                    hi2.into_iter().map(trunc).collect(),
                )
            }
        }
    }

    /// Most negative scaled perturbation each side can emit at this n, used
    /// for worst-case positivity checks.
    pub fn hat_lower_bounds(&self, d: &DerivedModel, sc: &ScaledModel) -> (Vec<f64>, Vec<f64>) {
        let k = d.num_classes();
        match self {
            Adversary::Null => (vec![0.0; k], vec![0.0; k]),
            Adversary::Equilibrium { .. } => {
                let mut lo2 = Vec::with_capacity(k);
                for i in 0..k {
                    let (_w1, w2) = kappa_weights(d, i);
                    lo2.push(-w2 * gain(d, sc, i) * d.r);
                }
                (vec![0.0; k], lo2)
            }
            Adversary::ConstantShift { c1, c2 } => (c1.clone(), c2.clone()),
            Adversary::Truncated { inner, k: bound } => {
                let (lo1, lo2) = inner.hat_lower_bounds(d, sc);
                let trunc = |v: f64| match inner.as_ref() {
                    // Point perturbations are zeroed outright when outside
                    // the band; continuous ranges keep everything up to it.
                    Adversary::ConstantShift { .. } => {
                        if v.abs() > *bound {
                            0.0
                        } else {
                            v
                        }
                    }
                    _ => v.max(-bound),
                };
                (
                    lo1.into_iter().map(trunc).collect(),
                    lo2.into_iter().map(trunc).collect(),
                )
            }
        }
    }

    /// Worst-case positivity of the intensities over all states.
    pub fn validate(&self, d: &DerivedModel, sc: &ScaledModel) -> Result<()> {
        let (lo1, lo2) = self.hat_lower_bounds(d, sc);
        let nf = sc.n as f64;
        for i in 0..d.num_classes() {
            let p1 = sc.lambda_n[i] + lo1[i] * (d.params.lambda[i] * nf).sqrt();
            let p2 = sc.mu_n[i] + lo2[i] * (d.params.mu[i] * nf).sqrt();
            if p1 <= 0.0 || p2 <= 0.0 {
                return Err(Error::IntensityNonpositive {
                    class: i,
                    n: sc.n,
                    min_n: self.min_admissible_n(d).unwrap_or(0),
                });
            }
        }
        Ok(())
    }

    /// Smallest n at which the worst-case intensities are positive.
    pub fn min_admissible_n(&self, d: &DerivedModel) -> Option<u64> {
        let ok = |n: u64| -> bool {
            match d.scale(n) {
                Ok(sc) => {
                    let (lo1, lo2) = self.hat_lower_bounds(d, &sc);
                    let nf = n as f64;
                    (0..d.num_classes()).all(|i| {
                        sc.lambda_n[i] + lo1[i] * (d.params.lambda[i] * nf).sqrt() > 0.0
                            && sc.mu_n[i] + lo2[i] * (d.params.mu[i] * nf).sqrt() > 0.0
                    })
                }
                Err(_) => false,
            }
        };
        // Positivity is monotone in n once the base rates dominate; find an
        // upper bracket by doubling, then bisect.
        let mut hi = 1u64;
        while !ok(hi) {
            hi = hi.checked_mul(2)?;
            if hi > 1 << 42 {
                return None;
            }
        }
        let mut lo = hi / 2;
        // Invariant: ok(hi), and lo is 0 or !ok(lo).
        while hi - lo > 1 && lo > 0 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DerivedModel;
    use crate::rsdg::solve_value;
    use crate::testutil::three_class;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn setup() -> &'static (DerivedModel, Arc<ValueFunction>) {
        static CELL: OnceLock<(DerivedModel, Arc<ValueFunction>)> = OnceLock::new();
        CELL.get_or_init(|| {
            let d = DerivedModel::derive(three_class()).unwrap();
            let vf = Arc::new(solve_value(&d, d.epsilon, 1001).unwrap());
            (d, vf)
        })
    }

    #[test]
    fn null_adversary_reproduces_reference_rates() {
        let (d, _) = setup();
        let sc = d.scale(100).unwrap();
        let p = Adversary::Null.intensities(d, &sc, &[3, 1, 4]).unwrap();
        assert_eq!(p.psi1, sc.lambda_n);
        assert_eq!(p.psi2, sc.mu_n);
        assert!(p.psi1_hat.iter().all(|&h| h == 0.0));
        assert!(p.psi2_hat.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn equilibrium_is_null_at_the_empty_state_and_signed_elsewhere() {
        let (d, vf) = setup();
        let sc = d.scale(400).unwrap();
        let adv = Adversary::Equilibrium { vf: vf.clone() };
        let at_zero = adv.intensities(d, &sc, &[0, 0, 0]).unwrap();
        assert_eq!(at_zero.psi1, sc.lambda_n);
        assert_eq!(at_zero.psi2, sc.mu_n);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x = [
                rng.gen_range(0..=sc.capacity[0]),
                rng.gen_range(0..=sc.capacity[1]),
                rng.gen_range(0..=sc.capacity[2]),
            ];
            let p = adv.intensities(d, &sc, &x).unwrap();
            let c0 = c0_bound(d, &sc);
            for i in 0..3 {
                assert!(p.psi1_hat[i] >= 0.0, "arrival hat negative at {x:?}");
                assert!(p.psi2_hat[i] <= 0.0, "service hat positive at {x:?}");
                assert!(p.psi1_hat[i].abs() <= c0 + 1e-12);
                assert!(p.psi2_hat[i].abs() <= c0 + 1e-12);
                assert!(p.psi1[i] > 0.0 && p.psi2[i] > 0.0);
            }
        }
    }

    #[test]
    fn equilibrium_drift_matches_workload_feedback() {
        // The per-class perturbations must aggregate to the scalar game
        // feedback: sum_i theta_i sigma_hat_i (gain_i V') = sigma * eps
        // sigma V' up to the n-dependence of the normalizer.
        let (d, vf) = setup();
        let sc = d.scale(160_000).unwrap();
        let adv = Adversary::Equilibrium { vf: vf.clone() };
        let x = [900u64, 1500, 1300];
        let p = adv.intensities(d, &sc, &x).unwrap();
        let slope = vf.slope_at(limit_workload(d, &sc, &x));
        let mut drift = 0.0;
        for i in 0..3 {
            // Arrival push plus service slowdown. The service side only
            // acts while the class is in service, a rho_i fraction of time
            // at criticality, and sqrt(mu) * rho = sqrt(lambda * rho), so
            // both sides aggregate through sigma_hat_i = sqrt(2 lambda_i).
            let per_class = p.psi1_hat[i] * d.params.lambda[i].sqrt()
                - p.psi2_hat[i] * d.params.mu[i].sqrt() * d.rho[i];
            drift += d.theta[i] * per_class;
        }
        let expect = d.epsilon * d.sigma * d.sigma * slope;
        assert!(
            (drift - expect).abs() <= 1e-3 * expect.abs().max(1e-12),
            "drift {drift} vs {expect}"
        );
    }

    #[test]
    fn hats_round_trip_through_intensities() {
        let (d, vf) = setup();
        let sc = d.scale(400).unwrap();
        for adv in [
            Adversary::Equilibrium { vf: vf.clone() },
            Adversary::ConstantShift {
                c1: vec![1.0, -0.5, 2.0],
                c2: vec![0.25, 0.0, -1.5],
            },
        ] {
            let p = adv.intensities(d, &sc, &[40, 70, 60]).unwrap();
            let (h1, h2) = IntensityPair::hats_from_intensities(d, &sc, &p.psi1, &p.psi2);
            for i in 0..3 {
                assert!((h1[i] - p.psi1_hat[i]).abs() <= 1e-12);
                assert!((h2[i] - p.psi2_hat[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_shift_matches_hand_computed_rate() {
        let (d, _) = setup();
        let sc = d.scale(400).unwrap();
        let adv = Adversary::ConstantShift {
            c1: vec![1.0, 1.0, 1.0],
            c2: vec![0.0, 0.0, 0.0],
        };
        let p = adv.intensities(d, &sc, &[1, 1, 1]).unwrap();
        for i in 0..3 {
            let expect = sc.lambda_n[i] + (d.params.lambda[i] * 400.0).sqrt();
            assert_eq!(p.psi1[i], expect);
            assert_eq!(p.psi2[i], sc.mu_n[i]);
        }
    }

    #[test]
    fn truncation_zeroes_rather_than_clips() {
        let (d, vf) = setup();
        let sc = d.scale(400).unwrap();
        let shift = Adversary::ConstantShift {
            c1: vec![4.0, 4.0, 4.0],
            c2: vec![-4.0, -4.0, -4.0],
        };
        let cut = Adversary::truncated(shift.clone(), 2.0).unwrap();
        let p = cut.intensities(d, &sc, &[1, 1, 1]).unwrap();
        assert_eq!(p.psi1, sc.lambda_n);
        assert_eq!(p.psi2, sc.mu_n);

        // A bound at least the uniform constant never binds: bit-identical.
        let eq = Adversary::Equilibrium { vf: vf.clone() };
        let k = c0_bound(d, &sc);
        let cut_eq = Adversary::truncated(eq.clone(), k).unwrap();
        let x = [80u64, 140, 120];
        let a = eq.intensities(d, &sc, &x).unwrap();
        let b = cut_eq.intensities(d, &sc, &x).unwrap();
        for i in 0..3 {
            assert_eq!(a.psi1[i].to_bits(), b.psi1[i].to_bits());
            assert_eq!(a.psi2[i].to_bits(), b.psi2[i].to_bits());
        }

        // Bound zero silences everything.
        let silent = Adversary::truncated(eq, 0.0).unwrap();
        let p = silent.intensities(d, &sc, &x).unwrap();
        assert_eq!(p.psi1, sc.lambda_n);
        assert_eq!(p.psi2, sc.mu_n);
    }

    #[test]
    fn nonpositive_intensities_report_minimum_n() {
        let (d, _) = setup();
        // A service slowdown of -3 on class 1 (mu = 3) kills the rate at
        // small n: mu n - 3 sqrt(3 n) > 0 iff n > 3.
        let adv = Adversary::ConstantShift {
            c1: vec![0.0, 0.0, 0.0],
            c2: vec![-3.0, 0.0, 0.0],
        };
        let sc2 = d.scale(2).unwrap();
        match adv.validate(d, &sc2) {
            Err(Error::IntensityNonpositive { class, n, min_n }) => {
                assert_eq!(class, 0);
                assert_eq!(n, 2);
                assert_eq!(min_n, 4);
                assert!(adv.validate(d, &d.scale(min_n).unwrap()).is_ok());
            }
            other => panic!("expected nonpositive intensity, got {other:?}"),
        }
        // Runtime evaluation trips the same error.
        assert!(matches!(
            adv.intensities(d, &sc2, &[1, 1, 1]),
            Err(Error::IntensityNonpositive { .. })
        ));
    }
}
