//! Workload-scale reduction: the minimizing curve that maps a workload level
//! to the cheapest buffer configuration carrying it, the induced holding
//! cost, and the modulus measuring how much the margin delta0 costs.
//!
//! Classes are in internal order, so h_hat_i * mu_i is nonincreasing and the
//! last class is the cheapest to hold per unit of workload. The curve fills
//! buffers from the last class backwards: for workload x below theta . t
//! (t the per-class fill targets) exactly one class j is partially filled
//! and all classes after it are at their targets. Above theta . t the curve
//! interpolates linearly toward the full buffer vector b_hat at workload b.

use crate::error::{Error, Result};
use crate::model::DerivedModel;

/// Absolute slack accepted on domain checks, to tolerate roundoff in callers
/// that reconstruct workloads by summation.
const DOMAIN_SLACK: f64 = 1e-9;

/// A piecewise-linear fill curve. `gamma(x)` returns the buffer configuration
/// for workload x; each component is nondecreasing in x and
/// theta . gamma(x) = x.
#[derive(Clone, Debug)]
pub struct MinimizingCurve {
    /// Per-class fill levels the curve aims for (a_hat or b_hat).
    pub targets: Vec<f64>,
    theta: Vec<f64>,
    mu: Vec<f64>,
    b_hat: Vec<f64>,
    /// Workload contributed by each class at its target: theta_i * targets_i.
    weights: Vec<f64>,
    /// breakpoints[p] = workload once the last p classes are at their
    /// targets; ascending, breakpoints[0] = 0, breakpoints[I] = x_full.
    pub breakpoints: Vec<f64>,
    /// theta . targets, where the fill portion of the curve ends.
    pub x_full: f64,
    /// theta . b_hat, the right end of the domain.
    pub b: f64,
}

impl MinimizingCurve {
    pub fn new(d: &DerivedModel, targets: Vec<f64>) -> Self {
        let k = d.num_classes();
        assert_eq!(targets.len(), k);
        let weights: Vec<f64> = (0..k).map(|i| d.theta[i] * targets[i]).collect();
        // Accumulate from the last class to the first: the same fold as
        // model::weighted_total, so x_full == weighted_total bit for bit.
        let mut breakpoints = Vec::with_capacity(k + 1);
        breakpoints.push(0.0);
        let mut acc = 0.0;
        for i in (0..k).rev() {
            acc += weights[i];
            breakpoints.push(acc);
        }
        let x_full = *breakpoints.last().unwrap();
        MinimizingCurve {
            targets,
            theta: d.theta.clone(),
            mu: d.params.mu.clone(),
            b_hat: d.params.b_hat.clone(),
            weights,
            breakpoints,
            x_full,
            b: d.b,
        }
    }

    /// The curve with targets a_hat = b_hat - delta0.
    pub fn for_a(d: &DerivedModel) -> Self {
        let c = Self::new(d, d.a_hat.clone());
        debug_assert_eq!(c.x_full.to_bits(), d.a_upper.to_bits());
        c
    }

    /// The curve with targets b_hat; its fill portion covers all of [0, b].
    pub fn for_b(d: &DerivedModel) -> Self {
        let c = Self::new(d, d.params.b_hat.clone());
        debug_assert_eq!(c.x_full.to_bits(), d.b.to_bits());
        c
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if !x.is_finite() || x < -DOMAIN_SLACK || x > self.b + DOMAIN_SLACK {
            return Err(Error::Domain {
                what: "workload",
                value: x,
                lo: 0.0,
                hi: self.b,
            });
        }
        Ok(())
    }

    /// The partially filled class and its fill level for x in [0, x_full):
    /// class j holds upsilon in [0, targets_j) and every class after j is at
    /// its target. At a breakpoint the representation with upsilon = 0 is
    /// returned.
    pub fn fill_index(&self, x: f64) -> Result<(usize, f64)> {
        self.check_domain(x)?;
        if x >= self.x_full {
            return Err(Error::Domain {
                what: "fill workload",
                value: x,
                lo: 0.0,
                hi: self.x_full,
            });
        }
        let x = x.max(0.0);
        // p = number of fully filled classes counted from the back.
        let p = match self
            .breakpoints
            .binary_search_by(|bp| bp.partial_cmp(&x).unwrap())
        {
            Ok(exact) => exact,
            Err(ins) => ins - 1,
        };
        let k = self.theta.len();
        let j = k - 1 - p;
        // Multiply by mu_j rather than divide by theta_j = 1/mu_j: one
        // rounding instead of two, so exact whenever the product is.
        let upsilon = (x - self.breakpoints[p]) * self.mu[j];
        Ok((j, upsilon))
    }

    /// The buffer configuration carrying workload x.
    pub fn gamma(&self, x: f64) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let k = self.theta.len();
        let mut out = vec![0.0; k];
        if x >= self.x_full {
            // Linear interpolation from (x_full, targets) to (b, b_hat).
            let span = self.b - self.x_full;
            let s = if span > 0.0 {
                ((x - self.x_full) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            for i in 0..k {
                out[i] = self.targets[i] + s * (self.b_hat[i] - self.targets[i]);
            }
            return Ok(out);
        }
        let (j, upsilon) = self.fill_index(x)?;
        out[j] = upsilon.max(0.0);
        for i in j + 1..k {
            out[i] = self.targets[i];
        }
        Ok(out)
    }

    /// Per-class workload contributions theta_i * gamma_i(x), computed
    /// without divisions so that full classes contribute their precomputed
    /// weights exactly and the partial class contributes x minus the
    /// breakpoint below it.
    pub fn gamma_weighted(&self, x: f64) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let k = self.theta.len();
        let mut out = vec![0.0; k];
        if x >= self.x_full {
            let g = self.gamma(x)?;
            for i in 0..k {
                out[i] = self.theta[i] * g[i];
            }
            return Ok(out);
        }
        let (j, _) = self.fill_index(x)?;
        let p = k - 1 - j;
        out[j] = (x - self.breakpoints[p]).max(0.0);
        for i in j + 1..k {
            out[i] = self.weights[i];
        }
        Ok(out)
    }
}

/// The holding-cost rate at a given workload as a piecewise-linear function:
/// the cheapest cost h_hat . xi over configurations xi in the buffer box
/// with theta . xi = x. Evaluation is exact on the linear pieces, which
/// makes it cheap enough for simulation inner loops.
#[derive(Clone, Debug)]
pub struct HoldingCost {
    /// Segment ends: the fill-curve breakpoints of the b_hat curve.
    xs: Vec<f64>,
    /// Cost values at xs.
    ys: Vec<f64>,
    /// Cost slope on [xs[p], xs[p+1]]: h_hat_j * mu_j of the class filling
    /// there; ascending, so the cost is convex.
    slopes: Vec<f64>,
}

impl HoldingCost {
    pub fn new(d: &DerivedModel) -> Self {
        let curve = MinimizingCurve::for_b(d);
        Self::along(d, &curve)
    }

    /// Piecewise-linear cost h_hat . gamma(x) along an arbitrary fill curve,
    /// restricted to its fill portion [0, x_full].
    pub fn along(d: &DerivedModel, curve: &MinimizingCurve) -> Self {
        let k = d.num_classes();
        let mut xs = curve.breakpoints.clone();
        let mut ys = Vec::with_capacity(k + 1);
        let mut slopes = Vec::with_capacity(k);
        ys.push(0.0);
        let mut acc = 0.0;
        for p in 0..k {
            let j = k - 1 - p;
            slopes.push(d.params.h_hat[j] * d.params.mu[j]);
            acc += d.params.h_hat[j] * curve.targets[j];
            ys.push(acc);
        }
        // Drop zero-length segments created by zero targets.
        let mut i = 0;
        while i + 1 < xs.len() {
            if xs[i + 1] - xs[i] <= 0.0 {
                xs.remove(i + 1);
                ys.remove(i + 1);
                slopes.remove(i);
            } else {
                i += 1;
            }
        }
        HoldingCost { xs, ys, slopes }
    }

    pub fn domain_end(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let end = self.domain_end();
        if !x.is_finite() || x < -DOMAIN_SLACK || x > end + DOMAIN_SLACK {
            return Err(Error::Domain {
                what: "workload",
                value: x,
                lo: 0.0,
                hi: end,
            });
        }
        Ok(self.eval_clamped(x))
    }

    /// Evaluation with the argument clamped into the domain; used by hot
    /// loops that have already validated their state.
    #[inline]
    pub fn eval_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.domain_end());
        let p = match self.xs[..self.xs.len() - 1]
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(exact) => exact.min(self.slopes.len() - 1),
            Err(ins) => ins.saturating_sub(1),
        };
        self.ys[p] + (x - self.xs[p]) * self.slopes[p]
    }

    /// All segment ends, for exact suprema of piecewise-linear differences.
    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }
}

/// Cheapest holding-cost rate at workload x over the full buffer box.
pub fn holding_h(d: &DerivedModel, x: f64) -> Result<f64> {
    HoldingCost::new(d).eval(x)
}

/// Holding-cost rate along the margin curve: h_hat . gamma_a(x), defined on
/// [0, theta . a_hat].
pub fn h_a(curve: &MinimizingCurve, h_hat: &[f64], x: f64) -> Result<f64> {
    if !x.is_finite() || x < -DOMAIN_SLACK || x > curve.x_full + DOMAIN_SLACK {
        return Err(Error::Domain {
            what: "workload",
            value: x,
            lo: 0.0,
            hi: curve.x_full,
        });
    }
    let g = curve.gamma(x.clamp(0.0, curve.x_full))?;
    Ok(g.iter().zip(h_hat).map(|(gi, hi)| gi * hi).sum())
}

/// Largest gap between the margin-curve cost and the cheapest cost on
/// [0, theta . a_hat]. Both functions are piecewise linear, so the supremum
/// is attained at one of their breakpoints; a uniform grid of the given step
/// is scanned as well.
pub fn omega1(d: &DerivedModel, curve: &MinimizingCurve, grid_step: f64) -> f64 {
    assert!(grid_step > 0.0, "grid_step must be positive");
    let h = HoldingCost::new(d);
    let ha = HoldingCost::along(d, curve);
    let end = curve.x_full;
    let gap = |x: f64| (ha.eval_clamped(x) - h.eval_clamped(x)).abs();
    let mut sup: f64 = 0.0;
    for &x in ha.nodes().iter().chain(h.nodes()) {
        if x <= end {
            sup = sup.max(gap(x));
        }
    }
    let mut x = 0.0;
    while x < end {
        sup = sup.max(gap(x));
        x += grid_step;
    }
    sup.max(gap(end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DerivedModel;
    use crate::testutil::three_class;

    fn derived() -> DerivedModel {
        DerivedModel::derive(three_class()).unwrap()
    }

    #[test]
    fn anchor_point_is_exact() {
        let d = derived();
        let curve = MinimizingCurve::for_a(&d);
        // Workload 12 fills the two cheap classes and 3 customers of class 1.
        let g = curve.gamma(12.0).unwrap();
        assert_eq!(g, vec![3.0, 7.0, 6.0]);
        let w = curve.gamma_weighted(12.0).unwrap();
        assert_eq!(w, vec![1.0, 7.0, 4.0]);
    }

    #[test]
    fn fill_boundary_cases() {
        let d = derived();
        let curve = MinimizingCurve::for_a(&d);
        assert_eq!(curve.gamma(0.0).unwrap(), vec![0.0, 0.0, 0.0]);
        // Workload 4 exactly fills the last buffer to its target.
        assert_eq!(curve.gamma(4.0).unwrap(), vec![0.0, 0.0, 6.0]);
        let (j, upsilon) = curve.fill_index(4.0).unwrap();
        assert_eq!(j, 1);
        assert_eq!(upsilon, 0.0);
        // Interpolation end: full buffers at workload b.
        let g = curve.gamma(curve.b).unwrap();
        for (gi, bi) in g.iter().zip(&d.params.b_hat) {
            assert!((gi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn workload_identity_and_monotonicity() {
        let d = derived();
        let curve = MinimizingCurve::for_a(&d);
        let mut prev = vec![0.0; 3];
        let steps = 1000;
        for t in 0..=steps {
            let x = d.b * (t as f64) / (steps as f64);
            let g = curve.gamma(x).unwrap();
            let back: f64 = g.iter().zip(&d.theta).map(|(gi, th)| gi * th).sum();
            assert!((back - x).abs() <= 1e-10 * d.b.max(1.0), "x = {x}");
            for i in 0..3 {
                assert!(g[i] >= prev[i] - 1e-12);
                assert!(g[i] <= d.params.b_hat[i] + 1e-12);
                if x < curve.x_full {
                    assert!(g[i] <= d.a_hat[i] + 1e-12);
                }
            }
            prev = g;
        }
    }

    #[test]
    fn holding_cost_examples() {
        let d = derived();
        // Filling the cheapest class: slope h_hat_3 * mu_3 = 2.25.
        assert_eq!(holding_h(&d, 4.0).unwrap(), 9.0);
        assert_eq!(holding_h(&d, 0.0).unwrap(), 0.0);
        assert!(holding_h(&d, 1e-6).unwrap() > 0.0);
        assert!(holding_h(&d, d.b + 1.0).is_err());
        // Single class: h(x) = h_hat * mu * x.
        let p = crate::model::ModelParams {
            lambda: vec![1.0],
            mu: vec![2.0],
            lambda_hat: vec![0.0],
            mu_hat: vec![0.0],
            b_hat: vec![5.0],
            h_hat: vec![3.0],
            r_hat: vec![1.0],
            kappa1: vec![0.5],
            kappa2: vec![0.5],
            varrho: 1.0,
            delta0: 0.0,
        };
        let mut p = p;
        p.lambda = vec![2.0]; // restore critical load: lambda / mu = 1
        let d1 = DerivedModel::derive(p).unwrap();
        for x in [0.0, 0.3, 1.7, 2.5] {
            assert!((holding_h(&d1, x).unwrap() - 6.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn holding_cost_is_convex_and_increasing() {
        let d = derived();
        let h = HoldingCost::new(&d);
        let n = 400;
        let dx = d.b / (n as f64);
        let mut prev = 0.0;
        let mut prev_diff = 0.0;
        for t in 1..=n {
            let x = dx * t as f64;
            let y = h.eval(x).unwrap();
            let diff = y - prev;
            assert!(diff > 0.0, "not increasing at {x}");
            if t > 1 {
                assert!(diff - prev_diff >= -1e-10, "not convex at {x}");
            }
            prev = y;
            prev_diff = diff;
        }
    }

    #[test]
    fn margin_cost_examples() {
        let d = derived();
        let curve = MinimizingCurve::for_a(&d);
        assert_eq!(h_a(&curve, &d.params.h_hat, 0.0).unwrap(), 0.0);
        assert_eq!(h_a(&curve, &d.params.h_hat, 4.0).unwrap(), 9.0);
        let v = h_a(&curve, &d.params.h_hat, 12.0).unwrap();
        assert!((v - 29.5).abs() < 1e-12);
        assert!(h_a(&curve, &d.params.h_hat, curve.x_full + 0.5).is_err());
    }

    #[test]
    fn margin_cost_dominates_and_modulus_grows() {
        let d = derived();
        let curve = MinimizingCurve::for_a(&d);
        let h = HoldingCost::new(&d);
        let w1 = omega1(&d, &curve, 0.01);
        for t in 0..=500 {
            let x = curve.x_full * (t as f64) / 500.0;
            let ha = h_a(&curve, &d.params.h_hat, x).unwrap();
            let hv = h.eval(x).unwrap();
            assert!(ha >= hv - 1e-10);
            assert!(ha <= hv + w1 + 1e-10);
        }
        // Zero margin collapses the gap.
        let mut p0 = three_class();
        p0.delta0 = 0.0;
        let d0 = DerivedModel::derive(p0).unwrap();
        let c0 = MinimizingCurve::for_a(&d0);
        assert_eq!(omega1(&d0, &c0, 0.01), 0.0);
        // The modulus is nondecreasing in the margin.
        let mut last = 0.0;
        for delta in [0.05, 0.1, 0.2, 0.5] {
            let mut p = three_class();
            p.delta0 = delta;
            let dd = DerivedModel::derive(p).unwrap();
            let cc = MinimizingCurve::for_a(&dd);
            let w = omega1(&dd, &cc, 0.01);
            assert!(w >= last - 1e-12, "omega1 not monotone at delta0 = {delta}");
            last = w;
        }
    }
}
