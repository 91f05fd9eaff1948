//! Discounted cost accounting and statistical summaries.
//!
//! Between events every integrand is constant, so each piece integrates in
//! closed form: a rate c on [t0, t1) contributes c (e^{-rho t0} -
//! e^{-rho t1}) / rho, and a rejection at time t contributes its cost times
//! e^{-rho t}. There is no quadrature error; recomputing on a finer grid
//! changes nothing.
//!
//! The robust cost of one path is
//!
//!   holding + rejection - sum_i kl1_i / kappa1_i - sum_i kl2_i / kappa2_i,
//!
//! where the KL terms use the closed-form integrands psi log(psi/base) -
//! psi + base: the arrival side against dt, the service side against the
//! effort dT_i = U_i dt. Under the null adversary the intensities equal the
//! base rates bitwise and every KL piece is exactly zero.

use crate::adversary::Adversary;
use crate::error::{Error, Result};
use crate::model::{DerivedModel, ScaledModel};
use crate::reduction::MinimizingCurve;
use crate::simulator::{EventKind, Trajectory};

/// Discounted cost pieces of one simulated path.
#[derive(Clone, Debug)]
pub struct CostSample {
    pub holding: f64,
    pub rejection: f64,
    pub kl1: Vec<f64>,
    pub kl2: Vec<f64>,
    pub total: f64,
    /// Bound on the discounted cost ignored beyond the horizon.
    pub horizon_tail: f64,
}

impl CostSample {
    /// Total KL penalty with the ambiguity weights applied; a zero penalty
    /// against a zero weight contributes zero.
    pub fn kl_total(kl1: &[f64], kl2: &[f64], d: &DerivedModel) -> f64 {
        let mut t = 0.0;
        for i in 0..kl1.len() {
            t += weighted(kl1[i], d.params.kappa1[i]);
            t += weighted(kl2[i], d.params.kappa2[i]);
        }
        t
    }
}

fn weighted(kl: f64, kappa: f64) -> f64 {
    if kl == 0.0 {
        0.0
    } else {
        kl / kappa
    }
}

/// KL divergence rate of a perturbed intensity against its base rate;
/// exactly zero when they are bitwise equal.
pub fn kl_rate(psi: f64, base: f64) -> f64 {
    if psi == base {
        0.0
    } else {
        psi * (psi / base).ln() - psi + base
    }
}

/// Streaming accumulator: the simulator feeds it intervals and rejection
/// events in path order; replaying logged intervals through the same
/// methods reproduces every field bit for bit.
#[derive(Clone, Debug)]
pub struct Accumulator {
    varrho: f64,
    inv_sqrt_n: f64,
    h_hat: Vec<f64>,
    r_hat: Vec<f64>,
    lambda_n: Vec<f64>,
    mu_n: Vec<f64>,
    holding: f64,
    rejection: f64,
    kl1: Vec<f64>,
    kl2: Vec<f64>,
}

impl Accumulator {
    pub fn new(d: &DerivedModel, sc: &ScaledModel) -> Self {
        let k = d.num_classes();
        Accumulator {
            varrho: d.params.varrho,
            inv_sqrt_n: sc.inv_sqrt_n,
            h_hat: d.params.h_hat.clone(),
            r_hat: d.params.r_hat.clone(),
            lambda_n: sc.lambda_n.clone(),
            mu_n: sc.mu_n.clone(),
            holding: 0.0,
            rejection: 0.0,
            kl1: vec![0.0; k],
            kl2: vec![0.0; k],
        }
    }

    /// One inter-event interval with constant state, effort and intensities.
    pub fn interval(&mut self, t0: f64, t1: f64, x: &[u64], u: &[f64], psi1: &[f64], psi2: &[f64]) {
        if t1 <= t0 {
            return;
        }
        let w = ((-self.varrho * t0).exp() - (-self.varrho * t1).exp()) / self.varrho;
        let mut hold_rate = 0.0;
        for i in 0..x.len() {
            hold_rate += self.h_hat[i] * x[i] as f64;
        }
        self.holding += hold_rate * self.inv_sqrt_n * w;
        for i in 0..x.len() {
            self.kl1[i] += kl_rate(psi1[i], self.lambda_n[i]) * w;
            self.kl2[i] += kl_rate(psi2[i], self.mu_n[i]) * u[i] * w;
        }
    }

    /// One rejected customer of `class` at time `t`.
    pub fn rejection_event(&mut self, t: f64, class: usize) {
        self.rejection += self.r_hat[class] * self.inv_sqrt_n * (-self.varrho * t).exp();
    }

    /// Closes the sample, computing the total and a bound on everything the
    /// horizon cut off: held state is capped by the buffers, the rejection
    /// flux by the adversary's largest arrival intensities, and the KL rates
    /// by the intensity extremes.
    pub fn finish(
        self,
        d: &DerivedModel,
        sc: &ScaledModel,
        adversary: &Adversary,
        horizon: f64,
    ) -> CostSample {
        let k = d.num_classes();
        let (lo1, lo2) = adversary.hat_lower_bounds(d, sc);
        let (hi1, hi2) = adversary.hat_upper_bounds(d, sc);
        let nf = sc.n as f64;
        let mut rate_bound = 0.0;
        for i in 0..k {
            let s1 = (d.params.lambda[i] * nf).sqrt();
            let s2 = (d.params.mu[i] * nf).sqrt();
            let p1_lo = sc.lambda_n[i] + lo1[i] * s1;
            let p1_hi = sc.lambda_n[i] + hi1[i] * s1;
            let p2_lo = sc.mu_n[i] + lo2[i] * s2;
            let p2_hi = sc.mu_n[i] + hi2[i] * s2;
            // Holding at the buffer cap.
            rate_bound += d.params.h_hat[i] * d.params.b_hat[i];
            // Every arrival rejected, at the adversary's fastest rate.
            rate_bound += d.params.r_hat[i] * p1_hi * sc.inv_sqrt_n;
            // KL rates at the intensity extremes (the rate is convex with
            // minimum 0 at the base rate).
            let g1 = kl_rate(p1_lo, sc.lambda_n[i]).max(kl_rate(p1_hi, sc.lambda_n[i]));
            let g2 = kl_rate(p2_lo, sc.mu_n[i]).max(kl_rate(p2_hi, sc.mu_n[i]));
            rate_bound += weighted(g1, d.params.kappa1[i]) + weighted(g2, d.params.kappa2[i]);
        }
        let horizon_tail = (-self.varrho * horizon).exp() * rate_bound / self.varrho;
        let total = self.holding + self.rejection - CostSample::kl_total(&self.kl1, &self.kl2, d);
        CostSample {
            holding: self.holding,
            rejection: self.rejection,
            kl1: self.kl1,
            kl2: self.kl2,
            total,
            horizon_tail,
        }
    }
}

/// Recomputes the cost of a logged trajectory; requires interval and event
/// logs. Bit-identical to the streaming accumulation.
pub fn accumulate(
    traj: &Trajectory,
    d: &DerivedModel,
    sc: &ScaledModel,
    adversary: &Adversary,
) -> Result<CostSample> {
    let intervals = traj.intervals.as_ref().ok_or(Error::MissingIntensityLog)?;
    let events = traj.events.as_ref().ok_or(Error::MissingIntensityLog)?;
    let mut acc = Accumulator::new(d, sc);
    for iv in intervals {
        acc.interval(iv.t0, iv.t1, &iv.x, &iv.u, &iv.psi1, &iv.psi2);
    }
    for e in events {
        if matches!(e.kind, EventKind::Rejection { .. }) {
            acc.rejection_event(e.t, e.class);
        }
    }
    Ok(acc.finish(d, sc, adversary, traj.horizon))
}

/// Largest deviation of the scaled state from the minimizing curve at the
/// trajectory's grid times up to min(t_max, first forced rejection). The
/// workload argument is clamped to the curve's domain; the n-dependent
/// weights can push it slightly past b.
pub fn collapse_distance(
    traj: &Trajectory,
    curve: &MinimizingCurve,
    sc: &ScaledModel,
    t_max: f64,
) -> Result<f64> {
    let g = traj.grid.as_ref().ok_or_else(|| Error::Model {
        msg: "collapse distance needs grid samples; set grid_points".into(),
    })?;
    let cutoff = traj.tau_forced.unwrap_or(f64::INFINITY).min(t_max);
    let mut dist = 0.0f64;
    for j in 0..g.times.len() {
        if g.times[j] > cutoff {
            break;
        }
        let w = sc.workload(&g.states[j]).clamp(0.0, curve.b);
        let levels = curve.gamma(w)?;
        for i in 0..levels.len() {
            let x_hat = g.states[j][i] as f64 * sc.inv_sqrt_n;
            dist = dist.max((x_hat - levels[i]).abs());
        }
    }
    Ok(dist)
}

/// Discounted first and second moments of the scaled perturbations, per
/// class, averaged over a batch: int e^{-rho t} (|hat1| dt + |hat2| dT_i)
/// and the squared analogue.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

pub fn moment_diagnostics(
    batch: &[Trajectory],
    d: &DerivedModel,
) -> Result<MomentReport> {
    let k = d.num_classes();
    let varrho = d.params.varrho;
    let mut first = vec![0.0; k];
    let mut second = vec![0.0; k];
    for traj in batch {
        let intervals = traj.intervals.as_ref().ok_or(Error::MissingIntensityLog)?;
        for iv in intervals {
            let w = ((-varrho * iv.t0).exp() - (-varrho * iv.t1).exp()) / varrho;
            for i in 0..k {
                let h1 = iv.psi1_hat[i].abs();
                let h2 = iv.psi2_hat[i].abs();
                first[i] += (h1 + h2 * iv.u[i]) * w;
                second[i] += (h1 * h1 + h2 * h2 * iv.u[i]) * w;
            }
        }
    }
    let m = batch.len().max(1) as f64;
    for i in 0..k {
        first[i] /= m;
        second[i] /= m;
    }
    Ok(MomentReport { first, second })
}

/// Sample mean and 95% confidence half width.
pub fn mean_and_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Wilson score interval for a binomial proportion at 95%.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = 1.96f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Two-sided Kolmogorov-Smirnov statistic against the uniform law on [0,1].
pub fn ks_statistic_uniform(samples: &[f64]) -> f64 {
    let mut us: Vec<f64> = samples.to_vec();
    us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = us.len() as f64;
    let mut dist = 0.0f64;
    for (i, &u) in us.iter().enumerate() {
        dist = dist.max(((i + 1) as f64 / n - u).abs());
        dist = dist.max((u - i as f64 / n).abs());
    }
    dist
}

/// Asymptotic 1% critical value of the two-sided KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
