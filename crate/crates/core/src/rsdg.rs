//! The one-dimensional workload-level game. The state is the diffusion-scaled
//! workload, constrained to [0, b] by a costless reflection at 0 and a
//! rejection push at the top whose marginal cost is r per unit of workload.
//! An adversary perturbs the drift by sigma * psi and pays a quadratic
//! penalty psi^2 / (2 epsilon) per unit time, discounted. The value V solves,
//! where the gradient constraint V' <= r is slack,
//!
//!   varrho V = h(x) + m V' + (sigma^2 / 2) V'' + (epsilon sigma^2 / 2) (V')^2,
//!
//! with V'(0) = 0 at the costless end. Where rejection is active V grows at
//! the exact slope r. The barrier beta is the smallest workload at which the
//! slope reaches r; the optimal strategy reflects the workload on
//! [0, beta]. The adversary's equilibrium feedback is
//! psi(x) = epsilon sigma V'(x).
//!
//! The solver uses an implicit monotone finite-difference scheme (centered
//! where the cell Peclet condition allows, upwinded otherwise - at the grids
//! used here the centered branch always applies) with policy iteration in
//! both controls: the adversary's drift is frozen per sweep and the
//! rejection region is chosen per node by comparing residuals. Each sweep is
//! one tridiagonal solve. A Monte-Carlo evaluator of the same game acts as
//! an independent oracle on the solver.

use crate::error::{Error, Result};
use crate::model::DerivedModel;
use crate::reduction::HoldingCost;
use crate::skorokhod::reflect_step;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as IoWrite;
use std::path::Path;

/// Relative tolerance used when testing whether the slope has reached r.
pub const SLOPE_TOL: f64 = 1e-6;

const MAX_SWEEPS: usize = 500;

/// Cap on rejection-set improvement passes per frozen-drift stage.
const MAX_INNER: usize = 120;

/// Cap on post-loop consistency passes at the frozen rejection set.
const POLISH_PASSES: usize = 8;

/// Solved value function on a uniform workload grid.
#[derive(Clone, Debug)]
pub struct ValueFunction {
    /// Ascending grid 0 = x_0 < ... < x_{N-1} = b.
    pub grid: Vec<f64>,
    pub v: Vec<f64>,
    /// Derivative estimates: centered in the interior, the imposed boundary
    /// value 0 at the reflecting end, one-sided at the top.
    pub dv: Vec<f64>,
    /// Smallest grid point where the slope reaches r (b if only the forced
    /// top node is at slope r).
    pub beta_eps: f64,
    pub epsilon: f64,
    /// Largest interior equation residual where rejection is inactive.
    pub residual_max: f64,
    /// Slope cap: rejection cost per unit of workload.
    pub r: f64,
    /// Workload diffusion coefficient, kept for feedback evaluation.
    pub sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epsilon: f64,
    beta_eps: f64,
    residual_max: f64,
    grid_n: usize,
    r: f64,
    sigma: f64,
}

impl ValueFunction {
    /// Value at an off-grid workload by linear interpolation.
    pub fn value_at(&self, x: f64) -> f64 {
        interp(&self.grid, &self.v, x)
    }

    /// Slope at an off-grid workload by linear interpolation, clamped to
    /// [0, r].
    pub fn slope_at(&self, x: f64) -> f64 {
        interp(&self.grid, &self.dv, x).clamp(0.0, self.r)
    }

    pub fn write_csv<W: IoWrite>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,v,dv")?;
        for k in 0..self.grid.len() {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", self.grid[k], self.v[k], self.dv[k])?;
        }
        Ok(())
    }

    pub fn header_json(&self) -> String {
        serde_json::to_string_pretty(&Header {
            epsilon: self.epsilon,
            beta_eps: self.beta_eps,
            residual_max: self.residual_max,
            grid_n: self.grid.len(),
            r: self.r,
            sigma: self.sigma,
        })
        .expect("header serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(&mut csv)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.header_json())?;
        Ok(())
    }

    /// Reads a value function written by `save`.
    pub fn load(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(&std::fs::read_to_string(json_path)?)
            .map_err(|e| Error::Model {
                msg: format!("bad value-function header: {e}"),
            })?;
        let text = std::fs::read_to_string(csv_path)?;
        let mut grid = Vec::new();
        let mut v = Vec::new();
        let mut dv = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |what| {
                parts
                    .next()
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Model {
                        msg: format!("bad value-function row {i}: missing {what}"),
                    })
            };
            grid.push(next("x")?);
            v.push(next("v")?);
            dv.push(next("dv")?);
        }
        if grid.len() != header.grid_n {
            return Err(Error::Model {
                msg: format!(
                    "value-function header says {} rows, file has {}",
                    header.grid_n,
                    grid.len()
                ),
            });
        }
        Ok(ValueFunction {
            grid,
            v,
            dv,
            beta_eps: header.beta_eps,
            epsilon: header.epsilon,
            residual_max: header.residual_max,
            r: header.r,
            sigma: header.sigma,
        })
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let p = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(exact) => return ys[exact],
        Err(ins) => ins - 1,
    };
    let t = (x - xs[p]) / (xs[p + 1] - xs[p]);
    ys[p] + t * (ys[p + 1] - ys[p])
}

/// Solves the workload game on a uniform grid with `n_points` nodes.
pub fn solve_value(d: &DerivedModel, epsilon: f64, n_points: usize) -> Result<ValueFunction> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain {
            what: "epsilon",
            value: epsilon,
            lo: f64::MIN_POSITIVE,
            hi: f64::MAX,
        });
    }
    if n_points < 200 {
        return Err(Error::Domain {
            what: "grid points",
            value: n_points as f64,
            lo: 200.0,
            hi: f64::MAX,
        });
    }
    let n = n_points;
    let b = d.b;
    let dx = b / (n as f64 - 1.0);
    let grid: Vec<f64> = (0..n)
        .map(|k| if k == n - 1 { b } else { dx * k as f64 })
        .collect();
    let hc = HoldingCost::new(d);
    let h: Vec<f64> = grid.iter().map(|&x| hc.eval_clamped(x)).collect();
    let varrho = d.params.varrho;
    let sig = d.sigma;
    let sig2 = sig * sig;
    let m = d.m;
    let r = d.r;
    let diff = sig2 / (2.0 * dx * dx);

    let mut v = vec![0.0; n];
    let mut psi = vec![0.0; n];
    let mut active = vec![false; n];
    active[n - 1] = true;

    let mut lo = vec![0.0; n];
    let mut di = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    let mut dv = vec![0.0; n];

    // Two nested improvement loops. The inner loop is policy iteration on
    // the rejection set at a frozen adversary drift: solve the row system,
    // then re-select rows by comparing the two residuals. The outer loop
    // updates the adversary feedback from the new slope under damping.
    // Coupling both updates into one sweep can cycle: the fixture-scale
    // models sit near the degenerate tie where the top holding slope equals
    // the annuitized rejection rate, and there the rejection set is only
    // pinned down once the drift has stopped moving.
    let mut converged = false;
    let mut best_change = f64::INFINITY;
    let mut since_best = 0usize;
    let psi_scale = epsilon * sig * r;
    let stencil = Stencil {
        h: &h,
        varrho,
        sig,
        m,
        r,
        dx,
        diff,
        epsilon,
    };
    for outer in 0..MAX_SWEEPS {
        let mut inner_change = f64::INFINITY;
        let mut vscale = 1.0f64;
        for _inner in 0..MAX_INNER {
            // Assemble rows for the frozen drift and current rejection set.
            stencil.fill(&psi, &active, &mut lo, &mut di, &mut up, &mut rhs);
            thomas(&lo, &di, &up, &rhs, &mut scratch, &mut v_new);

            vscale = v_new.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
            inner_change = v
                .iter()
                .zip(&v_new)
                .fold(0.0f64, |a, (&x, &y)| a.max((x - y).abs()));
            v.copy_from_slice(&v_new);

            // Row re-selection: keep the row with the larger residual. On
            // the degenerate tie both residuals vanish at the solution, so
            // set flips alone must not block termination.
            slopes(&v, dx, r, &mut dv);
            for k in 1..n - 1 {
                let slope_back = (v[k] - v[k - 1]) / dx;
                let f_rej = slope_back - r;
                let d2 = (v[k + 1] - 2.0 * v[k] + v[k - 1]) / (dx * dx);
                let f_cont = varrho * v[k]
                    - (m + sig * psi[k]) * dv[k]
                    - 0.5 * sig2 * d2
                    - h[k]
                    + psi[k] * psi[k] / (2.0 * epsilon);
                active[k] = f_rej >= f_cont;
            }

            if inner_change <= 1e-13 * vscale {
                break;
            }
        }

        // Adversary improvement from the settled slope, damped to keep the
        // drift from overshooting while the rejection set is still moving.
        slopes(&v, dx, r, &mut dv);
        let mut psi_change = 0.0f64;
        for k in 0..n {
            let target = epsilon * sig * dv[k].clamp(0.0, r);
            let next = if outer < 2 {
                target
            } else {
                0.5 * (psi[k] + target)
            };
            psi_change = psi_change.max((next - psi[k]).abs());
            psi[k] = next;
        }

        if psi_change <= 1e-12 * psi_scale.max(1.0) && inner_change <= 1e-12 * vscale {
            converged = true;
            break;
        }
        // Stall detection: near the degenerate tie the iterates can settle
        // into a roundoff-scale cycle that never meets the update tolerance.
        // Stop improving and let the residual certificate below decide.
        let change = psi_change.max(inner_change);
        if change < 0.9 * best_change {
            best_change = change;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 50 {
                break;
            }
        }
    }

    // Consistency stage: a stall can exit mid-cycle, with the row solution
    // trailing the last re-selection of the rejection set. Re-solve the rows
    // at the iterate's own slope feedback with the set frozen, so that the
    // returned function satisfies its rows exactly and the residual below
    // certifies the returned function rather than a cycle phase.
    for _ in 0..POLISH_PASSES {
        slopes(&v, dx, r, &mut dv);
        let mut gap = 0.0f64;
        for k in 0..n {
            let target = epsilon * sig * dv[k].clamp(0.0, r);
            gap = gap.max((target - psi[k]).abs());
            psi[k] = target;
        }
        stencil.fill(&psi, &active, &mut lo, &mut di, &mut up, &mut rhs);
        thomas(&lo, &di, &up, &rhs, &mut scratch, &mut v_new);
        v.copy_from_slice(&v_new);
        if gap <= 1e-13 * psi_scale.max(1.0) {
            break;
        }
    }

    slopes(&v, dx, r, &mut dv);
    // Snap roundoff-scale negatives at the flat end to zero.
    for s in dv.iter_mut() {
        if *s < 0.0 && *s > -1e-10 * r {
            *s = 0.0;
        }
    }

    let mut residual_max = 0.0f64;
    for k in 1..n - 1 {
        if active[k] {
            continue;
        }
        let d2 = (v[k + 1] - 2.0 * v[k] + v[k - 1]) / (dx * dx);
        let res = varrho * v[k]
            - h[k]
            - m * dv[k]
            - 0.5 * sig2 * d2
            - 0.5 * epsilon * sig2 * dv[k] * dv[k];
        residual_max = residual_max.max(res.abs());
    }

    // A stalled iterate is still a solution when the equation holds: after
    // the consistency stage the rows are satisfied exactly, and the residual
    // is quadratic in the gap between the frozen drift and the slope
    // feedback, so a roundoff-scale stall still lands at the roundoff floor.
    if !converged {
        let h_scale = h.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
        if residual_max > 1e-8 * h_scale {
            return Err(Error::NoConvergence {
                sweeps: MAX_SWEEPS,
                residual: residual_max,
            });
        }
    }

    let mut vf = ValueFunction {
        grid,
        v,
        dv,
        beta_eps: b,
        epsilon,
        residual_max,
        r,
        sigma: sig,
    };
    vf.beta_eps = beta_epsilon(&vf);
    Ok(vf)
}

/// Row assembly for the implicit grid equations at a frozen adversary drift
/// and rejection set: rejection rows pin the backward slope at the rejection
/// rate, continuation rows discretize the drift-diffusion operator with a
/// central/upwind switch, and the bottom row encodes the reflecting end.
struct Stencil<'a> {
    h: &'a [f64],
    varrho: f64,
    sig: f64,
    m: f64,
    r: f64,
    dx: f64,
    diff: f64,
    epsilon: f64,
}

impl Stencil<'_> {
    fn fill(
        &self,
        psi: &[f64],
        active: &[bool],
        lo: &mut [f64],
        di: &mut [f64],
        up: &mut [f64],
        rhs: &mut [f64],
    ) {
        let n = self.h.len();
        di[0] = self.varrho + 2.0 * self.diff;
        up[0] = -2.0 * self.diff;
        rhs[0] = self.h[0] - psi[0] * psi[0] / (2.0 * self.epsilon);
        for k in 1..n {
            if active[k] {
                lo[k] = -1.0 / self.dx;
                di[k] = 1.0 / self.dx;
                up[k] = 0.0;
                rhs[k] = self.r;
                continue;
            }
            let mu_k = self.m + self.sig * psi[k];
            let adv = mu_k / (2.0 * self.dx);
            rhs[k] = self.h[k] - psi[k] * psi[k] / (2.0 * self.epsilon);
            if adv.abs() <= self.diff {
                lo[k] = -self.diff + adv;
                di[k] = self.varrho + 2.0 * self.diff;
                up[k] = -self.diff - adv;
            } else if mu_k > 0.0 {
                lo[k] = -self.diff;
                di[k] = self.varrho + 2.0 * self.diff + mu_k / self.dx;
                up[k] = -self.diff - mu_k / self.dx;
            } else {
                lo[k] = -self.diff + mu_k / self.dx;
                di[k] = self.varrho + 2.0 * self.diff - mu_k / self.dx;
                up[k] = -self.diff;
            }
        }
    }
}

/// Derivative estimates: centered interior, imposed 0 at the reflecting end,
/// one-sided at the top node.
fn slopes(v: &[f64], dx: f64, _r: f64, out: &mut [f64]) {
    let n = v.len();
    out[0] = 0.0;
    for k in 1..n - 1 {
        out[k] = (v[k + 1] - v[k - 1]) / (2.0 * dx);
    }
    out[n - 1] = (v[n - 1] - v[n - 2]) / dx;
}

fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let n = di.len();
    // Forward elimination into scratch (modified upper) and out (modified rhs).
    let mut beta = di[0];
    scratch[0] = up[0] / beta;
    out[0] = rhs[0] / beta;
    for k in 1..n {
        beta = di[k] - lo[k] * scratch[k - 1];
        scratch[k] = up[k] / beta;
        out[k] = (rhs[k] - lo[k] * out[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        out[k] -= scratch[k] * out[k + 1];
    }
}

/// Smallest grid point at which the slope reaches r (within a relative
/// tolerance), capped at b.
pub fn beta_epsilon(vf: &ValueFunction) -> f64 {
    let threshold = vf.r * (1.0 - SLOPE_TOL);
    for k in 1..vf.grid.len() {
        if vf.dv[k] >= threshold {
            return vf.grid[k];
        }
    }
    vf.grid[vf.grid.len() - 1]
}

/// Equilibrium drift feedback epsilon * sigma * V'(x), clamped through the
/// slope cap; defined on [0, b].
pub fn psi_v(vf: &ValueFunction, x: f64) -> Result<f64> {
    let b = vf.grid[vf.grid.len() - 1];
    if !x.is_finite() || x < -1e-9 || x > b + 1e-9 {
        return Err(Error::Domain {
            what: "workload",
            value: x,
            lo: 0.0,
            hi: b,
        });
    }
    Ok(vf.epsilon * vf.sigma * vf.slope_at(x))
}

/// Monte-Carlo estimate of a discounted game cost.
#[derive(Clone, Debug)]
pub struct GameEstimate {
    pub mean: f64,
    /// 95% confidence half width.
    pub half_width: f64,
    pub replications: u64,
    pub horizon: f64,
    /// Bound on the discounted cost ignored beyond the horizon.
    pub tail_bound: f64,
}

/// Estimates the game cost under the solved equilibrium: reflection on
/// [0, beta_eps] against the drift feedback psi_v, with the quadratic
/// penalty credited to the adversary.
pub fn mc_game_value(
    d: &DerivedModel,
    vf: &ValueFunction,
    x0: f64,
    dt: f64,
    horizon: f64,
    replications: u64,
    seed: u64,
) -> Result<GameEstimate> {
    let psi = |x: f64| vf.epsilon * vf.sigma * vf.slope_at(x);
    mc_game_value_with(d, vf.epsilon, vf.beta_eps, &psi, x0, dt, horizon, replications, seed)
}

/// The default Monte-Carlo step: 1e-3 (b / sigma)^2. Fine enough for trend
/// work; oracle comparisons at sub-percent tolerances need a smaller step
/// because a clamped reflection step carries an O(sigma sqrt(dt)) boundary
/// bias.
pub fn default_mc_dt(d: &DerivedModel) -> f64 {
    1e-3 * (d.b / d.sigma).powi(2)
}

/// Estimates the discounted cost of the reflected workload on [0, barrier]
/// under an arbitrary drift feedback `psi`, paying h(X) dt + r per unit of
/// top push, minus the adversary's penalty psi(X)^2 / (2 epsilon) dt.
/// Replications run in antithetic pairs on independent RNG streams and are
/// reduced in index order, so results do not depend on thread count.
#[allow(clippy::too_many_arguments)]
pub fn mc_game_value_with(
    d: &DerivedModel,
    epsilon: f64,
    barrier: f64,
    psi: &(dyn Fn(f64) -> f64 + Sync),
    x0: f64,
    dt: f64,
    horizon: f64,
    replications: u64,
    seed: u64,
) -> Result<GameEstimate> {
    if !(barrier > 0.0) || barrier > d.b + 1e-9 {
        return Err(Error::Domain {
            what: "barrier",
            value: barrier,
            lo: 0.0,
            hi: d.b,
        });
    }
    if !(0.0..=barrier + 1e-12).contains(&x0) {
        return Err(Error::Domain {
            what: "x0",
            value: x0,
            lo: 0.0,
            hi: barrier,
        });
    }
    if !(dt > 0.0) || !(horizon > dt) {
        return Err(Error::Domain {
            what: "dt",
            value: dt,
            lo: 0.0,
            hi: horizon,
        });
    }
    // Step-size precondition: typical steps must not span the interval.
    let mut psi_max = 0.0f64;
    for t in 0..=1000 {
        let x = barrier * t as f64 / 1000.0;
        psi_max = psi_max.max(psi(x).abs());
    }
    let drift_max = d.m.abs() + d.sigma * psi_max;
    if drift_max * dt + 4.0 * d.sigma * dt.sqrt() >= barrier {
        return Err(Error::StepTooLarge {
            step: drift_max * dt + 4.0 * d.sigma * dt.sqrt(),
            beta: barrier,
        });
    }

    let hc = HoldingCost::new(d);
    let varrho = d.params.varrho;
    let (m, sig, r) = (d.m, d.sigma, d.r);
    let steps = (horizon / dt).ceil() as usize;
    let e_dt = (-varrho * dt).exp();
    let piece = (1.0 - e_dt) / varrho;
    let sqdt = dt.sqrt();
    let pairs = replications.div_ceil(2).max(1);

    let path = |mut rng: ChaCha8Rng, sign: f64| -> Result<f64> {
        let mut x = x0;
        let mut disc = 1.0;
        let mut cost = 0.0;
        for _ in 0..steps {
            let z: f64 = rng.sample(StandardNormal);
            let p = psi(x);
            let rate = hc.eval_clamped(x) - p * p / (2.0 * epsilon);
            cost += rate * disc * piece;
            let inc = (m + sig * p) * dt + sig * sqdt * sign * z;
            let (nx, _d1, d2) = reflect_step(x, inc, barrier)?;
            x = nx;
            disc *= e_dt;
            cost += r * d2 * disc;
        }
        Ok(cost)
    };

    let results: Result<Vec<f64>> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p);
            let plus = path(rng.clone(), 1.0)?;
            let minus = path(rng, -1.0)?;
            Ok(0.5 * (plus + minus))
        })
        .collect();
    let pair_means = results?;

    let np = pair_means.len() as f64;
    let mean = pair_means.iter().sum::<f64>() / np;
    let var = pair_means
        .iter()
        .map(|&x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (np - 1.0).max(1.0);
    let half_width = 1.96 * (var / np).sqrt();

    // Crude bound on the discounted cost past the horizon: holding at the
    // barrier plus a stationary bound on the top push rate.
    let flux = (m + sig * psi_max).max(0.0) + sig * sig / barrier;
    let tail_bound =
        (-varrho * horizon).exp() * (hc.eval_clamped(barrier) + r * flux) / varrho;

    Ok(GameEstimate {
        mean,
        half_width,
        replications: 2 * pairs,
        horizon,
        tail_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DerivedModel;
    use crate::testutil::three_class;

    fn solved() -> (DerivedModel, ValueFunction) {
        let d = DerivedModel::derive(three_class()).unwrap();
        let vf = solve_value(&d, d.epsilon, 2001).unwrap();
        (d, vf)
    }

    #[test]
    fn slope_bounds_and_boundary() {
        let (d, vf) = solved();
        assert_eq!(vf.dv[0], 0.0);
        for (k, &s) in vf.dv.iter().enumerate() {
            assert!(s >= 0.0, "negative slope at node {k}");
            assert!(s <= d.r + 1e-8, "slope above cap at node {k}");
        }
        // The top node is forced to the rejection slope.
        assert!((vf.dv.last().unwrap() - d.r).abs() <= 1e-9 * d.r);
        // The one-sided slope at the reflecting end vanishes at scheme order.
        let dx = vf.grid[1] - vf.grid[0];
        assert!((vf.v[1] - vf.v[0]) / dx <= 0.1 * d.r);
    }

    #[test]
    fn residual_is_small_and_slope_region_is_upper() {
        let (d, vf) = solved();
        let scale = crate::reduction::holding_h(&d, d.b).unwrap();
        assert!(
            vf.residual_max <= 1e-5 * scale,
            "residual {} vs scale {scale}",
            vf.residual_max
        );
        // Slope region {dv = r} is an upper interval [beta, b].
        let th = d.r * (1.0 - SLOPE_TOL);
        for k in 1..vf.grid.len() {
            if vf.grid[k] < vf.beta_eps {
                assert!(vf.dv[k] < th, "slope at cap below beta at node {k}");
            } else {
                assert!(vf.dv[k] >= th, "slope below cap above beta at node {k}");
            }
        }
        assert!(vf.beta_eps > 0.0 && vf.beta_eps <= d.b);
    }

    #[test]
    fn value_is_nondecreasing_and_grid_converges() {
        let d = DerivedModel::derive(three_class()).unwrap();
        let coarse = solve_value(&d, d.epsilon, 1001).unwrap();
        let fine = solve_value(&d, d.epsilon, 2001).unwrap();
        for k in 1..coarse.v.len() {
            assert!(coarse.v[k] >= coarse.v[k - 1] - 1e-12);
        }
        let mut gap = 0.0f64;
        for (k, &x) in coarse.grid.iter().enumerate() {
            gap = gap.max((coarse.v[k] - fine.value_at(x)).abs());
        }
        // First-order junction handling: halving the step at least halves
        // the gap scale.
        assert!(gap <= 5e-3 * fine.v.last().unwrap(), "grid gap {gap}");
        assert!((coarse.beta_eps - fine.beta_eps).abs() < 0.05 * d.b);
    }

    #[test]
    fn rejection_gets_cheaper_barrier_moves_up() {
        let base = DerivedModel::derive(three_class()).unwrap();
        let mut expensive = three_class();
        expensive.r_hat = vec![20.0, 30.0, 40.0];
        let exp = DerivedModel::derive(expensive).unwrap();
        let vb = solve_value(&base, base.epsilon, 1001).unwrap();
        let ve = solve_value(&exp, exp.epsilon, 1001).unwrap();
        assert!(ve.beta_eps >= vb.beta_eps - 1e-9);
    }

    #[test]
    fn feedback_respects_cap_and_boundary() {
        let (d, vf) = solved();
        assert_eq!(psi_v(&vf, 0.0).unwrap(), 0.0);
        let cap = vf.epsilon * vf.sigma * d.r;
        for t in 0..=100 {
            let x = d.b * t as f64 / 100.0;
            let p = psi_v(&vf, x).unwrap();
            assert!(p >= 0.0 && p <= cap + 1e-12);
        }
        let above = psi_v(&vf, vf.beta_eps.min(d.b - 1e-9) + 0.0);
        assert!(above.is_ok());
        assert!(psi_v(&vf, d.b + 1.0).is_err());
        // At and above the barrier the feedback sits at its cap.
        let p = psi_v(&vf, (vf.beta_eps + d.b) / 2.0).unwrap();
        assert!((p - cap).abs() <= 1e-6 * cap);
    }

    #[test]
    fn csv_json_roundtrip() {
        let (_d, vf) = solved();
        let dir = std::env::temp_dir().join("rqlab-vf-roundtrip");
        vf.save(&dir, "vf").unwrap();
        let back = ValueFunction::load(&dir.join("vf.csv"), &dir.join("vf.json")).unwrap();
        assert_eq!(back.grid.len(), vf.grid.len());
        assert_eq!(back.beta_eps, vf.beta_eps);
        let mid = vf.grid.len() / 2;
        assert!((back.v[mid] - vf.v[mid]).abs() < 1e-12);
    }

    #[test]
    fn mc_is_reproducible_and_horizon_stable() {
        let (d, vf) = solved();
        let x0 = 0.5 * vf.beta_eps;
        let dt = 2e-4 * (d.b / d.sigma).powi(2);
        let a = mc_game_value(&d, &vf, x0, dt, 6.0, 2000, 7).unwrap();
        let b = mc_game_value(&d, &vf, x0, dt, 6.0, 2000, 7).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert!(a.half_width > 0.0);
        assert!(a.tail_bound > 0.0);
    }
}
