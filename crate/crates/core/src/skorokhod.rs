//! Two-sided reflection of discretely sampled paths on [0, beta]: the input
//! path is kept inside the interval by a nondecreasing push ascending at the
//! lower end and a nondecreasing push descending at the upper end, each
//! acting only while its own boundary is attained.

use crate::error::{Error, Result};

/// One reflection step. From a constrained position x in [0, beta], apply
/// the free increment and clamp back into the interval. Returns the new
/// position and the amounts pushed at the lower and upper boundary; at most
/// one of them is nonzero.
///
/// Increments with |increment| >= beta could cross both boundaries within
/// one step, where a single clamp is no longer the exact discrete analogue
/// of the reflection; such steps are rejected.
#[inline]
pub fn reflect_step(x: f64, increment: f64, beta: f64) -> Result<(f64, f64, f64)> {
    debug_assert!((0.0..=beta).contains(&x), "x = {x} outside [0, {beta}]");
    if !(increment.abs() < beta) {
        return Err(Error::StepTooLarge {
            step: increment.abs(),
            beta,
        });
    }
    let y = x + increment;
    if y < 0.0 {
        Ok((0.0, -y, 0.0))
    } else if y > beta {
        Ok((beta, 0.0, y - beta))
    } else {
        Ok((y, 0.0, 0.0))
    }
}

/// A constrained path with its boundary pushes, sampled at the input times.
#[derive(Clone, Debug)]
pub struct ReflectedPath {
    pub times: Vec<f64>,
    /// Constrained values in [0, beta].
    pub chi: Vec<f64>,
    /// Cumulative push at the lower boundary; nondecreasing, starts at 0.
    pub zeta1: Vec<f64>,
    /// Cumulative push at the upper boundary; nondecreasing, starts at 0.
    pub zeta2: Vec<f64>,
}

impl ReflectedPath {
    /// chi(k) - (eta(k) + zeta1(k) - zeta2(k)), which must vanish.
    pub fn decomposition_gap(&self, eta: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.times.len() {
            let lhs = self.chi[k];
            let rhs = eta[k] + self.zeta1[k] - self.zeta2[k];
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }
}

/// Reflects a sampled free path eta on [0, beta] by folding `reflect_step`
/// over its increments. eta[0] must lie inside the interval. Increments at
/// least as large as beta are split into equal substeps when
/// `auto_subdivide` is set (linear interpolation of the free path) and are
/// an error otherwise.
pub fn reflect_path(
    times: &[f64],
    eta: &[f64],
    beta: f64,
    auto_subdivide: bool,
) -> Result<ReflectedPath> {
    assert_eq!(times.len(), eta.len(), "times and samples must align");
    assert!(beta > 0.0, "beta must be positive");
    if eta.is_empty() {
        return Ok(ReflectedPath {
            times: Vec::new(),
            chi: Vec::new(),
            zeta1: Vec::new(),
            zeta2: Vec::new(),
        });
    }
    if !(0.0..=beta).contains(&eta[0]) {
        return Err(Error::Domain {
            what: "eta(0)",
            value: eta[0],
            lo: 0.0,
            hi: beta,
        });
    }
    let n = eta.len();
    let mut chi = Vec::with_capacity(n);
    let mut zeta1 = Vec::with_capacity(n);
    let mut zeta2 = Vec::with_capacity(n);
    let mut x = eta[0];
    let mut z1 = 0.0;
    let mut z2 = 0.0;
    chi.push(x);
    zeta1.push(z1);
    zeta2.push(z2);
    for k in 1..n {
        let inc = eta[k] - eta[k - 1];
        if inc.abs() < beta {
            let (nx, d1, d2) = reflect_step(x, inc, beta)?;
            x = nx;
            z1 += d1;
            z2 += d2;
        } else if auto_subdivide {
            // Split so each substep moves less than half the interval.
            let parts = (inc.abs() / (0.5 * beta)).ceil() as usize;
            let sub = inc / parts as f64;
            for _ in 0..parts {
                let (nx, d1, d2) = reflect_step(x, sub, beta)?;
                x = nx;
                z1 += d1;
                z2 += d2;
            }
        } else {
            return Err(Error::StepTooLarge {
                step: inc.abs(),
                beta,
            });
        }
        chi.push(x);
        zeta1.push(z1);
        zeta2.push(z2);
    }
    Ok(ReflectedPath {
        times: times.to_vec(),
        chi,
        zeta1,
        zeta2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_cases() {
        assert_eq!(reflect_step(0.5, 0.0, 1.0).unwrap(), (0.5, 0.0, 0.0));
        assert_eq!(reflect_step(0.2, -0.5, 1.0).unwrap(), (0.0, 0.3, 0.0));
        let (x, d1, d2) = reflect_step(0.9, 0.4, 1.0).unwrap();
        assert_eq!(x, 1.0);
        assert_eq!(d1, 0.0);
        assert!((d2 - 0.3).abs() < 1e-15);
        assert!(reflect_step(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn constant_path_passes_through() {
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let eta = vec![0.4; 50];
        let p = reflect_path(&times, &eta, 1.0, false).unwrap();
        assert!(p.chi.iter().all(|&c| c == 0.4));
        assert_eq!(*p.zeta1.last().unwrap(), 0.0);
        assert_eq!(*p.zeta2.last().unwrap(), 0.0);
    }

    #[test]
    fn linear_drifts_give_closed_form_pushes() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.02).collect();
        let down: Vec<f64> = times.iter().map(|&t| -t).collect();
        let p = reflect_path(&times, &down, 1.0, false).unwrap();
        for (k, &t) in times.iter().enumerate() {
            assert!(p.chi[k].abs() < 1e-12);
            assert!((p.zeta1[k] - t).abs() < 1e-12);
            assert_eq!(p.zeta2[k], 0.0);
        }
        let up: Vec<f64> = times.iter().map(|&t| t).collect();
        let p = reflect_path(&times, &up, 1.0, false).unwrap();
        for (k, &t) in times.iter().enumerate() {
            assert!((p.chi[k] - t.min(1.0)).abs() < 1e-12);
            assert!((p.zeta2[k] - (t - 1.0).max(0.0)).abs() < 1e-12);
            assert_eq!(p.zeta1[k], 0.0);
        }
    }

    #[test]
    fn subdivision_matches_manual_split() {
        let times = vec![0.0, 1.0];
        let eta = vec![0.2, 3.7];
        let coarse = reflect_path(&times, &eta, 1.0, true).unwrap();
        // A monotone overshoot ends pinned at the boundary with the excess
        // pushed out, regardless of the split.
        assert_eq!(*coarse.chi.last().unwrap(), 1.0);
        // Total excess above the boundary: 3.7 - 1.0.
        assert!((coarse.zeta2.last().unwrap() - 2.7).abs() < 1e-12);
        assert!(reflect_path(&times, &eta, 1.0, false).is_err());
    }

    #[test]
    fn reflecting_a_constrained_path_is_identity() {
        let times: Vec<f64> = (0..200).map(|k| k as f64).collect();
        let mut x: f64 = 0.3;
        let mut eta = Vec::new();
        for k in 0..200 {
            eta.push(x);
            x = (x + if k % 2 == 0 { 0.21 } else { -0.2 }).clamp(0.0, 1.0);
        }
        let p = reflect_path(&times, &eta, 1.0, false).unwrap();
        for k in 0..200 {
            assert_eq!(p.chi[k], eta[k]);
        }
        assert_eq!(*p.zeta1.last().unwrap(), 0.0);
        assert_eq!(*p.zeta2.last().unwrap(), 0.0);
    }
}
