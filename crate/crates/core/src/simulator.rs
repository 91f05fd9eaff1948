//! Exact discrete-event simulation of the n-th system.
//!
//! Between events the policy's effort vector and the adversary's intensities
//! are constant, so the time to the next event is exponential with rate
//! Lambda = sum_i psi1_i + sum_i psi2_i U_i and the event channel is chosen
//! proportionally (competing exponential clocks). There is no discretization
//! error. Arrivals are counted whether or not they are admitted; rejections
//! happen only at arrival epochs, one customer at a time. After every event
//! the policy and the adversary are re-evaluated on the new state.
//!
//! Costs accumulate in closed form per inter-event interval (see the metrics
//! module). Event and intensity logs are optional because long runs generate
//! millions of events; grid snapshots cover plotting and the collapse
//! diagnostics.

use crate::adversary::{Adversary, IntensityPair};
use crate::error::{Error, Result};
use crate::metrics::{Accumulator, CostSample};
use crate::model::{DerivedModel, ScaledModel};
use crate::policy::{check_allocation, Admission, Policy};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

/// Queue state with cumulative counts: X = X(0) + A - S - R per class,
/// effort T_i nondecreasing with unit total speed.
#[derive(Clone, Debug)]
pub struct SystemState {
    pub t: f64,
    pub x: Vec<u64>,
    pub a: Vec<u64>,
    pub s: Vec<u64>,
    pub r: Vec<u64>,
    pub effort: Vec<f64>,
    pub u: Vec<f64>,
}

impl SystemState {
    fn new(x0: &[u64]) -> Self {
        let k = x0.len();
        SystemState {
            t: 0.0,
            x: x0.to_vec(),
            a: vec![0; k],
            s: vec![0; k],
            r: vec![0; k],
            effort: vec![0.0; k],
            u: vec![0.0; k],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Arrival,
    Service,
    Rejection { forced: bool },
}

/// One logged event with the post-event state.
#[derive(Clone, Debug)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub class: usize,
    pub x_after: Vec<u64>,
}

/// One inter-event interval with everything needed to replay its cost
/// pieces: pre-event state, effort, intensities and their scaled hats.
#[derive(Clone, Debug)]
pub struct Interval {
    pub t0: f64,
    pub t1: f64,
    pub x: Vec<u64>,
    pub u: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub psi1_hat: Vec<f64>,
    pub psi2_hat: Vec<f64>,
}

/// State snapshots on a uniform time grid (the state at a grid time is the
/// value of the piecewise-constant path there).
#[derive(Clone, Debug, Default)]
pub struct GridSamples {
    pub times: Vec<f64>,
    pub states: Vec<Vec<u64>>,
    pub rejected: Vec<Vec<u64>>,
    pub effort: Vec<Vec<f64>>,
}

/// Diffusion-scaled view of grid snapshots.
#[derive(Clone, Debug)]
pub struct ScaledView {
    pub times: Vec<f64>,
    /// x_hat[j][i] = X_i / sqrt(n) at times[j].
    pub x_hat: Vec<Vec<f64>>,
    pub r_hat: Vec<Vec<f64>>,
    /// y_hat[j][i] = mu_n_i (rho_i t - T_i(t)) / sqrt(n).
    pub y_hat: Vec<Vec<f64>>,
    /// Workload theta_n . x_hat.
    pub x_sharp: Vec<f64>,
    pub r_sharp: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub horizon: f64,
    pub seed: u64,
    /// Replication index; each (seed, stream) pair is an independent RNG
    /// stream of the same generator family.
    pub stream: u64,
    pub x0: Vec<u64>,
    pub log_events: bool,
    pub log_intervals: bool,
    /// Number of uniform grid snapshots including both endpoints; 0 disables
    /// sampling.
    pub grid_points: usize,
    /// Start of the window for the time-average queue (burn-in cutoff).
    pub avg_from: f64,
}

impl RunOptions {
    pub fn new(horizon: f64, seed: u64, stream: u64, x0: Vec<u64>) -> Self {
        RunOptions {
            horizon,
            seed,
            stream,
            x0,
            log_events: false,
            log_intervals: false,
            grid_points: 0,
            avg_from: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub n: u64,
    pub horizon: f64,
    pub initial: Vec<u64>,
    pub final_state: SystemState,
    pub events: Option<Vec<Event>>,
    pub intervals: Option<Vec<Interval>>,
    pub grid: Option<GridSamples>,
    /// First time a forced rejection occurred, if any.
    pub tau_forced: Option<f64>,
    /// Time-average queue per class over [avg_from, horizon].
    pub avg_queue: Vec<f64>,
    /// Largest queue seen per class (buffer-constraint witness).
    pub max_queue: Vec<u64>,
    pub num_events: u64,
}

/// The RNG for replication `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates one path of the n-th system and accumulates its discounted
/// cost. Identical inputs give identical outputs, event for event.
pub fn run_path(
    d: &DerivedModel,
    sc: &ScaledModel,
    policy: &Policy,
    adversary: &Adversary,
    opts: &RunOptions,
) -> Result<(Trajectory, CostSample)> {
    let k = d.num_classes();
    if opts.x0.len() != k {
        return Err(Error::Model {
            msg: format!("x0 has {} classes, model has {k}", opts.x0.len()),
        });
    }
    for i in 0..k {
        if opts.x0[i] > sc.capacity[i] {
            return Err(Error::Model {
                msg: format!(
                    "x0[{i}] = {} exceeds capacity {}",
                    opts.x0[i], sc.capacity[i]
                ),
            });
        }
    }
    if !(opts.horizon > 0.0) || !opts.horizon.is_finite() {
        return Err(Error::Domain {
            what: "horizon",
            value: opts.horizon,
            lo: 0.0,
            hi: f64::MAX,
        });
    }
    adversary.validate(d, sc)?;

    let mut rng = stream_rng(opts.seed, opts.stream);
    let mut st = SystemState::new(&opts.x0);
    let mut acc = Accumulator::new(d, sc);
    let mut pair = IntensityPair::zeros(k);

    let mut events = opts.log_events.then(Vec::new);
    let mut intervals = opts.log_intervals.then(Vec::new);
    let mut grid = (opts.grid_points > 0).then(GridSamples::default);
    let grid_step = if opts.grid_points > 1 {
        opts.horizon / (opts.grid_points - 1) as f64
    } else {
        opts.horizon
    };
    let mut next_grid = 0usize;

    let mut tau_forced = None;
    let mut avg_queue = vec![0.0; k];
    let mut max_queue = st.x.clone();
    let mut num_events = 0u64;

    loop {
        st.u = policy.allocate(d, sc, &st.x);
        check_allocation(&st.x, &st.u)?;
        adversary.intensities_into(d, sc, &st.x, &mut pair)?;

        let mut total_rate = 0.0;
        for i in 0..k {
            total_rate += pair.psi1[i] + pair.psi2[i] * st.u[i];
        }
        debug_assert!(total_rate > 0.0);

        let e: f64 = rng.sample(Exp1);
        let gap = e / total_rate;
        let t_next = st.t + gap;
        let t_end = t_next.min(opts.horizon);

        // Grid snapshots falling inside [t, t_end): the state is constant
        // there. The final grid point is flushed after the loop.
        if let Some(g) = grid.as_mut() {
            while next_grid < opts.grid_points {
                let tg = grid_step * next_grid as f64;
                if tg >= t_end {
                    break;
                }
                g.times.push(tg);
                g.states.push(st.x.clone());
                g.rejected.push(st.r.clone());
                let eff: Vec<f64> = (0..k)
                    .map(|i| st.effort[i] + st.u[i] * (tg - st.t))
                    .collect();
                g.effort.push(eff);
                next_grid += 1;
            }
        }

        acc.interval(st.t, t_end, &st.x, &st.u, &pair.psi1, &pair.psi2);
        if let Some(logs) = intervals.as_mut() {
            logs.push(Interval {
                t0: st.t,
                t1: t_end,
                x: st.x.clone(),
                u: st.u.clone(),
                psi1: pair.psi1.clone(),
                psi2: pair.psi2.clone(),
                psi1_hat: pair.psi1_hat.clone(),
                psi2_hat: pair.psi2_hat.clone(),
            });
        }
        let win0 = st.t.max(opts.avg_from);
        if t_end > win0 {
            for i in 0..k {
                avg_queue[i] += st.x[i] as f64 * (t_end - win0);
            }
        }
        for i in 0..k {
            st.effort[i] += st.u[i] * (t_end - st.t);
        }

        if t_next >= opts.horizon {
            st.t = opts.horizon;
            break;
        }
        st.t = t_next;
        num_events += 1;

        // Channel selection: arrivals in class order, then services.
        let target = rng.gen::<f64>() * total_rate;
        let mut cum = 0.0;
        let mut chosen: Option<(bool, usize)> = None;
        for i in 0..k {
            cum += pair.psi1[i];
            if target < cum {
                chosen = Some((true, i));
                break;
            }
        }
        if chosen.is_none() {
            for i in 0..k {
                let rate = pair.psi2[i] * st.u[i];
                cum += rate;
                if target < cum && rate > 0.0 {
                    chosen = Some((false, i));
                    break;
                }
            }
        }
        // Roundoff at the top of the cumulative walk: take the last channel
        // with positive rate.
        let (is_arrival, class) = chosen.unwrap_or_else(|| {
            match (0..k).rev().find(|&i| st.u[i] > 0.0) {
                Some(i) => (false, i),
                None => (true, k - 1),
            }
        });

        let kind = if is_arrival {
            st.a[class] += 1;
            match policy.admit(sc, &st.x, class) {
                Admission::Admit => {
                    st.x[class] += 1;
                    max_queue[class] = max_queue[class].max(st.x[class]);
                    EventKind::Arrival
                }
                verdict => {
                    st.r[class] += 1;
                    acc.rejection_event(st.t, class);
                    let forced = verdict == Admission::Forced;
                    if forced && tau_forced.is_none() {
                        tau_forced = Some(st.t);
                    }
                    EventKind::Rejection { forced }
                }
            }
        } else {
            debug_assert!(st.x[class] > 0);
            st.x[class] -= 1;
            st.s[class] += 1;
            EventKind::Service
        };
        if let Some(log) = events.as_mut() {
            log.push(Event {
                t: st.t,
                kind,
                class,
                x_after: st.x.clone(),
            });
        }
    }

    // Flush grid points at or past the final event (state is constant to
    // the horizon).
    if let Some(g) = grid.as_mut() {
        while next_grid < opts.grid_points {
            let tg = (grid_step * next_grid as f64).min(opts.horizon);
            g.times.push(tg);
            g.states.push(st.x.clone());
            g.rejected.push(st.r.clone());
            g.effort.push(st.effort.clone());
            next_grid += 1;
        }
    }

    let window = (opts.horizon - opts.avg_from).max(f64::MIN_POSITIVE);
    for q in avg_queue.iter_mut() {
        *q /= window;
    }

    let cost = acc.finish(d, sc, adversary, opts.horizon);
    let traj = Trajectory {
        n: sc.n,
        horizon: opts.horizon,
        initial: opts.x0.clone(),
        final_state: st,
        events,
        intervals,
        grid,
        tau_forced,
        avg_queue,
        max_queue,
        num_events,
    };
    Ok((traj, cost))
}

/// Diffusion-scaled processes over the trajectory's grid snapshots.
pub fn scaled_view(traj: &Trajectory, d: &DerivedModel, sc: &ScaledModel) -> Result<ScaledView> {
    let g = traj.grid.as_ref().ok_or_else(|| Error::Model {
        msg: "trajectory has no grid samples; set grid_points".into(),
    })?;
    let k = d.num_classes();
    let mut view = ScaledView {
        times: g.times.clone(),
        x_hat: Vec::with_capacity(g.times.len()),
        r_hat: Vec::with_capacity(g.times.len()),
        y_hat: Vec::with_capacity(g.times.len()),
        x_sharp: Vec::with_capacity(g.times.len()),
        r_sharp: Vec::with_capacity(g.times.len()),
    };
    for j in 0..g.times.len() {
        let t = g.times[j];
        let xh: Vec<f64> = g.states[j]
            .iter()
            .map(|&q| q as f64 * sc.inv_sqrt_n)
            .collect();
        let rh: Vec<f64> = g.rejected[j]
            .iter()
            .map(|&q| q as f64 * sc.inv_sqrt_n)
            .collect();
        let yh: Vec<f64> = (0..k)
            .map(|i| sc.mu_n[i] * (d.rho[i] * t - g.effort[j][i]) * sc.inv_sqrt_n)
            .collect();
        let mut xs = 0.0;
        let mut rs = 0.0;
        for i in (0..k).rev() {
            xs += sc.theta_n[i] * xh[i];
            rs += sc.theta_n[i] * rh[i];
        }
        view.x_hat.push(xh);
        view.r_hat.push(rh);
        view.y_hat.push(yh);
        view.x_sharp.push(xs);
        view.r_sharp.push(rs);
    }
    Ok(view)
}
