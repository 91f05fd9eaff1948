//! Experiment orchestration: replication plans, reproducible seeds, the
//! convergence / collapse / epsilon-sweep studies, and CSV emission.
//!
//! The limit game value is never estimated directly (the supremum over
//! change-of-measure densities is not computable). The tables bracket it
//! instead: the candidate policy's cost under the equilibrium-driven
//! adversary is compared against the reduced-game value V(x0; epsilon),
//! and a second run under the null adversary gives a lower arm of the
//! bracket on matched seeds. Read the `value` column as the limit target,
//! not as the n-th system's exact game value.
//!
//! Reproducibility contract: a plan re-run with the same seed writes
//! byte-for-byte identical CSVs. Replications use one RNG stream per
//! replication index, cells of the (n, replication) grid run in parallel,
//! and reductions always happen in replication order.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adversary::Adversary;
use crate::error::{Error, Result};
use crate::metrics::{collapse_distance, mean_and_ci95, wilson_interval, CostSample};
use crate::model::{DerivedModel, ModelParams, ScaledModel};
use crate::policy::Policy;
use crate::reduction::MinimizingCurve;
use crate::rsdg::{solve_value, ValueFunction};
use crate::simulator::{run_path, RunOptions};

/// Identification block written at the top of every CSV so that a table can
/// be traced back to the exact configuration, seed, and code that made it.
#[derive(Clone, Debug)]
pub struct Provenance {
    /// Content hash (SHA-256, hex) of the configuration text.
    pub config_sha256: String,
    pub seed: u64,
    pub code_version: String,
    /// Extra `# key: value` lines, e.g. the policy-parameter echo.
    pub extra: Vec<String>,
}

impl Provenance {
    pub fn new(config_text: &str, seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        Provenance {
            config_sha256: hex,
            seed,
            code_version: format!("rqlab-core {}", env!("CARGO_PKG_VERSION")),
            extra: Vec::new(),
        }
    }

    /// Appends one comment line (without the leading `#`), kept in order.
    pub fn push_line(&mut self, line: impl Into<String>) {
        self.extra.push(line.into());
    }

    /// Appends the policy-parameter echo carried by result files whose rows
    /// were produced under the candidate policy.
    pub fn push_policy_echo(&mut self, d: &DerivedModel, beta_eps: f64) {
        self.push_line(format!(
            "policy: a = {}, beta_eps = {}, delta0 = {}, i_star = {}, a_hat = {:?}",
            beta_eps.min(d.a_upper),
            beta_eps,
            d.params.delta0,
            d.i_star,
            d.a_hat,
        ));
    }

    /// Comment lines placed before the CSV header row.
    pub fn header_lines(&self) -> String {
        let mut s = format!(
            "# config_sha256: {}\n# seed: {}\n# code_version: {}\n\
             # note: tables bracket the limit game value via chosen adversaries;\n\
             # note: the n-th system's exact game value is not estimated.\n",
            self.config_sha256, self.seed, self.code_version
        );
        for line in &self.extra {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

/// Replication plan for one experiment family.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    /// System sizes, ascending.
    pub n_ladder: Vec<u64>,
    /// Replications per ladder entry (same length as `n_ladder`).
    pub replications: Vec<usize>,
    /// Simulation horizon in diffusion time.
    pub horizon: f64,
    pub seed: u64,
    /// Snapshot count per trajectory for collapse sampling.
    pub sample_grid: usize,
}

impl ExperimentPlan {
    /// Desk-scale defaults: ladder {25, 100, 400, 1600}, 400 replications at
    /// the small sizes and 100 at the largest, horizon 9. At discount rate 1
    /// the truncated holding tail is exp(-9) * hhat . bhat < 0.005, below
    /// 0.1% of the value scale; the per-sample bound is still reported in
    /// the `horizon_tail` diagnostic rather than assumed.
    pub fn desk(seed: u64) -> Self {
        ExperimentPlan {
            n_ladder: vec![25, 100, 400, 1600],
            replications: vec![400, 400, 400, 100],
            horizon: 9.0,
            seed,
            sample_grid: 241,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ladder.is_empty() || self.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Model {
                msg: "n_ladder must be nonempty and strictly ascending".into(),
            });
        }
        if self.replications.len() != self.n_ladder.len() {
            return Err(Error::Model {
                msg: "replications must match n_ladder length".into(),
            });
        }
        if self.replications.iter().any(|&r| r < 100) {
            return Err(Error::Model {
                msg: "confidence-bearing cells need at least 100 replications".into(),
            });
        }
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(Error::Model {
                msg: "horizon must be positive and finite".into(),
            });
        }
        Ok(())
    }
}

/// Workload coordinate the experiments start from: halfway to the smaller of
/// the reflection barrier and the fill-portion end of the admission curve.
pub fn starting_workload(d: &DerivedModel, vf: &ValueFunction) -> f64 {
    0.5 * vf.beta_eps.min(d.a_upper)
}

/// Initial buffer contents for the n-th system: the admission curve
/// configuration at workload `x0`, rounded to counts.
pub fn initial_state(
    curve: &MinimizingCurve,
    sc: &ScaledModel,
    x0: f64,
) -> Result<Vec<u64>> {
    let levels = curve.gamma(x0)?;
    Ok(levels
        .iter()
        .zip(&sc.capacity)
        .map(|(&g, &cap)| (((g * sc.sqrt_n).round()) as u64).min(cap))
        .collect())
}

/// One (n, policy, adversary) cell: replications in parallel, reduced in
/// replication order.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub n: u64,
    pub replications: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    /// Mean of the per-path horizon tail bounds (truncation diagnostic).
    pub mean_tail: f64,
    /// Per-replication discounted totals, in replication order.
    pub totals: Vec<f64>,
    /// Per-replication full samples, in replication order.
    pub samples: Vec<CostSample>,
}

pub fn run_cell(
    d: &DerivedModel,
    n: u64,
    policy: &Policy,
    adversary: &Adversary,
    x0: &[u64],
    horizon: f64,
    seed: u64,
    replications: usize,
) -> Result<CellOutcome> {
    let sc = d.scale(n)?;
    let samples: Vec<CostSample> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let opts = RunOptions::new(horizon, seed, rep as u64, x0.to_vec());
            run_path(d, &sc, policy, adversary, &opts).map(|(_, cost)| cost)
        })
        .collect::<Result<Vec<_>>>()?;
    let totals: Vec<f64> = samples.iter().map(|s| s.total).collect();
    let (mean, ci_half_width) = mean_and_ci95(&totals);
    let mut mean_tail = 0.0;
    for s in &samples {
        mean_tail += s.horizon_tail;
    }
    mean_tail /= replications.max(1) as f64;
    Ok(CellOutcome {
        n,
        replications,
        mean,
        ci_half_width,
        mean_tail,
        totals,
        samples,
    })
}

/// One ladder row of the convergence study.
#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub n: u64,
    pub replications: usize,
    /// Cost estimate under the equilibrium-driven adversary.
    pub mean_eq: f64,
    pub ci_eq: f64,
    /// Cost estimate under the null adversary, matched seeds.
    pub mean_null: f64,
    pub ci_null: f64,
    /// Reduced-game value V(x0; epsilon).
    pub value: f64,
    /// |mean_eq - value|.
    pub gap: f64,
    /// Mean of the per-replication differences null - equilibrium.
    pub paired_diff_mean: f64,
    pub paired_diff_ci: f64,
    pub mean_tail: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    /// Common workload coordinate of the initial states.
    pub x0: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Trend and tolerance checks that failed, in human-readable form.
    pub violations: Vec<String>,
}

/// Candidate-policy cost across the ladder under the equilibrium-driven and
/// null adversaries on matched seeds, compared against V(x0; epsilon).
pub fn convergence_experiment(
    d: &DerivedModel,
    vf: &Arc<ValueFunction>,
    plan: &ExperimentPlan,
) -> Result<ConvergenceTable> {
    plan.validate()?;
    let x0 = starting_workload(d, vf);
    let value = vf.value_at(x0);
    let curve = MinimizingCurve::for_a(d);
    let policy = Policy::Candidate(crate::policy::CandidatePolicy::new(d, vf.beta_eps)?);
    let adv_eq = Adversary::Equilibrium { vf: vf.clone() };
    let adv_null = Adversary::Null;

    let mut rows = Vec::with_capacity(plan.n_ladder.len());
    for (idx, &n) in plan.n_ladder.iter().enumerate() {
        let reps = plan.replications[idx];
        let sc = d.scale(n)?;
        let start = initial_state(&curve, &sc, x0)?;
        let eq = run_cell(d, n, &policy, &adv_eq, &start, plan.horizon, plan.seed, reps)?;
        let null = run_cell(d, n, &policy, &adv_null, &start, plan.horizon, plan.seed, reps)?;
        let diffs: Vec<f64> = null
            .totals
            .iter()
            .zip(&eq.totals)
            .map(|(a, b)| a - b)
            .collect();
        let (paired_diff_mean, paired_diff_ci) = mean_and_ci95(&diffs);
        rows.push(ConvergenceRow {
            n,
            replications: reps,
            mean_eq: eq.mean,
            ci_eq: eq.ci_half_width,
            mean_null: null.mean,
            ci_null: null.ci_half_width,
            value,
            gap: (eq.mean - value).abs(),
            paired_diff_mean,
            paired_diff_ci,
            mean_tail: eq.mean_tail,
        });
    }

    let mut violations = Vec::new();
    // Trend check: the gap estimate carries Monte-Carlo noise of its own,
    // so a window only counts as a violation when the increase exceeds the
    // combined interval half-widths of the two cells.
    for w in rows.windows(2) {
        if w[1].gap > w[0].gap + w[0].ci_eq + w[1].ci_eq {
            violations.push(format!(
                "gap did not decrease from n={} ({:.6} +- {:.6}) to n={} ({:.6} +- {:.6})",
                w[0].n, w[0].gap, w[0].ci_eq, w[1].n, w[1].gap, w[1].ci_eq
            ));
        }
    }
    if let Some(last) = rows.last() {
        let tol = 0.05 * value.abs() + last.ci_eq;
        if last.gap > tol {
            violations.push(format!(
                "final gap {:.6} exceeds 5% of value + CI = {:.6} at n={}",
                last.gap, tol, last.n
            ));
        }
    }
    for row in &rows {
        if row.paired_diff_mean > row.paired_diff_ci {
            violations.push(format!(
                "null-adversary cost exceeds equilibrium cost beyond CI at n={} \
                 (paired diff {:.6} > ci {:.6})",
                row.n, row.paired_diff_mean, row.paired_diff_ci
            ));
        }
    }

    Ok(ConvergenceTable {
        x0,
        rows,
        violations,
    })
}

/// One ladder row of the collapse study.
#[derive(Clone, Debug)]
pub struct CollapseRow {
    pub n: u64,
    pub replications: usize,
    /// Median over replications of the sup distance to the admission curve.
    pub median_distance: f64,
    /// Paths on which a forced rejection occurred before the horizon.
    pub tau_count: u64,
    /// tau_count / replications.
    pub tau_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

#[derive(Clone, Debug)]
pub struct CollapseTable {
    pub x0: f64,
    pub rows: Vec<CollapseRow>,
    /// Margin sweep at one fixed system size: (delta0, median distance).
    pub delta0_rows: Vec<(f64, f64)>,
    /// System size the margin sweep ran at.
    pub delta0_n: u64,
    pub violations: Vec<String>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Distance-to-curve distribution and forced-rejection frequency per ladder
/// entry, plus a sweep of the buffer margin delta0 at one system size.
pub fn collapse_experiment(
    d: &DerivedModel,
    vf: &Arc<ValueFunction>,
    plan: &ExperimentPlan,
    delta0_sweep: &[f64],
) -> Result<CollapseTable> {
    plan.validate()?;
    let x0 = starting_workload(d, vf);
    let curve = MinimizingCurve::for_a(d);
    let policy = Policy::Candidate(crate::policy::CandidatePolicy::new(d, vf.beta_eps)?);
    let adversary = Adversary::Equilibrium { vf: vf.clone() };

    let mut rows = Vec::with_capacity(plan.n_ladder.len());
    for (idx, &n) in plan.n_ladder.iter().enumerate() {
        let reps = plan.replications[idx];
        let sc = d.scale(n)?;
        let start = initial_state(&curve, &sc, x0)?;
        let per_path: Vec<(f64, bool)> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut opts =
                    RunOptions::new(plan.horizon, plan.seed, rep as u64, start.clone());
                opts.grid_points = plan.sample_grid;
                let (traj, _) = run_path(d, &sc, &policy, &adversary, &opts)?;
                let dist = collapse_distance(&traj, &curve, &sc, plan.horizon)?;
                let censored = traj.tau_forced.map(|t| t < plan.horizon).unwrap_or(false);
                Ok((dist, censored))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dists: Vec<f64> = per_path.iter().map(|p| p.0).collect();
        let tau_count = per_path.iter().filter(|p| p.1).count() as u64;
        let (wilson_lo, wilson_hi) = wilson_interval(tau_count, reps as u64);
        rows.push(CollapseRow {
            n,
            replications: reps,
            median_distance: median(&mut dists),
            tau_count,
            tau_hat: tau_count as f64 / reps as f64,
            wilson_lo,
            wilson_hi,
        });
    }

    // Margin sweep at the second-largest ladder size: wider margins leave
    // more room between the curve targets and the buffer caps, so the sup
    // distance grows with delta0 while forced rejections become rarer.
    let sweep_idx = plan.n_ladder.len().saturating_sub(2);
    let sweep_n = plan.n_ladder[sweep_idx];
    let sweep_reps = plan.replications[sweep_idx];
    let mut delta0_rows = Vec::with_capacity(delta0_sweep.len());
    for &delta0 in delta0_sweep {
        let mut params: ModelParams = d.params.clone();
        params.delta0 = delta0;
        let d_sw = DerivedModel::derive(params)?;
        let curve_sw = MinimizingCurve::for_a(&d_sw);
        let policy_sw =
            Policy::Candidate(crate::policy::CandidatePolicy::new(&d_sw, vf.beta_eps)?);
        let sc = d_sw.scale(sweep_n)?;
        let x0_sw = 0.5 * vf.beta_eps.min(d_sw.a_upper);
        let start = initial_state(&curve_sw, &sc, x0_sw)?;
        let mut dists: Vec<f64> = (0..sweep_reps)
            .into_par_iter()
            .map(|rep| {
                let mut opts =
                    RunOptions::new(plan.horizon, plan.seed, rep as u64, start.clone());
                opts.grid_points = plan.sample_grid;
                let (traj, _) = run_path(&d_sw, &sc, &policy_sw, &adversary, &opts)?;
                collapse_distance(&traj, &curve_sw, &sc, plan.horizon)
            })
            .collect::<Result<Vec<_>>>()?;
        delta0_rows.push((delta0, median(&mut dists)));
    }

    let mut violations = Vec::new();
    for w in rows.windows(2) {
        if w[1].median_distance >= w[0].median_distance {
            violations.push(format!(
                "median distance did not decrease from n={} ({:.6}) to n={} ({:.6})",
                w[0].n, w[0].median_distance, w[1].n, w[1].median_distance
            ));
        }
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        if last.tau_hat >= first.tau_hat {
            violations.push(format!(
                "forced-rejection frequency did not decrease between n={} ({:.4}) \
                 and n={} ({:.4})",
                first.n, first.tau_hat, last.n, last.tau_hat
            ));
        }
        if last.wilson_hi >= first.wilson_lo {
            violations.push(format!(
                "Wilson intervals overlap between n={} [{:.4}, {:.4}] and n={} [{:.4}, {:.4}]",
                first.n, first.wilson_lo, first.wilson_hi, last.n, last.wilson_lo,
                last.wilson_hi
            ));
        }
    }
    if let (Some(first), Some(last)) = (delta0_rows.first(), delta0_rows.last()) {
        if last.1 < first.1 {
            violations.push(format!(
                "median distance did not grow with the margin: delta0={} gives {:.6}, \
                 delta0={} gives {:.6}",
                first.0, first.1, last.0, last.1
            ));
        }
    }

    Ok(CollapseTable {
        x0,
        rows,
        delta0_rows,
        delta0_n: sweep_n,
        violations,
    })
}

/// One row of the ambiguity sweep.
#[derive(Clone, Debug)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub value_at_x0: f64,
    pub beta_eps: f64,
}

#[derive(Clone, Debug)]
pub struct EpsilonTable {
    pub x0: f64,
    pub rows: Vec<EpsilonRow>,
    /// Value at the small-ambiguity proxy point (epsilon = 1e-3).
    pub proxy_small: f64,
    /// Value at the near-risk-neutral reference (epsilon = 1e-6).
    pub proxy_reference: f64,
    pub violations: Vec<String>,
}

/// Solves the reduced game across an ambiguity ladder and reports
/// (epsilon, V(x0; epsilon), beta_epsilon) with monotonicity and
/// continuity checks. x0 is fixed from the model's own ambiguity level so
/// the value column is comparable across rows.
pub fn epsilon_sweep(
    d: &DerivedModel,
    vf_base: &ValueFunction,
    eps_list: &[f64],
    grid_points: usize,
) -> Result<EpsilonTable> {
    if eps_list.is_empty() {
        return Err(Error::Model {
            msg: "epsilon sweep needs at least one value".into(),
        });
    }
    let x0 = starting_workload(d, vf_base);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let vf = solve_value(d, eps, grid_points)?;
        rows.push(EpsilonRow {
            epsilon: eps,
            value_at_x0: vf.value_at(x0),
            beta_eps: vf.beta_eps,
        });
    }
    let proxy_small = solve_value(d, 1e-3, grid_points)?.value_at(x0);
    let proxy_reference = solve_value(d, 1e-6, grid_points)?.value_at(x0);

    let mut violations = Vec::new();
    for w in rows.windows(2) {
        if w[1].value_at_x0 >= w[0].value_at_x0 - 1e-6 {
            violations.push(format!(
                "value not strictly decreasing in epsilon: V({}) = {:.8} vs V({}) = {:.8}",
                w[0].epsilon, w[0].value_at_x0, w[1].epsilon, w[1].value_at_x0
            ));
        }
        if (w[1].beta_eps - w[0].beta_eps).abs() > 0.5 * d.b {
            violations.push(format!(
                "reflection barrier jumps between epsilon={} and epsilon={}: {:.6} to {:.6}",
                w[0].epsilon, w[1].epsilon, w[0].beta_eps, w[1].beta_eps
            ));
        }
    }
    for row in &rows {
        if row.beta_eps > d.b + 1e-12 {
            violations.push(format!(
                "beta_eps {:.6} exceeds workload bound b = {:.6} at epsilon={}",
                row.beta_eps, d.b, row.epsilon
            ));
        }
    }
    if proxy_reference.abs() > 0.0
        && ((proxy_small - proxy_reference) / proxy_reference).abs() > 0.01
    {
        violations.push(format!(
            "small-ambiguity proxy differs from reference by more than 1%: \
             {proxy_small:.8} vs {proxy_reference:.8}"
        ));
    }

    Ok(EpsilonTable {
        x0,
        rows,
        proxy_small,
        proxy_reference,
        violations,
    })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

/// Writes the two convergence arms as `convergence_equilibrium.csv` and
/// `convergence_null.csv` under `dir`, columns `n,mean,ci,value,gap`.
pub fn write_convergence_csv(
    dir: &Path,
    prov: &Provenance,
    table: &ConvergenceTable,
) -> Result<()> {
    let mut eq = prov.header_lines();
    eq.push_str(&format!("# x0: {}\n", table.x0));
    let mut null = eq.clone();
    eq.push_str("n,mean,ci,value,gap\n");
    null.push_str("n,mean,ci,value,gap\n");
    for row in &table.rows {
        eq.push_str(&format!(
            "{},{},{},{},{}\n",
            row.n, row.mean_eq, row.ci_eq, row.value, row.gap
        ));
        null.push_str(&format!(
            "{},{},{},{},{}\n",
            row.n,
            row.mean_null,
            row.ci_null,
            row.value,
            (row.mean_null - row.value).abs()
        ));
    }
    write_file(&dir.join("convergence_equilibrium.csv"), &eq)?;
    write_file(&dir.join("convergence_null.csv"), &null)?;
    Ok(())
}

/// Writes `collapse.csv` and `collapse_delta0.csv` under `dir`.
pub fn write_collapse_csv(dir: &Path, prov: &Provenance, table: &CollapseTable) -> Result<()> {
    let mut body = prov.header_lines();
    body.push_str(&format!("# x0: {}\n", table.x0));
    body.push_str("n,replications,median_distance,tau_count,tau_hat,wilson_lo,wilson_hi\n");
    for row in &table.rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.n,
            row.replications,
            row.median_distance,
            row.tau_count,
            row.tau_hat,
            row.wilson_lo,
            row.wilson_hi
        ));
    }
    write_file(&dir.join("collapse.csv"), &body)?;

    let mut sweep = prov.header_lines();
    sweep.push_str(&format!("# n: {}\n", table.delta0_n));
    sweep.push_str("delta0,median_distance\n");
    for (delta0, dist) in &table.delta0_rows {
        sweep.push_str(&format!("{delta0},{dist}\n"));
    }
    write_file(&dir.join("collapse_delta0.csv"), &sweep)?;
    Ok(())
}

/// Writes `eps_sweep.csv` under `dir`, columns `epsilon,value,beta_eps`.
pub fn write_epsilon_csv(dir: &Path, prov: &Provenance, table: &EpsilonTable) -> Result<()> {
    let mut body = prov.header_lines();
    body.push_str(&format!("# x0: {}\n", table.x0));
    body.push_str(&format!(
        "# proxy: V(1e-3) = {}, V(1e-6) = {}\n",
        table.proxy_small, table.proxy_reference
    ));
    body.push_str("epsilon,value,beta_eps\n");
    for row in &table.rows {
        body.push_str(&format!(
            "{},{},{}\n",
            row.epsilon, row.value_at_x0, row.beta_eps
        ));
    }
    write_file(&dir.join("eps_sweep.csv"), &body)
}

/// Writes one cost-sample batch, columns
/// `stream,n,policy,adversary,holding,rejection,kl_total,total,tail`.
pub fn write_cost_samples_csv(
    path: &Path,
    prov: &Provenance,
    d: &DerivedModel,
    n: u64,
    policy: &Policy,
    adversary: &Adversary,
    samples: &[CostSample],
) -> Result<()> {
    let mut body = prov.header_lines();
    body.push_str("stream,n,policy,adversary,holding,rejection,kl_total,total,tail\n");
    let policy_label = policy.label();
    let adversary_label = adversary.label();
    for (stream, s) in samples.iter().enumerate() {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            stream,
            n,
            policy_label,
            adversary_label,
            s.holding,
            s.rejection,
            CostSample::kl_total(&s.kl1, &s.kl2, d),
            s.total,
            s.horizon_tail
        ));
    }
    write_file(path, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DerivedModel;
    use crate::testutil::three_class;

    fn small_plan(seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            n_ladder: vec![25, 100],
            replications: vec![100, 100],
            horizon: 1.5,
            seed,
            sample_grid: 61,
        }
    }

    fn solved() -> (DerivedModel, Arc<ValueFunction>) {
        let d = DerivedModel::derive(three_class()).unwrap();
        let vf = Arc::new(solve_value(&d, d.epsilon, 801).unwrap());
        (d, vf)
    }

    #[test]
    fn plan_validation_rejects_bad_ladders() {
        let mut plan = ExperimentPlan::desk(1);
        plan.validate().unwrap();
        plan.n_ladder = vec![100, 25];
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::desk(1);
        plan.replications = vec![400];
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::desk(1);
        plan.replications[0] = 50;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn initial_state_sits_on_the_curve() {
        let (d, vf) = solved();
        let curve = MinimizingCurve::for_a(&d);
        let sc = d.scale(400).unwrap();
        let x0 = starting_workload(&d, &vf);
        let start = initial_state(&curve, &sc, x0).unwrap();
        // The rounded state's workload is within one grid step of x0.
        let back = sc.workload(&start);
        assert!(
            (back - x0).abs() < 3.0 / sc.sqrt_n,
            "workload {back} too far from {x0}"
        );
        for (i, &c) in start.iter().enumerate() {
            assert!(c <= sc.capacity[i]);
        }
    }

    #[test]
    fn run_cell_is_reproducible_and_order_fixed() {
        let (d, vf) = solved();
        let policy = Policy::Candidate(crate::policy::CandidatePolicy::new(&d, vf.beta_eps).unwrap());
        let adv = Adversary::Equilibrium { vf: vf.clone() };
        let curve = MinimizingCurve::for_a(&d);
        let sc = d.scale(25).unwrap();
        let start = initial_state(&curve, &sc, starting_workload(&d, &vf)).unwrap();
        let a = run_cell(&d, 25, &policy, &adv, &start, 1.0, 7, 64).unwrap();
        let b = run_cell(&d, 25, &policy, &adv, &start, 1.0, 7, 64).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.totals.len(), 64);
        for (x, y) in a.totals.iter().zip(&b.totals) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let c = run_cell(&d, 25, &policy, &adv, &start, 1.0, 8, 64).unwrap();
        assert_ne!(a.mean.to_bits(), c.mean.to_bits());
    }

    #[test]
    fn convergence_table_has_one_row_per_ladder_entry() {
        let (d, vf) = solved();
        let plan = small_plan(3);
        let table = convergence_experiment(&d, &vf, &plan).unwrap();
        assert_eq!(table.rows.len(), 2);
        for row in &table.rows {
            assert!(row.ci_eq > 0.0);
            assert!(row.value > 0.0);
            assert!(row.gap >= 0.0);
        }
    }

    #[test]
    fn csv_output_is_byte_stable() {
        let (d, vf) = solved();
        let plan = small_plan(5);
        let table = convergence_experiment(&d, &vf, &plan).unwrap();
        let prov = Provenance::new("test-config", plan.seed);
        let dir1 = std::env::temp_dir().join("rqlab-harness-csv-1");
        let dir2 = std::env::temp_dir().join("rqlab-harness-csv-2");
        write_convergence_csv(&dir1, &prov, &table).unwrap();
        let table2 = convergence_experiment(&d, &vf, &plan).unwrap();
        write_convergence_csv(&dir2, &prov, &table2).unwrap();
        for name in ["convergence_equilibrium.csv", "convergence_null.csv"] {
            let a = fs::read(dir1.join(name)).unwrap();
            let b = fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let text = fs::read_to_string(dir1.join("convergence_equilibrium.csv")).unwrap();
        assert!(text.starts_with("# config_sha256: "));
        assert!(text.contains("# seed: 5\n"));
        assert!(text.contains("n,mean,ci,value,gap\n"));
    }

    #[test]
    fn provenance_hash_matches_reference_vector() {
        // SHA-256 of the empty string, a frozen reference vector.
        let p = Provenance::new("", 0);
        assert_eq!(
            p.config_sha256,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn epsilon_sweep_reports_rows_and_barrier_bound() {
        let (d, vf) = solved();
        let table = epsilon_sweep(&d, &vf, &[0.25, 1.0], 801).unwrap();
        assert_eq!(table.rows.len(), 2);
        for row in &table.rows {
            assert!(row.beta_eps > 0.0 && row.beta_eps <= d.b + 1e-12);
            assert!(row.value_at_x0.is_finite());
        }
        // The displayed dynamics make the value grow with the ambiguity
        // level, so the decreasing-in-epsilon check reports a violation.
        assert!(table
            .violations
            .iter()
            .any(|v| v.contains("not strictly decreasing")));
    }
}
