//! Laboratory driver: solves the workload game, simulates the n-th system,
//! runs the experiment tables, and dumps curves, all from a model file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 an experiment check failed.

use std::path::{Path, PathBuf};
use std::process::exit;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use rqlab_core::adversary::Adversary;
use rqlab_core::error::{Error, Result};
use rqlab_core::harness::{
    collapse_experiment, convergence_experiment, epsilon_sweep, initial_state, run_cell,
    starting_workload, write_collapse_csv, write_convergence_csv, write_cost_samples_csv,
    write_epsilon_csv, ExperimentPlan, Provenance,
};
use rqlab_core::model::{parse_config, DerivedModel};
use rqlab_core::policy::{CandidatePolicy, Policy};
use rqlab_core::reduction::{HoldingCost, MinimizingCurve};
use rqlab_core::rsdg::{mc_game_value, solve_value, ValueFunction};

#[derive(Parser)]
#[command(
    name = "rqlab",
    about = "Robust queueing control laboratory",
    version,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Model file ([model] section, key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base RNG seed; replications use one stream each.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Grid nodes for the value-function solve.
    #[arg(long, default_value_t = 2001)]
    grid: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the workload game and write the value function (CSV + JSON).
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the model's ambiguity level.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Simulate one (n, policy, adversary) cell and write per-replication costs.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// System size.
        #[arg(long, default_value_t = 400)]
        n: u64,
        /// Number of replications.
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// null | equilibrium | shift:C1,C2 (broadcast) or shift:<2I values>.
        #[arg(long, default_value = "equilibrium")]
        adversary: String,
        /// candidate | admit-all | static:ORDER (0-based config labels).
        #[arg(long, default_value = "candidate")]
        policy: String,
        /// Zero any scaled perturbation whose magnitude exceeds this bound.
        #[arg(long)]
        truncate: Option<f64>,
        /// Simulation horizon in diffusion time.
        #[arg(long, default_value_t = 9.0)]
        horizon: f64,
        /// Starting workload; defaults to half of min(beta_eps, curve end).
        #[arg(long)]
        x0: Option<f64>,
    },
    /// Run a full experiment table.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCmd,
    },
    /// Cross-check a solved value by independent means.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
    /// Dump reduction curves for plotting.
    Curve {
        #[command(subcommand)]
        which: CurveCmd,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Ladder study: candidate-policy cost vs the solved value.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        /// Simulation horizon in diffusion time.
        #[arg(long, default_value_t = 9.0)]
        horizon: f64,
    },
    /// Ladder study: distance to the admission curve and forced rejections.
    Collapse {
        #[command(flatten)]
        common: CommonArgs,
        /// Simulation horizon in diffusion time. The default is short on
        /// purpose: the tracking statement concerns the window before the
        /// first forced rejection, and long runs spend most of their time
        /// pinned at the overload cutoff where the supremum saturates.
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
    },
    /// Ambiguity ladder: V(x0; eps) and the barrier across eps.
    EpsSweep {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Monte-Carlo estimate of the reduced game cost vs the solved value.
    McGame {
        #[command(flatten)]
        common: CommonArgs,
        /// Starting workload; defaults to beta_eps / 2.
        #[arg(long)]
        x0: Option<f64>,
        /// Number of Monte-Carlo replications.
        #[arg(long, default_value_t = 2000)]
        reps: u64,
        /// Euler step; defaults to 1e-6 (b / sigma)^2, small enough that the
        /// O(sqrt(dt)) reflection bias stays inside the half-width budget.
        #[arg(long)]
        dt: Option<f64>,
        /// Path horizon in diffusion time.
        #[arg(long, default_value_t = 12.0)]
        horizon: f64,
    },
}

#[derive(Subcommand)]
enum CurveCmd {
    /// Write (x, gamma_a per class, h, h_a) on a uniform workload grid.
    Dump {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of grid points on [0, b].
        #[arg(long, default_value_t = 1001)]
        points: usize,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Io(_)
        | Error::Model { .. }
        | Error::Domain { .. }
        | Error::PolicyInfeasible { .. } => 2,
        Error::StepTooLarge { .. }
        | Error::NoConvergence { .. }
        | Error::NonFiniteIntensity { .. }
        | Error::IntensityNonpositive { .. }
        | Error::MissingIntensityLog => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(exit_code(&e));
        }
    }
}

/// Loads the model file, keeping the raw text for provenance hashing.
fn load(config: &Path) -> Result<(DerivedModel, String)> {
    let text = std::fs::read_to_string(config)?;
    let params = parse_config(&text)?;
    Ok((DerivedModel::derive(params)?, text))
}

/// Maps config-order class labels to the internal (priority-sorted) order.
fn internal_of_config(d: &DerivedModel) -> Vec<usize> {
    let mut inv = vec![0usize; d.num_classes()];
    for (j, &orig) in d.original_label.iter().enumerate() {
        inv[orig] = j;
    }
    inv
}

fn config_err(key: &str, msg: String) -> Error {
    Error::Config {
        line: 0,
        key: key.to_string(),
        msg,
    }
}

fn parse_adversary(spec: &str, d: &DerivedModel, vf: &Arc<ValueFunction>) -> Result<Adversary> {
    let k = d.num_classes();
    if spec == "null" {
        return Ok(Adversary::Null);
    }
    if spec == "equilibrium" {
        return Ok(Adversary::Equilibrium { vf: vf.clone() });
    }
    if let Some(rest) = spec.strip_prefix("shift:") {
        let vals: Vec<f64> = rest
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| config_err("adversary", format!("bad number `{p}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let (c1, c2) = if vals.len() == 2 {
            (vec![vals[0]; k], vec![vals[1]; k])
        } else if vals.len() == 2 * k {
            // Per-class values in config order; reorder to internal labels.
            let inv = internal_of_config(d);
            let mut c1 = vec![0.0; k];
            let mut c2 = vec![0.0; k];
            for orig in 0..k {
                c1[inv[orig]] = vals[orig];
                c2[inv[orig]] = vals[k + orig];
            }
            (c1, c2)
        } else {
            return Err(config_err(
                "adversary",
                format!(
                    "shift takes 2 values (broadcast) or {} (per class, arrivals then services); got {}",
                    2 * k,
                    vals.len()
                ),
            ));
        };
        return Ok(Adversary::ConstantShift { c1, c2 });
    }
    Err(config_err(
        "adversary",
        format!("unknown adversary `{spec}`; use null, equilibrium, or shift:..."),
    ))
}

fn parse_policy(spec: &str, d: &DerivedModel, beta_eps: f64) -> Result<Policy> {
    if spec == "candidate" {
        return Ok(Policy::Candidate(CandidatePolicy::new(d, beta_eps)?));
    }
    if spec == "admit-all" {
        return Ok(Policy::AdmitAll);
    }
    if let Some(rest) = spec.strip_prefix("static:") {
        let order: Vec<usize> = rest
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| config_err("policy", format!("bad class index `{p}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let inv = internal_of_config(d);
        let mapped: Vec<usize> = order
            .iter()
            .map(|&orig| {
                inv.get(orig).copied().ok_or_else(|| {
                    config_err("policy", format!("class index {orig} out of range"))
                })
            })
            .collect::<Result<_>>()?;
        return Policy::static_priority(mapped, d.num_classes());
    }
    Err(config_err(
        "policy",
        format!("unknown policy `{spec}`; use candidate, admit-all, or static:ORDER"),
    ))
}

fn report_violations(violations: &[String]) -> i32 {
    if violations.is_empty() {
        println!("all checks passed");
        return 0;
    }
    for v in violations {
        eprintln!("check failed: {v}");
    }
    4
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Solve { common, epsilon } => {
            let (d, text) = load(&common.config)?;
            let eps = epsilon.unwrap_or(d.epsilon);
            let vf = solve_value(&d, eps, common.grid)?;
            vf.save(&common.out, "value")?;
            let prov = Provenance::new(&text, common.seed);
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("provenance.txt"), prov.header_lines())?;
            println!("epsilon      = {}", vf.epsilon);
            println!("beta_eps     = {}", vf.beta_eps);
            println!("residual_max = {:.3e}", vf.residual_max);
            println!("V(0)         = {}", vf.value_at(0.0));
            println!("V(beta/2)    = {}", vf.value_at(0.5 * vf.beta_eps));
            println!("V(beta)      = {}", vf.value_at(vf.beta_eps));
            println!("wrote {}/value.csv and value.json", common.out.display());
            Ok(0)
        }
        Command::Simulate {
            common,
            n,
            reps,
            adversary,
            policy,
            truncate,
            horizon,
            x0,
        } => {
            let (d, text) = load(&common.config)?;
            let vf = Arc::new(solve_value(&d, d.epsilon, common.grid)?);
            let mut adv = parse_adversary(&adversary, &d, &vf)?;
            if let Some(k) = truncate {
                adv = Adversary::truncated(adv, k)?;
            }
            let pol = parse_policy(&policy, &d, vf.beta_eps)?;
            let sc = d.scale(n)?;
            adv.validate(&d, &sc)?;
            let curve = MinimizingCurve::for_a(&d);
            let w0 = x0.unwrap_or_else(|| starting_workload(&d, &vf));
            let start = initial_state(&curve, &sc, w0)?;
            let cell = run_cell(&d, n, &pol, &adv, &start, horizon, common.seed, reps)?;
            let mut prov = Provenance::new(&text, common.seed);
            prov.push_policy_echo(&d, vf.beta_eps);
            let path = common.out.join("cost_samples.csv");
            write_cost_samples_csv(&path, &prov, &d, n, &pol, &adv, &cell.samples)?;
            println!(
                "n = {n}  policy = {}  adversary = {}  replications = {reps}",
                pol.label(),
                adv.label()
            );
            println!("start workload = {w0}  counts = {start:?}  horizon = {horizon}");
            println!(
                "discounted cost = {:.6} +- {:.6} (95% CI), tail bound {:.3e}",
                cell.mean, cell.ci_half_width, cell.mean_tail
            );
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Experiment { which } => match which {
            ExperimentCmd::Convergence { common, horizon } => {
                let (d, text) = load(&common.config)?;
                let vf = Arc::new(solve_value(&d, d.epsilon, common.grid)?);
                let mut plan = ExperimentPlan::desk(common.seed);
                plan.horizon = horizon;
                let table = convergence_experiment(&d, &vf, &plan)?;
                let mut prov = Provenance::new(&text, common.seed);
                prov.push_policy_echo(&d, vf.beta_eps);
                write_convergence_csv(&common.out, &prov, &table)?;
                println!("x0 = {}  V(x0) = {}", table.x0, vf.value_at(table.x0));
                println!(
                    "{:>6} {:>12} {:>10} {:>12} {:>10} {:>10}",
                    "n", "mean_eq", "ci_eq", "mean_null", "ci_null", "gap"
                );
                for row in &table.rows {
                    println!(
                        "{:>6} {:>12.5} {:>10.5} {:>12.5} {:>10.5} {:>10.5}",
                        row.n, row.mean_eq, row.ci_eq, row.mean_null, row.ci_null, row.gap
                    );
                }
                println!("wrote convergence CSVs under {}", common.out.display());
                Ok(report_violations(&table.violations))
            }
            ExperimentCmd::Collapse { common, horizon } => {
                let (d, text) = load(&common.config)?;
                let vf = Arc::new(solve_value(&d, d.epsilon, common.grid)?);
                let mut plan = ExperimentPlan::desk(common.seed);
                plan.horizon = horizon;
                let table = collapse_experiment(&d, &vf, &plan, &[0.2, 0.5, 1.0])?;
                let mut prov = Provenance::new(&text, common.seed);
                prov.push_policy_echo(&d, vf.beta_eps);
                write_collapse_csv(&common.out, &prov, &table)?;
                println!(
                    "{:>6} {:>10} {:>16} {:>10} {:>9} {:>9}",
                    "n", "reps", "median_distance", "tau_hat", "wilson_lo", "wilson_hi"
                );
                for row in &table.rows {
                    println!(
                        "{:>6} {:>10} {:>16.6} {:>10.4} {:>9.4} {:>9.4}",
                        row.n,
                        row.replications,
                        row.median_distance,
                        row.tau_hat,
                        row.wilson_lo,
                        row.wilson_hi
                    );
                }
                println!("margin sweep at n = {}:", table.delta0_n);
                for (delta0, dist) in &table.delta0_rows {
                    println!("  delta0 = {delta0}: median distance {dist:.6}");
                }
                println!("wrote collapse CSVs under {}", common.out.display());
                Ok(report_violations(&table.violations))
            }
            ExperimentCmd::EpsSweep { common } => {
                let (d, text) = load(&common.config)?;
                let vf = solve_value(&d, d.epsilon, common.grid)?;
                let table = epsilon_sweep(&d, &vf, &[0.25, 0.5, 1.0, 2.0], common.grid)?;
                let prov = Provenance::new(&text, common.seed);
                write_epsilon_csv(&common.out, &prov, &table)?;
                println!("x0 = {}", table.x0);
                println!("{:>8} {:>14} {:>10}", "epsilon", "V(x0)", "beta_eps");
                for row in &table.rows {
                    println!(
                        "{:>8} {:>14.8} {:>10.6}",
                        row.epsilon, row.value_at_x0, row.beta_eps
                    );
                }
                println!(
                    "small-ambiguity proxy: V(1e-3) = {:.8}, V(1e-6) = {:.8}",
                    table.proxy_small, table.proxy_reference
                );
                println!("wrote eps_sweep.csv under {}", common.out.display());
                Ok(report_violations(&table.violations))
            }
        },
        Command::Oracle { which } => match which {
            OracleCmd::McGame {
                common,
                x0,
                reps,
                dt,
                horizon,
            } => {
                let (d, _) = load(&common.config)?;
                let vf = solve_value(&d, d.epsilon, common.grid)?;
                let w0 = x0.unwrap_or(0.5 * vf.beta_eps);
                let step = dt.unwrap_or_else(|| 1e-6 * (d.b / d.sigma).powi(2));
                let est = mc_game_value(&d, &vf, w0, step, horizon, reps, common.seed)?;
                let value = vf.value_at(w0);
                let diff = (est.mean - value).abs();
                let budget = est.half_width + est.tail_bound;
                println!("x0 = {w0}  dt = {step}  horizon = {horizon}  reps = {reps}");
                println!(
                    "monte-carlo  = {:.6} +- {:.6} (95% CI), tail bound {:.3e}",
                    est.mean, est.half_width, est.tail_bound
                );
                println!("solved value = {value:.6}");
                println!("difference   = {diff:.6} vs budget {budget:.6}");
                if diff <= budget {
                    println!("check passed");
                    Ok(0)
                } else {
                    eprintln!("check failed: difference exceeds CI + tail budget");
                    Ok(4)
                }
            }
        },
        Command::Curve { which } => match which {
            CurveCmd::Dump { common, points } => {
                let (d, text) = load(&common.config)?;
                if points < 2 {
                    return Err(config_err("points", "need at least 2 grid points".into()));
                }
                let curve = MinimizingCurve::for_a(&d);
                let hc = HoldingCost::new(&d);
                let prov = Provenance::new(&text, common.seed);
                let mut body = prov.header_lines();
                body.push_str("# class columns are in internal (priority-sorted) order;\n");
                body.push_str(&format!(
                    "# internal -> config label: {:?}\n",
                    d.original_label
                ));
                let k = d.num_classes();
                body.push_str("x");
                for j in 1..=k {
                    body.push_str(&format!(",gamma_a_{j}"));
                }
                body.push_str(",h,h_a\n");
                let dxg = d.b / (points as f64 - 1.0);
                for p in 0..points {
                    let x = if p == points - 1 { d.b } else { dxg * p as f64 };
                    let g = curve.gamma(x)?;
                    let ha: f64 = (0..k).map(|i| d.params.h_hat[i] * g[i]).sum();
                    body.push_str(&format!("{x}"));
                    for gi in &g {
                        body.push_str(&format!(",{gi}"));
                    }
                    body.push_str(&format!(",{},{ha}\n", hc.eval_clamped(x)));
                }
                std::fs::create_dir_all(&common.out)?;
                let path = common.out.join("curve.csv");
                std::fs::write(&path, body)?;
                println!(
                    "wrote {} ({} rows, b = {}, curve end = {})",
                    path.display(),
                    points,
                    d.b,
                    curve.x_full
                );
                Ok(0)
            }
        },
    }
}
