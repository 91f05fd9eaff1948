//! Model parameters for a critically loaded multiclass single-server queue,
//! the first- and second-order quantities derived from them, and the n-th
//! system obtained by diffusion scaling.
//!
//! A model consists of I customer classes with base rates (lambda_i, mu_i)
//! satisfying sum lambda_i / mu_i = 1, second-order rate perturbations
//! (lambda_hat_i, mu_hat_i), scaled buffer sizes b_hat_i, holding costs
//! h_hat_i, rejection costs r_hat_i, ambiguity weights (kappa1_i, kappa2_i),
//! a discount factor varrho and a buffer margin delta0. The n-th system runs
//! with rates lambda_i n + lambda_hat_i sqrt(n), mu_i n + mu_hat_i sqrt(n)
//! and integer buffer capacities floor(b_hat_i sqrt(n)).
//!
//! Classes are relabeled once at load time so that h_hat_i * mu_i is
//! nonincreasing; the last class is then the cheapest to hold per unit of
//! workload and receives the lowest service priority. The permutation is
//! recorded so outputs can report original labels.

use crate::error::{Error, Result};
use std::path::Path;

/// Raw per-class parameters in internal (relabeled) order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub kappa1: Vec<f64>,
    pub kappa2: Vec<f64>,
    pub varrho: f64,
    pub delta0: f64,
}

impl ModelParams {
    pub fn num_classes(&self) -> usize {
        self.lambda.len()
    }
}

/// Tolerance on the critical-load condition sum lambda_i/mu_i = 1.
const CRITICAL_LOAD_TOL: f64 = 1e-9;

/// Model quantities that do not depend on n.
///
/// All per-class vectors are in internal order: h_hat[i] * mu[i] is
/// nonincreasing in i. `original_label[i]` gives the position the class had
/// in the input file (0-based).
#[derive(Clone, Debug)]
pub struct DerivedModel {
    pub params: ModelParams,
    pub original_label: Vec<usize>,
    /// Traffic intensities lambda_i / mu_i; they sum to 1.
    pub rho: Vec<f64>,
    /// Expected workload contributed by one class-i customer: 1 / mu_i.
    pub theta: Vec<f64>,
    /// Per-class diffusion coefficients sqrt(2 lambda_i).
    pub sigma_hat: Vec<f64>,
    /// Workload diffusion coefficient: Euclidean norm of theta * sigma_hat.
    pub sigma: f64,
    /// Second-order per-class drift lambda_hat_i - rho_i mu_hat_i.
    pub m_hat: Vec<f64>,
    /// Workload drift theta . m_hat.
    pub m: f64,
    /// Workload capacity theta . b_hat.
    pub b: f64,
    /// Per-class ambiguity level (kappa1_i + kappa2_i) / 2.
    pub eps_hat: Vec<f64>,
    /// Aggregate ambiguity parameter: weighted average of eps_hat with
    /// weights (theta_i sigma_hat_i)^2.
    pub epsilon: f64,
    /// The class with the smallest r_hat_i * mu_i (ties to the lowest index);
    /// the cheapest class to reject per unit of workload.
    pub i_star: usize,
    /// Rejection cost per unit of workload: r_hat[i_star] * mu[i_star].
    pub r: f64,
    /// Curve fill targets a_hat_i = b_hat_i - delta0.
    pub a_hat: Vec<f64>,
    /// Workload level theta . a_hat at which every fill target is reached.
    pub a_upper: f64,
}

/// Sums theta_i * levels_i from the last class to the first.
///
/// The minimizing-curve breakpoints are built by the same fold, so totals
/// computed here match curve breakpoints bit for bit.
pub fn weighted_total(theta: &[f64], levels: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in (0..theta.len()).rev() {
        acc += theta[i] * levels[i];
    }
    acc
}

impl DerivedModel {
    /// Validates the parameters, relabels classes so that h_hat_i * mu_i is
    /// nonincreasing (stable among ties) and computes all derived scalars.
    /// Pure: identical inputs give bit-identical outputs.
    pub fn derive(input: ModelParams) -> Result<Self> {
        validate(&input)?;

        let k = input.num_classes();
        let mut order: Vec<usize> = (0..k).collect();
        // Stable sort keeps the input order among equal h_hat * mu values.
        order.sort_by(|&a, &b| {
            let ka = input.h_hat[a] * input.mu[a];
            let kb = input.h_hat[b] * input.mu[b];
            kb.partial_cmp(&ka).expect("finite cost keys")
        });
        let perm = |v: &[f64]| -> Vec<f64> { order.iter().map(|&i| v[i]).collect() };
        let params = ModelParams {
            lambda: perm(&input.lambda),
            mu: perm(&input.mu),
            lambda_hat: perm(&input.lambda_hat),
            mu_hat: perm(&input.mu_hat),
            b_hat: perm(&input.b_hat),
            h_hat: perm(&input.h_hat),
            r_hat: perm(&input.r_hat),
            kappa1: perm(&input.kappa1),
            kappa2: perm(&input.kappa2),
            varrho: input.varrho,
            delta0: input.delta0,
        };

        let rho: Vec<f64> = (0..k).map(|i| params.lambda[i] / params.mu[i]).collect();
        let theta: Vec<f64> = params.mu.iter().map(|&mu| 1.0 / mu).collect();
        let sigma_hat: Vec<f64> = params.lambda.iter().map(|&l| (2.0 * l).sqrt()).collect();
        let sigma2: f64 = (0..k).map(|i| (theta[i] * sigma_hat[i]).powi(2)).sum();
        let sigma = sigma2.sqrt();
        let m_hat: Vec<f64> = (0..k)
            .map(|i| params.lambda_hat[i] - rho[i] * params.mu_hat[i])
            .collect();
        let m: f64 = (0..k).map(|i| theta[i] * m_hat[i]).sum();
        let b = weighted_total(&theta, &params.b_hat);
        let eps_hat: Vec<f64> = (0..k)
            .map(|i| 0.5 * (params.kappa1[i] + params.kappa2[i]))
            .collect();
        let epsilon: f64 = (0..k)
            .map(|i| (theta[i] * sigma_hat[i]).powi(2) * eps_hat[i])
            .sum::<f64>()
            / sigma2;
        let mut i_star = 0;
        for i in 1..k {
            if params.r_hat[i] * params.mu[i] < params.r_hat[i_star] * params.mu[i_star] {
                i_star = i;
            }
        }
        let r = params.r_hat[i_star] * params.mu[i_star];
        let a_hat: Vec<f64> = params.b_hat.iter().map(|&bh| bh - params.delta0).collect();
        let a_upper = weighted_total(&theta, &a_hat);

        Ok(DerivedModel {
            original_label: order,
            rho,
            theta,
            sigma_hat,
            sigma,
            m_hat,
            m,
            b,
            eps_hat,
            epsilon,
            i_star,
            r,
            a_hat,
            a_upper,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    /// Builds the n-th system.
    pub fn scale(&self, n: u64) -> Result<ScaledModel> {
        ScaledModel::new(self, n)
    }
}

fn validate(p: &ModelParams) -> Result<()> {
    let k = p.num_classes();
    if k == 0 {
        return Err(Error::Model {
            msg: "at least one class is required".into(),
        });
    }
    let lens = [
        ("lambda", p.lambda.len()),
        ("mu", p.mu.len()),
        ("lambda_hat", p.lambda_hat.len()),
        ("mu_hat", p.mu_hat.len()),
        ("b_hat", p.b_hat.len()),
        ("h_hat", p.h_hat.len()),
        ("r_hat", p.r_hat.len()),
        ("kappa1", p.kappa1.len()),
        ("kappa2", p.kappa2.len()),
    ];
    for (name, len) in lens {
        if len != k {
            return Err(Error::Model {
                msg: format!("{name} has length {len}, expected {k}"),
            });
        }
    }
    for i in 0..k {
        let positives = [
            ("lambda", p.lambda[i]),
            ("mu", p.mu[i]),
            ("b_hat", p.b_hat[i]),
            ("h_hat", p.h_hat[i]),
            ("r_hat", p.r_hat[i]),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Model {
                    msg: format!("{name}[{i}] = {v} must be positive and finite"),
                });
            }
        }
        for (name, v) in [("kappa1", p.kappa1[i]), ("kappa2", p.kappa2[i])] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Model {
                    msg: format!("{name}[{i}] = {v} must be nonnegative and finite"),
                });
            }
        }
        if p.kappa1[i] + p.kappa2[i] <= 0.0 {
            return Err(Error::Model {
                msg: format!("kappa1[{i}] + kappa2[{i}] must be positive"),
            });
        }
        for (name, v) in [("lambda_hat", p.lambda_hat[i]), ("mu_hat", p.mu_hat[i])] {
            if !v.is_finite() {
                return Err(Error::Model {
                    msg: format!("{name}[{i}] = {v} must be finite"),
                });
            }
        }
        if p.delta0 >= p.b_hat[i] {
            return Err(Error::Model {
                msg: format!(
                    "delta0 = {} must be smaller than every buffer size; b_hat[{i}] = {}",
                    p.delta0, p.b_hat[i]
                ),
            });
        }
    }
    if !(p.varrho > 0.0) || !p.varrho.is_finite() {
        return Err(Error::Model {
            msg: format!("varrho = {} must be positive and finite", p.varrho),
        });
    }
    if !(p.delta0 >= 0.0) || !p.delta0.is_finite() {
        return Err(Error::Model {
            msg: format!("delta0 = {} must be nonnegative and finite", p.delta0),
        });
    }
    let load: f64 = (0..k).map(|i| p.lambda[i] / p.mu[i]).sum();
    if (load - 1.0).abs() > CRITICAL_LOAD_TOL {
        return Err(Error::Model {
            msg: format!("critical load violated: sum lambda_i/mu_i = {load}, expected 1"),
        });
    }
    Ok(())
}

/// The n-th system: prelimit rates, integer buffer capacities and the
/// n-dependent workload weights.
#[derive(Clone, Debug)]
pub struct ScaledModel {
    pub n: u64,
    pub sqrt_n: f64,
    pub inv_sqrt_n: f64,
    /// Arrival rates lambda_i n + lambda_hat_i sqrt(n).
    pub lambda_n: Vec<f64>,
    /// Service rates mu_i n + mu_hat_i sqrt(n).
    pub mu_n: Vec<f64>,
    /// Integer buffer capacities floor(b_hat_i sqrt(n)).
    pub capacity: Vec<u64>,
    /// Workload weights theta_n_i = n / mu_n_i; converge to theta_i.
    pub theta_n: Vec<f64>,
}

impl ScaledModel {
    pub fn new(d: &DerivedModel, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Model {
                msg: "n must be positive".into(),
            });
        }
        let k = d.num_classes();
        let nf = n as f64;
        let sqrt_n = nf.sqrt();
        let mut lambda_n = Vec::with_capacity(k);
        let mut mu_n = Vec::with_capacity(k);
        let mut capacity = Vec::with_capacity(k);
        let mut theta_n = Vec::with_capacity(k);
        for i in 0..k {
            let ln = d.params.lambda[i] * nf + d.params.lambda_hat[i] * sqrt_n;
            let mn = d.params.mu[i] * nf + d.params.mu_hat[i] * sqrt_n;
            if ln <= 0.0 {
                return Err(Error::Model {
                    msg: format!("arrival rate for class {i} is {ln} <= 0 at n = {n}"),
                });
            }
            if mn <= 0.0 {
                return Err(Error::Model {
                    msg: format!("service rate for class {i} is {mn} <= 0 at n = {n}"),
                });
            }
            let cap = (d.params.b_hat[i] * sqrt_n).floor() as u64;
            if cap == 0 {
                return Err(Error::Model {
                    msg: format!("buffer for class {i} holds no customers at n = {n}"),
                });
            }
            lambda_n.push(ln);
            mu_n.push(mn);
            capacity.push(cap);
            theta_n.push(nf / mn);
        }
        Ok(ScaledModel {
            n,
            sqrt_n,
            inv_sqrt_n: 1.0 / sqrt_n,
            lambda_n,
            mu_n,
            capacity,
            theta_n,
        })
    }

    /// Diffusion-scaled workload of an integer queue-length vector:
    /// sum theta_n_i X_i / sqrt(n).
    pub fn workload(&self, x: &[u64]) -> f64 {
        let mut w = 0.0;
        for i in (0..x.len()).rev() {
            w += self.theta_n[i] * (x[i] as f64);
        }
        w * self.inv_sqrt_n
    }
}

/// Parses the plain-text model format:
///
/// ```text
/// [model]
/// I = 3
/// lambda = 0.9, 0.4, 0.45
/// varrho = 1.0
/// ```
///
/// One `[model]` section, `key = value` lines, arrays comma-separated and of
/// length I, `#` starts a comment. Errors report the line and key.
pub fn parse_config(text: &str) -> Result<ModelParams> {
    let mut in_model = false;
    let mut count: Option<(usize, usize)> = None; // (I, line it was set on)
    let mut arrays: Vec<(String, usize, Vec<f64>)> = Vec::new();
    let mut scalars: Vec<(String, usize, f64)> = Vec::new();

    const ARRAY_KEYS: [&str; 9] = [
        "lambda",
        "mu",
        "lambda_hat",
        "mu_hat",
        "b_hat",
        "h_hat",
        "r_hat",
        "kappa1",
        "kappa2",
    ];
    const SCALAR_KEYS: [&str; 2] = ["varrho", "delta0"];

    let err = |line: usize, key: &str, msg: String| Error::Config {
        line,
        key: key.to_string(),
        msg,
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if line == "[model]" {
                if in_model {
                    return Err(err(lineno, "model", "duplicate [model] section".into()));
                }
                in_model = true;
                continue;
            }
            return Err(err(
                lineno,
                line.trim_matches(['[', ']']),
                "unknown section; only [model] is recognized".into(),
            ));
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(lineno, line, "expected `key = value`".into()));
        };
        let key = key.trim();
        let value = value.trim();
        if !in_model {
            return Err(err(lineno, key, "key appears before the [model] section".into()));
        }
        if key == "I" {
            if count.is_some() {
                return Err(err(lineno, key, "duplicate key".into()));
            }
            let n: usize = value
                .parse()
                .map_err(|e| err(lineno, key, format!("not a positive integer: {e}")))?;
            if n == 0 {
                return Err(err(lineno, key, "I must be at least 1".into()));
            }
            count = Some((n, lineno));
        } else if ARRAY_KEYS.contains(&key) {
            if arrays.iter().any(|(k, _, _)| k == key) {
                return Err(err(lineno, key, "duplicate key".into()));
            }
            let mut vals = Vec::new();
            for part in value.split(',') {
                let part = part.trim();
                let v: f64 = part
                    .parse()
                    .map_err(|e| err(lineno, key, format!("bad number `{part}`: {e}")))?;
                vals.push(v);
            }
            arrays.push((key.to_string(), lineno, vals));
        } else if SCALAR_KEYS.contains(&key) {
            if scalars.iter().any(|(k, _, _)| k == key) {
                return Err(err(lineno, key, "duplicate key".into()));
            }
            let v: f64 = value
                .parse()
                .map_err(|e| err(lineno, key, format!("bad number `{value}`: {e}")))?;
            scalars.push((key.to_string(), lineno, v));
        } else {
            return Err(err(lineno, key, "unknown key".into()));
        }
    }

    if !in_model {
        return Err(err(0, "model", "missing [model] section".into()));
    }
    let (k, _) = count.ok_or_else(|| err(0, "I", "missing key".into()))?;
    let array = |name: &str| -> Result<Vec<f64>> {
        match arrays.iter().find(|(key, _, _)| key == name) {
            Some((_, line, vals)) => {
                if vals.len() != k {
                    Err(err(
                        *line,
                        name,
                        format!("expected {k} comma-separated values, found {}", vals.len()),
                    ))
                } else {
                    Ok(vals.clone())
                }
            }
            None => Err(err(0, name, "missing key".into())),
        }
    };
    let scalar = |name: &str| -> Result<f64> {
        scalars
            .iter()
            .find(|(key, _, _)| key == name)
            .map(|&(_, _, v)| v)
            .ok_or_else(|| err(0, name, "missing key".into()))
    };

    Ok(ModelParams {
        lambda: array("lambda")?,
        mu: array("mu")?,
        lambda_hat: array("lambda_hat")?,
        mu_hat: array("mu_hat")?,
        b_hat: array("b_hat")?,
        h_hat: array("h_hat")?,
        r_hat: array("r_hat")?,
        kappa1: array("kappa1")?,
        kappa2: array("kappa2")?,
        varrho: scalar("varrho")?,
        delta0: scalar("delta0")?,
    })
}

/// Reads and parses a model file.
pub fn load_config(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
