//! Shared test fixture: a three-class critically loaded model with
//! hand-checkable derived quantities.
//!
//! In internal order the cost keys h_hat * mu = (3, 2.5, 2.25) are already
//! nonincreasing, theta = (1/3, 1, 2/3), sigma^2 = 1.4, m = 0.4, b = 40/3,
//! epsilon = 0.5, r = 3 with the middle class cheapest to reject, and the
//! fill targets are a_hat = (4, 7, 6) with a_upper = 12.

use crate::model::ModelParams;

pub(crate) fn three_class() -> ModelParams {
    ModelParams {
        lambda: vec![0.9, 0.4, 0.45],
        mu: vec![3.0, 1.0, 1.5],
        lambda_hat: vec![0.2, 0.2, 0.2],
        mu_hat: vec![0.0, 0.0, 0.0],
        b_hat: vec![4.5, 7.5, 6.5],
        h_hat: vec![1.0, 2.5, 1.5],
        r_hat: vec![2.0, 3.0, 4.0],
        kappa1: vec![0.5, 0.5, 0.5],
        kappa2: vec![0.5, 0.5, 0.5],
        varrho: 1.0,
        delta0: 0.5,
    }
}
