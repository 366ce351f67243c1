//! Exact policy gradient, Fisher matrix, the expected actor surrogate and
//! the regularized-versus-pseudo-inverse natural direction gap.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{pinv, solve, Mat, Vector};
use crate::mdp::{FiniteMdp, KernelChoice, Policy};
use crate::policy::SoftmaxPolicy;
use crate::stats::loglog_fit;

use super::values::{policy_table, q_and_advantage, state_visitation};

/// `nu_pi(s,a) psi(s,a)` summed against an `S x A` weight table.
fn score_weighted_sum(policy: &SoftmaxPolicy, nu: &Mat, weight: impl Fn(usize, usize) -> f64) -> Vector {
    let mut out = Vector::zeros(policy.features().dim());
    for s in 0..nu.nrows() {
        let probs = policy.action_probs(s);
        for a in 0..nu.ncols() {
            let w = nu[(s, a)] * weight(s, a);
            if w != 0.0 {
                out.axpy(w, &policy.score_with_probs(s, a, &probs), 1.0);
            }
        }
    }
    out
}

fn visitation(mdp: &FiniteMdp, policy: &SoftmaxPolicy) -> Result<(Mat, Mat)> {
    let pi = policy_table(mdp, policy);
    let d = state_visitation(mdp, &pi)?;
    let nu = Mat::from_fn(pi.nrows(), pi.ncols(), |s, a| d[s] * pi[(s, a)]);
    Ok((pi, nu))
}

/// `grad J(w) = 1/(1-gamma) sum_{s,a} nu(s,a) Adv(s,a) psi(s,a)`, the
/// derivative of `J = E_xi[V]`.
pub fn exact_gradient(mdp: &FiniteMdp, policy: &SoftmaxPolicy) -> Result<Vector> {
    let (_, nu) = visitation(mdp, policy)?;
    let adv = q_and_advantage(mdp, policy)?.advantage;
    Ok(score_weighted_sum(policy, &nu, |s, a| adv[(s, a)]) / (1.0 - mdp.discount()))
}

/// `F(w) = sum_{s,a} nu(s,a) psi psi^T`.
pub fn exact_fisher(mdp: &FiniteMdp, policy: &SoftmaxPolicy) -> Result<Mat> {
    let (_, nu) = visitation(mdp, policy)?;
    let d = policy.features().dim();
    let mut f = Mat::zeros(d, d);
    for s in 0..nu.nrows() {
        let probs = policy.action_probs(s);
        for a in 0..nu.ncols() {
            if nu[(s, a)] != 0.0 {
                let psi = policy.score_with_probs(s, a, &probs);
                f.ger(nu[(s, a)], &psi, &psi, 1.0);
            }
        }
    }
    Ok((&f + f.transpose()) * 0.5)
}

/// Expectation of the actor's TD-error estimate `delta_theta(s,a,s') psi(s,a)`
/// with `(s,a) ~ nu_pi` and `s'` drawn from `successor`.
///
/// With `successor = Visitation` this is the literal sampler's mean; with
/// `Raw` and an exact critic it equals `(1-gamma) grad J`.
pub fn expected_actor_estimate(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    critic_features: &Mat,
    theta: &Vector,
    successor: KernelChoice,
) -> Result<Vector> {
    let (_, nu) = visitation(mdp, policy)?;
    let v_theta = critic_features * theta;
    let gamma = mdp.discount();
    let mean_delta = |s: usize, a: usize| -> f64 {
        mdp.kernel_row(s, a, successor)
            .iter()
            .enumerate()
            .map(|(next, k)| k * (mdp.reward(s, a, next) + gamma * v_theta[next]))
            .sum::<f64>()
            - v_theta[s]
    };
    Ok(score_weighted_sum(policy, &nu, mean_delta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherGap {
    pub lambdas: Vec<f64>,
    /// `||(F + lambda I)^{-1} g - F^+ g||` per lambda.
    pub gaps: Vec<f64>,
    /// `||g - F F^+ g||`, the part of `g` outside the column space of `F`.
    pub projection_residual: f64,
    pub in_column_space: bool,
    /// OLS slope of `log gap` on `log lambda` over the positive entries.
    pub slope: Option<f64>,
}

const COLUMN_SPACE_TOL: f64 = 1e-8;
const PINV_TOL: f64 = 1e-12;

pub fn fisher_direction_gap_for(fisher: &Mat, grad: &Vector, lambdas: &[f64]) -> Result<FisherGap> {
    let d = fisher.nrows();
    let f_pinv = pinv(fisher, PINV_TOL);
    let natural = &f_pinv * grad;
    let projection_residual = (grad - fisher * &natural).norm();
    let mut gaps = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let regularized = if lambda == 0.0 {
            natural.clone()
        } else {
            solve(&(fisher + Mat::identity(d, d) * lambda), grad)?
        };
        gaps.push((regularized - &natural).norm());
    }
    let slope = loglog_fit(lambdas, &gaps).map(|fit| fit.slope);
    Ok(FisherGap {
        lambdas: lambdas.to_vec(),
        gaps,
        projection_residual,
        in_column_space: projection_residual <= COLUMN_SPACE_TOL,
        slope,
    })
}

/// Gap between the regularized and pseudo-inverse natural directions at the
/// policy's own `F(w)` and `grad J(w)`.
pub fn fisher_direction_gap(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    lambdas: &[f64],
) -> Result<FisherGap> {
    fisher_direction_gap_for(
        &exact_fisher(mdp, policy)?,
        &exact_gradient(mdp, policy)?,
        lambdas,
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::oracle::testing::{random_features, random_mdp, stay_switch};
    use crate::oracle::values::{objective, value_function};
    use crate::policy::{random_parameters, PolicyFeatures};

    fn fd_gradient(mdp: &FiniteMdp, policy: &SoftmaxPolicy, h: f64) -> Vector {
        let w = policy.params();
        Vector::from_fn(w.len(), |i, _| {
            let mut plus = w.clone();
            plus[i] += h;
            let mut minus = w.clone();
            minus[i] -= h;
            (objective(mdp, &policy.with_params(plus)).unwrap()
                - objective(mdp, &policy.with_params(minus)).unwrap())
                / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mdp = random_mdp(4, 3, 0.9, seed);
            let features = random_features(4, 3, 3, seed + 7);
            let w = random_parameters(3, 1, 1.0, seed + 11).pop().unwrap();
            let policy = SoftmaxPolicy::new(features, w).unwrap();
            let g = exact_gradient(&mdp, &policy).unwrap();
            let fd = fd_gradient(&mdp, &policy, 1e-5);
            assert!((&g - &fd).norm() / g.norm().max(1e-12) < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let mdp = random_mdp(4, 3, 0.9, 2);
        let mdp = mdp.with_rewards(vec![0.7; 48], 1.0);
        let features = random_features(4, 3, 2, 3);
        let policy = SoftmaxPolicy::new(features, Vector::from_vec(vec![0.3, -1.0])).unwrap();
        assert!(exact_gradient(&mdp, &policy).unwrap().amax() < 1e-12);
    }

    #[test]
    fn near_optimal_tabular_policy_is_stationary() {
        let mdp = stay_switch(0.9);
        let features = Arc::new(PolicyFeatures::tabular(2, 2));
        // logits favour switch in state 0 and stay in state 1 by 40 nats
        let w = Vector::from_vec(vec![0.0, 40.0, 40.0, 0.0]);
        let policy = SoftmaxPolicy::new(features, w).unwrap();
        let g = exact_gradient(&mdp, &policy).unwrap();
        assert!(g.norm() < 1e-6);
        assert!((value_function(&mdp, &policy).unwrap()[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn single_state_fisher() {
        let p = vec![1.0, 1.0];
        let mdp = FiniteMdp::new(1, 2, p, vec![0.0, 1.0], vec![1.0], 0.9, 1.0).unwrap();
        let policy = SoftmaxPolicy::zeros(Arc::new(PolicyFeatures::tabular(1, 2)));
        let f = exact_fisher(&mdp, &policy).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((f - expected).amax() < 1e-15);
    }

    #[test]
    fn identical_features_give_zero_fisher() {
        let mdp = random_mdp(3, 2, 0.9, 1);
        let nested = vec![vec![vec![0.5, 0.5]; 2]; 3];
        let features = Arc::new(PolicyFeatures::from_nested(&nested).unwrap());
        let policy = SoftmaxPolicy::new(features, Vector::from_vec(vec![1.0, -2.0])).unwrap();
        assert_eq!(exact_fisher(&mdp, &policy).unwrap().amax(), 0.0);
    }

    #[test]
    fn raw_successor_surrogate_is_scaled_gradient() {
        let mdp = random_mdp(4, 3, 0.9, 5);
        let features = random_features(4, 3, 3, 6);
        let policy = SoftmaxPolicy::new(features, Vector::from_vec(vec![0.2, -0.4, 1.0])).unwrap();
        let v = value_function(&mdp, &policy).unwrap();
        let g = expected_actor_estimate(&mdp, &policy, &Mat::identity(4, 4), &v, KernelChoice::Raw)
            .unwrap();
        let grad = exact_gradient(&mdp, &policy).unwrap();
        assert!((g - grad * 0.1).amax() < 1e-12);
    }

    #[test]
    fn zero_lambda_gap_vanishes_and_matches_direct() {
        let mdp = random_mdp(4, 3, 0.9, 9);
        let features = random_features(4, 3, 3, 10);
        let policy = SoftmaxPolicy::new(features, Vector::from_vec(vec![0.5, 0.1, -0.3])).unwrap();
        let f = exact_fisher(&mdp, &policy).unwrap();
        let g = exact_gradient(&mdp, &policy).unwrap();
        let gap = fisher_direction_gap_for(&f, &g, &[0.0, 1e-2]).unwrap();
        assert!(gap.gaps[0] < 1e-12);
        let f_inv = f.clone().try_inverse().unwrap();
        let reg_inv = (&f + Mat::identity(3, 3) * 1e-2).try_inverse().unwrap();
        let direct = ((reg_inv - f_inv) * &g).norm();
        assert!((gap.gaps[1] - direct).abs() < 1e-10 * direct.max(1.0));
        assert!(gap.in_column_space);
    }
}
