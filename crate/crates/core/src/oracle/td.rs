//! Linear TD fixed point and the critic/actor approximation errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, singular_values, solve, sym_part_eigenvalues, Mat, Vector};
use crate::mdp::{FiniteMdp, KernelChoice, Policy};
use crate::policy::SoftmaxPolicy;

use super::chain::stationary_distribution;
use super::values::{
    expected_reward_vector, policy_table, q_and_advantage, state_chain, state_visitation,
    value_function,
};

/// Smallest singular value a feature matrix may have.
pub const RANK_TOL: f64 = 1e-10;

pub fn check_full_column_rank(features: &Mat) -> Result<()> {
    let sv = singular_values(features);
    let min = if features.ncols() > features.nrows() {
        0.0
    } else {
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    };
    if min > RANK_TOL {
        Ok(())
    } else {
        Err(Error::RankDeficient {
            min_singular_value: min,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdFixedPoint {
    /// Stationary distribution of the critic's chain `P_pi`.
    pub mu: Vector,
    /// `E_mu[phi(s) (gamma phi(s') - phi(s))^T]`.
    pub a: Mat,
    /// `E_mu[r phi(s)]`.
    pub b: Vector,
    pub theta_star: Vector,
    /// `-lambda_max((A + A^T)/2)`; certifies
    /// `(theta - theta*)^T A (theta - theta*) <= -lambda_a ||theta - theta*||^2`.
    pub lambda_a: f64,
}

/// Mean TD drift `A`, offset `b` and fixed point `theta* = -A^{-1} b` of
/// on-policy linear TD with features `phi` (one row per state).
pub fn td_fixed_point<P: Policy + ?Sized>(
    mdp: &FiniteMdp,
    policy: &P,
    phi: &Mat,
) -> Result<TdFixedPoint> {
    if phi.nrows() != mdp.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "critic features have {} rows, MDP has {} states",
            phi.nrows(),
            mdp.num_states()
        )));
    }
    check_full_column_rank(phi)?;
    let pi = policy_table(mdp, policy);
    let p_pi = state_chain(mdp, &pi, KernelChoice::Raw);
    let mu = stationary_distribution(&p_pi)?;
    let d = Mat::from_diagonal(&mu);
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let a = phi.transpose() * &d * (&p_pi * gamma - Mat::identity(n, n)) * phi;
    let b = phi.transpose() * &d * expected_reward_vector(mdp, &pi);
    let lambda_a = -sym_part_eigenvalues(&a).last().copied().unwrap_or(0.0);
    if lambda_a <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda_a));
    }
    let theta_star = -solve(&a, &b)?;
    Ok(TdFixedPoint {
        mu,
        a,
        b,
        theta_star,
        lambda_a,
    })
}

/// `sum_{s,a} nu(s,a) (V_pi(s) - phi(s) theta*)^2`.
pub fn critic_approx_error<P: Policy + ?Sized>(
    mdp: &FiniteMdp,
    policy: &P,
    phi: &Mat,
) -> Result<f64> {
    let td = td_fixed_point(mdp, policy, phi)?;
    critic_error_at(mdp, policy, phi, &td.theta_star)
}

/// `sum_{s,a} nu(s,a) (V_pi(s) - phi(s) theta)^2` for a given `theta`.
pub fn critic_error_at<P: Policy + ?Sized>(
    mdp: &FiniteMdp,
    policy: &P,
    phi: &Mat,
    theta: &Vector,
) -> Result<f64> {
    let d = state_visitation(mdp, &policy_table(mdp, policy))?;
    let v = value_function(mdp, policy)?;
    let residual = v - phi * theta;
    Ok(d.iter().zip(residual.iter()).map(|(w, e)| w * e * e).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorApprox {
    /// `min_p sum nu (psi . p - Adv)^2`.
    pub residual: f64,
    /// Minimum-norm minimizer.
    pub coefficients: Vec<f64>,
}

/// Weighted least-squares fit of the advantage by linear functions of the
/// score.
pub fn actor_approx_error(mdp: &FiniteMdp, policy: &SoftmaxPolicy) -> Result<ActorApprox> {
    let pi = policy_table(mdp, policy);
    let d_state = state_visitation(mdp, &pi)?;
    let adv = q_and_advantage(mdp, policy)?.advantage;
    let (s_count, a_count) = (mdp.num_states(), mdp.num_actions());
    let dim = policy.features().dim();
    let mut design = Mat::zeros(s_count * a_count, dim);
    let mut target = Vector::zeros(s_count * a_count);
    for s in 0..s_count {
        let probs = policy.action_probs(s);
        for a in 0..a_count {
            let row = s * a_count + a;
            let nu = (d_state[s] * pi[(s, a)]).max(0.0);
            let root = nu.sqrt();
            let psi = policy.score_with_probs(s, a, &probs);
            design.row_mut(row).copy_from(&(psi.transpose() * root));
            target[row] = adv[(s, a)] * root;
        }
    }
    let p = pinv(&design, 1e-12) * &target;
    let fitted = &design * &p;
    let residual = (target - fitted).norm_squared();
    Ok(ActorApprox {
        residual,
        coefficients: p.iter().copied().collect(),
    })
}

/// Largest critic error over a set of policy parameters (a lower bound on
/// the supremum over the parameter space).
pub fn max_critic_approx_error(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    params: &[Vector],
    phi: &Mat,
) -> Result<f64> {
    params.iter().try_fold(0.0f64, |m, w| {
        Ok(m.max(critic_approx_error(mdp, &policy.with_params(w.clone()), phi)?))
    })
}

/// Largest actor error over a set of policy parameters.
pub fn max_actor_approx_error(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    params: &[Vector],
) -> Result<f64> {
    params.iter().try_fold(0.0f64, |m, w| {
        Ok(m.max(actor_approx_error(mdp, &policy.with_params(w.clone()))?.residual))
    })
}
