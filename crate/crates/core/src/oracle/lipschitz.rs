//! Gradient-Lipschitz constant of the objective and its empirical check.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Vector;
use crate::mdp::{FiniteMdp, KernelChoice};
use crate::policy::{estimate_assumption1_constants, PolicyConstants, PolicyFeatures, SoftmaxPolicy};

use super::chain::{mixing_constants, MixingConstants};
use super::gradient::exact_gradient;
use super::values::{policy_table, state_chain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// `r_max/(1-gamma) (4 C_nu C_psi + L_psi)`.
    pub l_j: f64,
    /// Larger of the two visitation-measure constants below.
    pub c_nu: f64,
    /// `C_pi/2 (1 + ceil(log_rho 1/kappa) + 1/(1-rho))`.
    pub c_nu_half: f64,
    /// `C_pi (1 + ceil(log_rho 1/kappa) + 1/(1-rho))`.
    pub c_nu_full: f64,
    /// Policy TV-Lipschitz constant used in the formula: the analytic
    /// softmax bound `max ||x||`.
    pub c_pi: f64,
    pub policy: PolicyConstants,
    /// Worst mixing constants of the visitation state chain over the grid.
    pub mixing: MixingConstants,
}

/// Worst-case `(kappa, rho)` of the state chain under `kernel` over a set of
/// policy parameters.
pub fn mixing_over_grid(
    mdp: &FiniteMdp,
    features: &Arc<PolicyFeatures>,
    params: &[Vector],
    kernel: KernelChoice,
) -> Result<MixingConstants> {
    let base = SoftmaxPolicy::zeros(Arc::clone(features));
    let mut worst = MixingConstants {
        kappa: 0.0,
        rho: 0.0,
    };
    for w in params {
        let pi = policy_table(mdp, &base.with_params(w.clone()));
        worst = worst.max(mixing_constants(&state_chain(mdp, &pi, kernel))?);
    }
    Ok(worst)
}

/// `L_J` from the mixing constants of the visitation chain (worst case over
/// `grid`) and the policy-class constants (`pairs` feed the observed
/// Lipschitz ratios that are reported alongside).
pub fn lipschitz_constants(
    mdp: &FiniteMdp,
    features: &Arc<PolicyFeatures>,
    grid: &[Vector],
    pairs: &[(Vector, Vector)],
) -> Result<LipschitzConstants> {
    let mixing = mixing_over_grid(mdp, features, grid, KernelChoice::Visitation)?;
    let policy = estimate_assumption1_constants(features, pairs);
    Ok(assemble(mdp, mixing, policy))
}

pub fn assemble(mdp: &FiniteMdp, mixing: MixingConstants, policy: PolicyConstants) -> LipschitzConstants {
    let c_pi = 0.5 * policy.c_psi;
    let factor = 1.0 + mixing.log_rho_inv_kappa() + 1.0 / (1.0 - mixing.rho);
    let c_nu_half = 0.5 * c_pi * factor;
    let c_nu_full = c_pi * factor;
    let c_nu = c_nu_half.max(c_nu_full);
    let l_j = mdp.r_max() / (1.0 - mdp.discount()) * (4.0 * c_nu * policy.c_psi + policy.l_psi);
    LipschitzConstants {
        l_j,
        c_nu,
        c_nu_half,
        c_nu_full,
        c_pi,
        policy,
        mixing,
    }
}

/// Largest `||grad J(w) - grad J(w')|| / ||w - w'||` over the pairs.
pub fn empirical_gradient_lipschitz(
    mdp: &FiniteMdp,
    features: &Arc<PolicyFeatures>,
    pairs: &[(Vector, Vector)],
) -> Result<f64> {
    let base = SoftmaxPolicy::zeros(Arc::clone(features));
    let mut worst: f64 = 0.0;
    for (w1, w2) in pairs {
        let dist = (w1 - w2).norm();
        if dist == 0.0 {
            continue;
        }
        let g1 = exact_gradient(mdp, &base.with_params(w1.clone()))?;
        let g2 = exact_gradient(mdp, &base.with_params(w2.clone()))?;
        worst = worst.max((g1 - g2).norm() / dist);
    }
    Ok(worst)
}
