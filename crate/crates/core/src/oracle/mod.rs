//! Exact, linear-algebra ground truth for every quantity the algorithms are
//! measured against.

pub mod chain;
pub mod gradient;
pub mod lipschitz;
pub mod td;
pub mod values;

#[cfg(test)]
pub(crate) mod testing;

use serde_json::{json, Value};

use crate::error::Result;
use crate::linalg::{Mat, Vector};
use crate::mdp::{FiniteMdp, KernelChoice};
use crate::policy::SoftmaxPolicy;

pub use chain::{mixing_constants, stationary_distribution, MixingConstants};
pub use gradient::{exact_fisher, exact_gradient, fisher_direction_gap, FisherGap};
pub use lipschitz::{lipschitz_constants, LipschitzConstants};
pub use td::{actor_approx_error, critic_approx_error, td_fixed_point, TdFixedPoint};
pub use values::{objective, optimal_value, q_and_advantage, value_function, visitation_measure};

/// Every exact per-policy quantity for one `(MDP, w, critic features)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    /// Stationary distribution of the critic's chain `P_pi`.
    pub mu: Vector,
    /// Visitation measure as an `S x A` matrix.
    pub nu: Mat,
    pub values: Vector,
    pub q: Mat,
    pub advantage: Mat,
    pub objective: f64,
    pub gradient: Vector,
    pub fisher: Mat,
    pub td: TdFixedPoint,
    /// Mixing constants of the critic's chain.
    pub mixing: MixingConstants,
    pub zeta_critic: f64,
    pub zeta_actor: f64,
}

impl OracleSolution {
    pub fn compute(mdp: &FiniteMdp, policy: &SoftmaxPolicy, critic_features: &Mat) -> Result<Self> {
        let av = q_and_advantage(mdp, policy)?;
        let td = td_fixed_point(mdp, policy, critic_features)?;
        let pi = values::policy_table(mdp, policy);
        let mixing = mixing_constants(&values::state_chain(mdp, &pi, KernelChoice::Raw))?;
        let zeta_critic = td::critic_error_at(mdp, policy, critic_features, &td.theta_star)?;
        Ok(Self {
            mu: td.mu.clone(),
            nu: visitation_measure(mdp, policy)?,
            objective: values::objective_from_values(mdp, &av.values),
            values: av.values,
            q: av.q,
            advantage: av.advantage,
            gradient: exact_gradient(mdp, policy)?,
            fisher: exact_fisher(mdp, policy)?,
            td,
            mixing,
            zeta_critic,
            zeta_actor: actor_approx_error(mdp, policy)?.residual,
        })
    }

    /// JSON report with matrices as nested row arrays.
    pub fn to_json(&self) -> Value {
        json!({
            "mu": vec_json(&self.mu),
            "nu": mat_json(&self.nu),
            "V": vec_json(&self.values),
            "Q": mat_json(&self.q),
            "Adv": mat_json(&self.advantage),
            "J": self.objective,
            "grad_J": vec_json(&self.gradient),
            "fisher": mat_json(&self.fisher),
            "td_star": vec_json(&self.td.theta_star),
            "A_pi": mat_json(&self.td.a),
            "b_pi": vec_json(&self.td.b),
            "lambda_A": self.td.lambda_a,
            "kappa_rho": [self.mixing.kappa, self.mixing.rho],
            "zeta_critic": self.zeta_critic,
            "zeta_actor": self.zeta_actor,
        })
    }
}

fn vec_json(v: &Vector) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn mat_json(m: &Mat) -> Value {
    json!((0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::testing::{random_critic_features, random_features, random_mdp};
    use super::*;
    use crate::mdp::Policy;
    use crate::policy::random_parameters;

    #[test]
    fn solution_invariants_on_random_instances() {
        for seed in 0..50u64 {
            let s = 2 + (seed as usize % 5);
            let a = 2 + (seed as usize / 5 % 5);
            let mdp = random_mdp(s, a, 0.9, seed);
            let d1 = 1 + seed as usize % 4;
            let features = random_features(s, a, d1, seed + 1000);
            let w = random_parameters(d1, 1, 1.0, seed + 2000).pop().unwrap();
            let policy = SoftmaxPolicy::new(Arc::clone(&features), w).unwrap();
            let d2 = 1 + seed as usize % s;
            let phi = random_critic_features(s, d2, seed + 3000);
            let sol = OracleSolution::compute(&mdp, &policy, &phi).unwrap();
            assert!((sol.mu.sum() - 1.0).abs() < 1e-10 && sol.mu.min() >= 0.0);
            assert!((sol.nu.sum() - 1.0).abs() < 1e-10 && sol.nu.min() >= 0.0);
            let pi = values::policy_table(&mdp, &policy);
            let p = values::state_chain(&mdp, &pi, KernelChoice::Raw);
            let r = values::expected_reward_vector(&mdp, &pi);
            assert!((&sol.values - (r + p * &sol.values * 0.9)).amax() < 1e-9);
            for st in 0..s {
                let m: f64 = policy
                    .action_probs(st)
                    .iter()
                    .enumerate()
                    .map(|(ac, p)| p * sol.advantage[(st, ac)])
                    .sum();
                assert!(m.abs() < 1e-9);
            }
            assert!((&sol.td.a * &sol.td.theta_star + &sol.td.b).amax() < 1e-9);
            assert!(sol.td.lambda_a > 0.0);
        }
    }

    #[test]
    fn json_dump_has_all_fields() {
        let mdp = random_mdp(3, 2, 0.9, 1);
        let features = random_features(3, 2, 2, 2);
        let policy = SoftmaxPolicy::zeros(features);
        let sol = OracleSolution::compute(&mdp, &policy, &Mat::identity(3, 3)).unwrap();
        let v = sol.to_json();
        for key in ["mu", "nu", "V", "Q", "Adv", "J", "grad_J", "fisher", "td_star", "A_pi", "b_pi", "lambda_A", "kappa_rho", "zeta_critic", "zeta_actor"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["Q"].as_array().unwrap().len(), 3);
    }
}
