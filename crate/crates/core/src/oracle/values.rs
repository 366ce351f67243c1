//! Exact policy evaluation: induced chains, values, advantages, visitation
//! measure, objective and the optimal value.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{solve, Mat, Vector};
use crate::mdp::{FiniteMdp, KernelChoice, Policy};

use super::chain::stationary_distribution;

/// `S x A` table of `pi(a|s)`.
pub fn policy_table<P: Policy + ?Sized>(mdp: &FiniteMdp, policy: &P) -> Mat {
    let (s_count, a_count) = (mdp.num_states(), mdp.num_actions());
    let mut table = Mat::zeros(s_count, a_count);
    for s in 0..s_count {
        for (a, p) in policy.action_probs(s).into_iter().enumerate() {
            table[(s, a)] = p;
        }
    }
    table
}

/// State chain `K_pi(s, s') = sum_a pi(a|s) K(s'|s,a)` for the chosen kernel.
pub fn state_chain(mdp: &FiniteMdp, pi: &Mat, kernel: KernelChoice) -> Mat {
    let n = mdp.num_states();
    let mut chain = Mat::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let p = pi[(s, a)];
            if p == 0.0 {
                continue;
            }
            for (next, k) in mdp.kernel_row(s, a, kernel).into_iter().enumerate() {
                chain[(s, next)] += p * k;
            }
        }
    }
    chain
}

/// State-action chain `K((s,a),(s',a')) = K(s'|s,a) pi(a'|s')`, indexed by
/// `s * A + a`.
pub fn state_action_chain(mdp: &FiniteMdp, pi: &Mat, kernel: KernelChoice) -> Mat {
    let (s_count, a_count) = (mdp.num_states(), mdp.num_actions());
    let n = s_count * a_count;
    let mut chain = Mat::zeros(n, n);
    for s in 0..s_count {
        for a in 0..a_count {
            let row = mdp.kernel_row(s, a, kernel);
            for (next, k) in row.into_iter().enumerate() {
                for b in 0..a_count {
                    chain[(s * a_count + a, next * a_count + b)] += k * pi[(next, b)];
                }
            }
        }
    }
    chain
}

/// `r_pi(s) = sum_a pi(a|s) E[r(s,a,s')]`.
pub fn expected_reward_vector(mdp: &FiniteMdp, pi: &Mat) -> Vector {
    Vector::from_fn(mdp.num_states(), |s, _| {
        (0..mdp.num_actions())
            .map(|a| pi[(s, a)] * mdp.expected_reward(s, a))
            .sum()
    })
}

fn evaluate(mdp: &FiniteMdp, pi: &Mat) -> Result<Vector> {
    let n = mdp.num_states();
    let p_pi = state_chain(mdp, pi, KernelChoice::Raw);
    let system = Mat::identity(n, n) - p_pi * mdp.discount();
    solve(&system, &expected_reward_vector(mdp, pi))
}

/// `V_pi = (I - gamma P_pi)^{-1} r_pi`.
pub fn value_function<P: Policy + ?Sized>(mdp: &FiniteMdp, policy: &P) -> Result<Vector> {
    evaluate(mdp, &policy_table(mdp, policy))
}

/// `V_pi` for a policy given as an `S x A` table.
pub fn value_function_of_table(mdp: &FiniteMdp, pi: &Mat) -> Result<Vector> {
    evaluate(mdp, pi)
}

/// `Q(s,a) = sum_s' P(s'|s,a) (r(s,a,s') + gamma V(s'))` for a given `V`.
pub fn q_from_values(mdp: &FiniteMdp, values: &Vector) -> Mat {
    let gamma = mdp.discount();
    Mat::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        mdp.transition_row(s, a)
            .iter()
            .zip(mdp.reward_row(s, a))
            .enumerate()
            .map(|(next, (p, r))| p * (r + gamma * values[next]))
            .sum()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionValues {
    pub values: Vector,
    pub q: Mat,
    pub advantage: Mat,
}

/// `Q_pi` and `A_pi = Q_pi - V_pi`.
pub fn q_and_advantage<P: Policy + ?Sized>(mdp: &FiniteMdp, policy: &P) -> Result<ActionValues> {
    let values = value_function(mdp, policy)?;
    let q = q_from_values(mdp, &values);
    let advantage = Mat::from_fn(q.nrows(), q.ncols(), |s, a| q[(s, a)] - values[s]);
    Ok(ActionValues {
        values,
        q,
        advantage,
    })
}

/// Discounted state occupancy `d_pi = (1-gamma) xi^T (I - gamma P_pi)^{-1}`.
pub fn state_visitation(mdp: &FiniteMdp, pi: &Mat) -> Result<Vector> {
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let p_pi = state_chain(mdp, pi, KernelChoice::Raw);
    let system = (Mat::identity(n, n) - p_pi * gamma).transpose();
    let xi = Vector::from_column_slice(mdp.init_dist());
    Ok(solve(&system, &xi)? * (1.0 - gamma))
}

/// `nu_pi(s,a) = d_pi(s) pi(a|s)` as an `S x A` matrix.
pub fn visitation_measure<P: Policy + ?Sized>(mdp: &FiniteMdp, policy: &P) -> Result<Mat> {
    let pi = policy_table(mdp, policy);
    let d = state_visitation(mdp, &pi)?;
    Ok(Mat::from_fn(pi.nrows(), pi.ncols(), |s, a| d[s] * pi[(s, a)]))
}

/// `nu_pi` recomputed as the stationary distribution of the state-action
/// chain under the visitation kernel.
pub fn visitation_measure_by_chain<P: Policy + ?Sized>(
    mdp: &FiniteMdp,
    policy: &P,
) -> Result<Mat> {
    let pi = policy_table(mdp, policy);
    let chain = state_action_chain(mdp, &pi, KernelChoice::Visitation);
    let mu = stationary_distribution(&chain)?;
    let a_count = mdp.num_actions();
    Ok(Mat::from_fn(mdp.num_states(), a_count, |s, a| {
        mu[s * a_count + a]
    }))
}

/// `J = sum_s xi(s) V_pi(s)`.
pub fn objective<P: Policy + ?Sized>(mdp: &FiniteMdp, policy: &P) -> Result<f64> {
    let values = value_function(mdp, policy)?;
    Ok(objective_from_values(mdp, &values))
}

pub fn objective_from_values(mdp: &FiniteMdp, values: &Vector) -> f64 {
    mdp.init_dist()
        .iter()
        .zip(values.iter())
        .map(|(x, v)| x * v)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub values: Vec<f64>,
    /// Greedy action per state, lowest index among ties.
    pub greedy: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

const VI_MAX_ITERS: usize = 1_000_000;
/// Q-values this close to the maximum count as tied.
const TIE_TOL: f64 = 1e-9;

/// Value iteration until `||V_{k+1} - V_k||_inf < 1e-12 (1-gamma)/gamma`,
/// then greedy extraction.
pub fn optimal_value(mdp: &FiniteMdp) -> OptimalSolution {
    let gamma = mdp.discount();
    let tol = 1e-12 * (1.0 - gamma) / gamma;
    let mut values = Vector::zeros(mdp.num_states());
    let mut iterations = 0;
    while iterations < VI_MAX_ITERS {
        iterations += 1;
        let q = q_from_values(mdp, &values);
        let next = Vector::from_fn(q.nrows(), |s, _| {
            q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        });
        let change = (&next - &values).amax();
        values = next;
        if change < tol {
            break;
        }
    }
    let q = q_from_values(mdp, &values);
    let greedy = (0..mdp.num_states())
        .map(|s| {
            let best = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let scale = best.abs().max(1.0);
            (0..mdp.num_actions())
                .find(|&a| q[(s, a)] >= best - TIE_TOL * scale)
                .unwrap_or(0)
        })
        .collect();
    OptimalSolution {
        objective: objective_from_values(mdp, &values),
        values: values.iter().copied().collect(),
        greedy,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::TablePolicy;
    use crate::oracle::testing::{random_mdp, random_table_policy, stay_switch};

    #[test]
    fn zero_reward_gives_zero_value() {
        let mdp = random_mdp(4, 3, 0.9, 1);
        let mdp = mdp.with_rewards(vec![0.0; 4 * 3 * 4], 1.0);
        let v = value_function(&mdp, &TablePolicy::uniform(4, 3)).unwrap();
        assert_eq!(v.amax(), 0.0);
        assert_eq!(optimal_value(&mdp).objective, 0.0);
    }

    #[test]
    fn always_stay_values() {
        let mdp = stay_switch(0.9);
        let stay = TablePolicy::deterministic(&[0, 0], 2);
        let v = value_function(&mdp, &stay).unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 10.0).abs() < 1e-12);
        assert!((objective(&mdp, &stay).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn bellman_residual_and_truncated_sum() {
        for seed in 0..5 {
            let mdp = random_mdp(5, 3, 0.9, seed);
            let pi = random_table_policy(5, 3, seed + 100);
            let v = value_function(&mdp, &pi).unwrap();
            let table = policy_table(&mdp, &pi);
            let p = state_chain(&mdp, &table, KernelChoice::Raw);
            let r = expected_reward_vector(&mdp, &table);
            let residual = (&v - (&r + &p * &v * 0.9)).amax();
            assert!(residual < 1e-9);
            // truncated series sum_{t < 10^4} gamma^t P^t r
            let mut acc = Vector::zeros(5);
            let mut term = r.clone();
            for _ in 0..10_000 {
                acc += &term;
                term = &p * &term * 0.9;
            }
            assert!((acc - &v).amax() < 1e-4);
        }
    }

    #[test]
    fn myopic_q_is_expected_reward() {
        let mdp = random_mdp(4, 2, 0.9, 3).with_discount(0.0);
        let av = q_and_advantage(&mdp, &random_table_policy(4, 2, 4)).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                assert!((av.q[(s, a)] - mdp.expected_reward(s, a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn advantage_is_zero_mean_under_policy() {
        let mdp = random_mdp(5, 4, 0.9, 8);
        let pi = random_table_policy(5, 4, 9);
        let av = q_and_advantage(&mdp, &pi).unwrap();
        for s in 0..5 {
            let m: f64 = pi.action_probs(s).iter().enumerate().map(|(a, p)| p * av.advantage[(s, a)]).sum();
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn q_matches_rollout_sum() {
        let mdp = random_mdp(4, 3, 0.9, 21);
        let pi = random_table_policy(4, 3, 22);
        let av = q_and_advantage(&mdp, &pi).unwrap();
        let table = policy_table(&mdp, &pi);
        let sa = state_action_chain(&mdp, &table, KernelChoice::Raw);
        let r_sa = Vector::from_fn(12, |i, _| mdp.expected_reward(i / 3, i % 3));
        let mut acc = Vector::zeros(12);
        let mut term = r_sa;
        for _ in 0..10_000 {
            acc += &term;
            term = &sa * &term * 0.9;
        }
        for i in 0..12 {
            assert!((acc[i] - av.q[(i / 3, i % 3)]).abs() < 1e-3);
        }
    }

    #[test]
    fn visitation_two_constructions_agree() {
        for seed in 0..10 {
            let mdp = random_mdp(5, 3, 0.9, seed);
            let pi = random_table_policy(5, 3, seed + 50);
            let a = visitation_measure(&mdp, &pi).unwrap();
            let b = visitation_measure_by_chain(&mdp, &pi).unwrap();
            assert!((a.sum() - 1.0).abs() < 1e-10);
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn visitation_degenerate_discount_is_init_dist() {
        let mdp = random_mdp(4, 2, 0.9, 5).with_discount(1e-300);
        let nu = visitation_measure(&mdp, &TablePolicy::uniform(4, 2)).unwrap();
        for s in 0..4 {
            assert!((nu.row(s).sum() - mdp.init_dist()[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_chain_visitation_is_uniform() {
        let mdp = stay_switch(0.9);
        let nu = visitation_measure(&mdp, &TablePolicy::uniform(2, 2)).unwrap();
        assert!((nu - Mat::from_element(2, 2, 0.25)).amax() < 1e-12);
    }

    #[test]
    fn two_state_optimum() {
        let opt = optimal_value(&stay_switch(0.9));
        assert!((opt.values[0] - 10.0).abs() < 1e-9 && (opt.values[1] - 10.0).abs() < 1e-9);
        assert!((opt.objective - 10.0).abs() < 1e-9);
        assert_eq!(opt.greedy, vec![1, 0]);
    }

    #[test]
    fn greedy_policy_attains_optimal_value() {
        for seed in 0..10 {
            let mdp = random_mdp(6, 3, 0.9, seed);
            let opt = optimal_value(&mdp);
            let greedy = TablePolicy::deterministic(&opt.greedy, 3);
            let v = value_function(&mdp, &greedy).unwrap();
            for s in 0..6 {
                assert!((v[s] - opt.values[s]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tie_break_prefers_lowest_action() {
        // both actions identical
        let p = vec![0.5; 2 * 2 * 2];
        let r = vec![1.0; 8];
        let mdp = FiniteMdp::new(2, 2, p, r, vec![0.5, 0.5], 0.9, 1.0).unwrap();
        assert_eq!(optimal_value(&mdp).greedy, vec![0, 0]);
    }
}
