mod common;

use std::sync::Arc;

use mbac::mdp::{sample_trajectory, KernelChoice, PathCursor, Policy};
use mbac::policy::{estimate_assumption1_constants, fisher_estimate, random_parameter_pairs, SoftmaxPolicy};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=5, 2usize..=5, 1usize..=6, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn probabilities_are_a_positive_distribution((s, a, d, seed) in dims()) {
        let f = common::features(s, a, d, seed);
        let pi = common::policy(&f, seed.wrapping_add(1));
        for state in 0..s {
            let probs = pi.action_probs(state);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn score_has_zero_mean_and_bounded_norm((s, a, d, seed) in dims()) {
        let f = common::features(s, a, d, seed);
        let pi = common::policy(&f, seed.wrapping_add(1));
        let bound = 2.0 * f.max_norm();
        for state in 0..s {
            let probs = pi.action_probs(state);
            let mut mean = mbac::linalg::Vector::zeros(d);
            for (action, p) in probs.iter().enumerate() {
                let psi = pi.score(state, action);
                prop_assert!(psi.norm() <= bound + 1e-12);
                mean += psi * *p;
            }
            prop_assert!(mean.amax() < 1e-10);
        }
    }

    #[test]
    fn score_matches_finite_differences((s, a, d, seed) in dims(), state in 0usize..5, action in 0usize..5) {
        let (state, action) = (state % s, action % a);
        let f = common::features(s, a, d, seed);
        let pi = common::policy(&f, seed.wrapping_add(1));
        let psi = pi.score(state, action);
        let h = 1e-5;
        for i in 0..d {
            let mut up = pi.params().clone();
            up[i] += h;
            let mut down = pi.params().clone();
            down[i] -= h;
            let fd = (pi.with_params(up).log_prob(state, action)
                - pi.with_params(down).log_prob(state, action))
                / (2.0 * h);
            let scale = psi.norm().max(1e-3);
            prop_assert!((fd - psi[i]).abs() / scale < 1e-6, "coord {i}: fd {fd} vs {}", psi[i]);
        }
    }

    #[test]
    fn sampled_fisher_is_symmetric_psd((s, a, d, seed) in dims(), len in 1usize..64) {
        let f = common::features(s, a, d, seed);
        let pi = common::policy(&f, seed.wrapping_add(1));
        let mdp = common::dense_mdp(s, a, 0.9, seed);
        let mut cursor = PathCursor::from_init_dist(&mdp, seed);
        let batch = sample_trajectory(&mdp, &mut cursor, &pi, len, KernelChoice::Visitation).unwrap();
        let fisher = fisher_estimate(&pi, &batch).unwrap().matrix;
        prop_assert!((&fisher - fisher.transpose()).amax() < 1e-12);
        let min_eig = fisher.symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-10);
    }

    #[test]
    fn score_is_lipschitz_with_analytic_constant((s, a, d, seed) in dims()) {
        let f = common::features(s, a, d, seed);
        let pairs = random_parameter_pairs(d, 20, 2.0, seed.wrapping_add(7));
        let constants = estimate_assumption1_constants(&f, &pairs);
        for (w1, w2) in &pairs {
            let dist = (w1 - w2).norm();
            let p1 = SoftmaxPolicy::new(Arc::clone(&f), w1.clone()).unwrap();
            let p2 = p1.with_params(w2.clone());
            for state in 0..s {
                for action in 0..a {
                    let gap = (p1.score(state, action) - p2.score(state, action)).norm();
                    prop_assert!(gap <= constants.l_psi * dist + 1e-12);
                }
            }
        }
        prop_assert!(constants.l_psi_observed <= constants.l_psi + 1e-12);
        prop_assert!(constants.c_pi <= constants.c_psi + 1e-12);
    }
}
