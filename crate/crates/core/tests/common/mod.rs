#![allow(dead_code)]

use std::sync::Arc;

use mbac::linalg::Mat;
use mbac::mdp::FiniteMdp;
use mbac::policy::{random_parameters, PolicyFeatures, SoftmaxPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense MDP with strictly positive transition rows and start distribution.
pub fn dense_mdp(s: usize, a: usize, discount: f64, seed: u64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normalized = |n: usize, floor: f64| {
        let row: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
        let total: f64 = row.iter().sum();
        row.into_iter().map(|x| x / total).collect::<Vec<_>>()
    };
    let p: Vec<f64> = (0..s * a).flat_map(|_| normalized(s, 0.05)).collect();
    let xi = normalized(s, 0.1);
    let r: Vec<f64> = (0..s * a * s).map(|_| rng.random::<f64>()).collect();
    FiniteMdp::new(s, a, p, r, xi, discount, 1.0).expect("valid dense MDP")
}

/// Two states; action 0 stays, action 1 switches; reward 1 on landing in
/// state 1; uniform start.
pub fn stay_switch(discount: f64) -> FiniteMdp {
    let mut p = vec![0.0; 8];
    p[0] = 1.0;
    p[3] = 1.0;
    p[5] = 1.0;
    p[6] = 1.0;
    let r = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    FiniteMdp::new(2, 2, p, r, vec![0.5, 0.5], discount, 1.0).expect("valid chain")
}

pub fn features(s: usize, a: usize, d: usize, seed: u64) -> Arc<PolicyFeatures> {
    let flat = random_parameters(s * a * d, 1, 1.0, seed).pop().expect("one draw");
    Arc::new(PolicyFeatures::from_flat(s, a, d, flat.as_slice().to_vec()).expect("valid features"))
}

pub fn policy(features: &Arc<PolicyFeatures>, seed: u64) -> SoftmaxPolicy {
    let w = random_parameters(features.dim(), 1, 1.0, seed).pop().expect("one draw");
    SoftmaxPolicy::new(Arc::clone(features), w).expect("matching dimension")
}

/// Unit-norm critic feature rows.
pub fn critic_features(s: usize, d: usize, seed: u64) -> Mat {
    let flat = random_parameters(s * d, 1, 1.0, seed).pop().expect("one draw");
    let mut phi = Mat::from_row_slice(s, d, flat.as_slice());
    for mut row in phi.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    phi
}
