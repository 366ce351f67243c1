//! Seeded random instances shared by unit tests.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Mat;
use crate::mdp::{FiniteMdp, TablePolicy};
use crate::policy::{random_parameters, PolicyFeatures};

/// Dense random MDP: every transition row strictly positive, rewards in
/// `[0, 1)`, strictly positive start distribution.
pub fn random_mdp(s: usize, a: usize, discount: f64, seed: u64) -> FiniteMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p = Vec::with_capacity(s * a * s);
    for _ in 0..s * a {
        let row: Vec<f64> = (0..s).map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = row.iter().sum();
        p.extend(row.iter().map(|x| x / total));
    }
    let r: Vec<f64> = (0..s * a * s).map(|_| rng.random::<f64>()).collect();
    let xi: Vec<f64> = (0..s).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = xi.iter().sum();
    let xi = xi.iter().map(|x| x / total).collect();
    FiniteMdp::new(s, a, p, r, xi, discount, 1.0).unwrap()
}

pub fn random_table_policy(s: usize, a: usize, seed: u64) -> TablePolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9011c7);
    let mut probs = Vec::with_capacity(s * a);
    for _ in 0..s {
        let row: Vec<f64> = (0..a).map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / total));
    }
    TablePolicy {
        num_actions: a,
        probs,
    }
}

pub fn random_features(s: usize, a: usize, d: usize, seed: u64) -> Arc<PolicyFeatures> {
    let flat = random_parameters(s * a * d, 1, 1.0, seed).pop().unwrap();
    Arc::new(PolicyFeatures::from_flat(s, a, d, flat.as_slice().to_vec()).unwrap())
}

/// Random `S x d` critic features with unit-norm rows.
pub fn random_critic_features(s: usize, d: usize, seed: u64) -> Mat {
    let flat = random_parameters(s * d, 1, 1.0, seed).pop().unwrap();
    let mut phi = Mat::from_row_slice(s, d, flat.as_slice());
    for mut row in phi.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    phi
}

/// Two states; action 0 stays, action 1 switches; reward 1 on landing in
/// state 1; uniform start.
pub fn stay_switch(discount: f64) -> FiniteMdp {
    let p = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let r = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    FiniteMdp::new(2, 2, p, r, vec![0.5, 0.5], discount, 1.0).unwrap()
}
