//! Finite-action softmax (Boltzmann) policies over linear state-action
//! features.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::mdp::{PathCursor, Policy, TransitionSample};

/// State-action feature vectors `x(s,a)`, rescaled at construction so that
/// the largest has Euclidean norm at most 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFeatures {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PolicyFeatures {
    /// One-hot features, `d1 = S * A`.
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        let dim = num_states * num_actions;
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self {
            num_states,
            num_actions,
            dim,
            data,
        }
    }

    /// Features from a nested `S x A x d1` array.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = nested.len();
        let num_actions = nested.first().map_or(0, |r| r.len());
        let dim = nested
            .first()
            .and_then(|r| r.first())
            .map_or(0, |v| v.len());
        if num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(Error::DimensionMismatch("empty feature array".into()));
        }
        let mut data = Vec::with_capacity(num_states * num_actions * dim);
        for row in nested {
            if row.len() != num_actions {
                return Err(Error::DimensionMismatch(
                    "ragged feature array (actions)".into(),
                ));
            }
            for x in row {
                if x.len() != dim {
                    return Err(Error::DimensionMismatch(
                        "ragged feature array (dimension)".into(),
                    ));
                }
                data.extend_from_slice(x);
            }
        }
        Self::from_flat(num_states, num_actions, dim, data)
    }

    /// Features from a flat `S * A * d1` buffer.
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != num_states * num_actions * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} feature entries, found {}",
                num_states * num_actions * dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite feature entry".into()));
        }
        let max_norm = data
            .chunks(dim)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if max_norm > 1.0 {
            data.iter_mut().for_each(|v| *v /= max_norm);
        }
        Ok(Self {
            num_states,
            num_actions,
            dim,
            data,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.num_actions + a) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn max_norm(&self) -> f64 {
        self.data
            .chunks(self.dim)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct SoftmaxPolicy {
    features: Arc<PolicyFeatures>,
    params: Vector,
}

impl SoftmaxPolicy {
    pub fn new(features: Arc<PolicyFeatures>, params: Vector) -> Result<Self> {
        if params.len() != features.dim() {
            return Err(Error::DimensionMismatch(format!(
                "policy parameters have length {}, features have dimension {}",
                params.len(),
                features.dim()
            )));
        }
        Ok(Self { features, params })
    }

    /// Policy with all-zero parameters (uniform over actions).
    pub fn zeros(features: Arc<PolicyFeatures>) -> Self {
        let params = Vector::zeros(features.dim());
        Self { features, params }
    }

    pub fn features(&self) -> &Arc<PolicyFeatures> {
        &self.features
    }

    pub fn params(&self) -> &Vector {
        &self.params
    }

    /// Same features, new parameters.
    pub fn with_params(&self, params: Vector) -> Self {
        assert_eq!(params.len(), self.features.dim());
        Self {
            features: Arc::clone(&self.features),
            params,
        }
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        (0..self.features.num_actions())
            .map(|a| dot(self.features.get(s, a), self.params.as_slice()))
            .collect()
    }

    /// `log pi_w(a|s)` via log-sum-exp.
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let logits = self.logits(s);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        logits[a] - lse
    }

    /// `psi_w(s,a) = x(s,a) - sum_a' pi_w(a'|s) x(s,a')`.
    pub fn score(&self, s: usize, a: usize) -> Vector {
        let probs = self.action_probs(s);
        self.score_with_probs(s, a, &probs)
    }

    /// Score given already computed `pi_w(.|s)`.
    pub fn score_with_probs(&self, s: usize, a: usize, probs: &[f64]) -> Vector {
        let f = &*self.features;
        let mut psi = Vector::from_column_slice(f.get(s, a));
        for (b, &p) in probs.iter().enumerate() {
            if p != 0.0 {
                for (out, x) in psi.iter_mut().zip(f.get(s, b)) {
                    *out -= p * x;
                }
            }
        }
        psi
    }

    /// Policy-level TV distance `0.5 * sum_a |pi_1(a|s) - pi_2(a|s)|`.
    pub fn tv_distance(&self, other: &SoftmaxPolicy, s: usize) -> f64 {
        tv_distance(self, other, s)
    }
}

impl Policy for SoftmaxPolicy {
    fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    /// Softmax of the logits with max-subtraction.
    fn action_probs(&self, s: usize) -> Vec<f64> {
        let mut logits = self.logits(s);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
            total += *l;
        }
        logits.iter_mut().for_each(|p| *p /= total);
        logits
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn tv_distance(p1: &SoftmaxPolicy, p2: &SoftmaxPolicy, s: usize) -> f64 {
    let a = p1.action_probs(s);
    let b = p2.action_probs(s);
    0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Action drawn by inverse CDF on one uniform from the cursor.
pub fn sample_action(policy: &SoftmaxPolicy, cursor: &mut PathCursor, s: usize) -> usize {
    policy.sample_action(cursor, s)
}

/// Sampled Fisher matrix `(1/B) sum_i psi_i psi_i^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherEstimate {
    pub matrix: Mat,
    pub batch_size: usize,
}

/// Accumulates `psi psi^T` one sample at a time.
#[derive(Clone, Debug)]
pub struct FisherAccumulator {
    sum: Mat,
    count: usize,
}

impl FisherAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: Mat::zeros(dim, dim),
            count: 0,
        }
    }

    pub fn push(&mut self, psi: &Vector) {
        self.sum.ger(1.0, psi, psi, 1.0);
        self.count += 1;
    }

    pub fn finish(self) -> Result<FisherEstimate> {
        if self.count == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut matrix = self.sum / self.count as f64;
        // ger accumulates both triangles with identical arithmetic, but
        // enforce exact symmetry anyway.
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        Ok(FisherEstimate {
            matrix,
            batch_size: self.count,
        })
    }
}

pub fn fisher_estimate(
    policy: &SoftmaxPolicy,
    batch: &[TransitionSample],
) -> Result<FisherEstimate> {
    let mut acc = FisherAccumulator::new(policy.features().dim());
    for t in batch {
        acc.push(&policy.score(t.state, t.action));
    }
    acc.finish()
}

/// Constants of the smooth/bounded-score policy assumptions for one
/// feature set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConstants {
    /// Score bound `2 * max ||x||`.
    pub c_psi: f64,
    /// Analytic score-Lipschitz bound `2 * max ||x||^2`.
    pub l_psi: f64,
    /// Largest observed `||psi_w - psi_w'|| / ||w - w'||` over the grid
    /// (a lower bound on the true constant).
    pub l_psi_observed: f64,
    /// Largest observed `tv / ||w - w'||` over the grid (a lower bound).
    pub c_pi: f64,
    /// Number of non-degenerate pairs used.
    pub pairs_used: usize,
}

pub fn estimate_assumption1_constants(
    features: &Arc<PolicyFeatures>,
    pairs: &[(Vector, Vector)],
) -> PolicyConstants {
    let max_norm = features.max_norm();
    let mut l_psi_observed: f64 = 0.0;
    let mut c_pi: f64 = 0.0;
    let mut pairs_used = 0;
    for (w1, w2) in pairs {
        let dist = (w1 - w2).norm();
        if dist == 0.0 {
            continue;
        }
        pairs_used += 1;
        let p1 = SoftmaxPolicy::new(Arc::clone(features), w1.clone()).expect("grid dimension");
        let p2 = p1.with_params(w2.clone());
        for s in 0..features.num_states() {
            c_pi = c_pi.max(tv_distance(&p1, &p2, s) / dist);
            let probs1 = p1.action_probs(s);
            let probs2 = p2.action_probs(s);
            for a in 0..features.num_actions() {
                let d = (p1.score_with_probs(s, a, &probs1) - p2.score_with_probs(s, a, &probs2))
                    .norm();
                l_psi_observed = l_psi_observed.max(d / dist);
            }
        }
    }
    PolicyConstants {
        c_psi: 2.0 * max_norm,
        l_psi: 2.0 * max_norm * max_norm,
        l_psi_observed,
        c_pi,
        pairs_used,
    }
}

/// `n` parameter vectors with i.i.d. `N(0, scale^2)` entries.
pub fn random_parameters(dim: usize, n: usize, scale: f64, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Vector::from_iterator(
                dim,
                (0..dim).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                }),
            )
        })
        .collect()
}

/// `n` independent pairs of [`random_parameters`].
pub fn random_parameter_pairs(
    dim: usize,
    n: usize,
    scale: f64,
    seed: u64,
) -> Vec<(Vector, Vector)> {
    let flat = random_parameters(dim, 2 * n, scale, seed);
    flat.chunks(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state_two_actions() -> Arc<PolicyFeatures> {
        Arc::new(PolicyFeatures::tabular(1, 2))
    }

    fn random_features(s: usize, a: usize, d: usize, seed: u64) -> Arc<PolicyFeatures> {
        let flat = random_parameters(s * a * d, 1, 1.0, seed).pop().unwrap();
        Arc::new(PolicyFeatures::from_flat(s, a, d, flat.as_slice().to_vec()).unwrap())
    }

    #[test]
    fn zero_params_give_uniform() {
        let f = Arc::new(PolicyFeatures::tabular(3, 4));
        let p = SoftmaxPolicy::zeros(f);
        for s in 0..3 {
            for q in p.action_probs(s) {
                assert!((q - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ln3_logit_gives_three_quarters() {
        let p = SoftmaxPolicy::new(
            one_state_two_actions(),
            Vector::from_vec(vec![3f64.ln(), 0.0]),
        )
        .unwrap();
        let probs = p.action_probs(0);
        assert!((probs[0] - 0.75).abs() < 1e-15);
        assert!((probs[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let p = SoftmaxPolicy::new(one_state_two_actions(), Vector::from_vec(vec![1000.0, 0.0]))
            .unwrap();
        let probs = p.action_probs(0);
        assert!((probs[0] - 1.0).abs() < 1e-15);
        assert!(probs[1] >= 0.0 && probs[1] < 1e-300);
        assert!(probs.iter().all(|q| q.is_finite()));
        assert!(p.score(0, 1).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn uniform_score_symmetry() {
        let p = SoftmaxPolicy::zeros(one_state_two_actions());
        assert_eq!(p.score(0, 0).as_slice(), &[0.5, -0.5]);
        assert_eq!(p.score(0, 1).as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn identical_features_give_zero_score() {
        let f = Arc::new(
            PolicyFeatures::from_nested(&[vec![vec![0.3, 0.4], vec![0.3, 0.4], vec![0.3, 0.4]]])
                .unwrap(),
        );
        let p = SoftmaxPolicy::new(f, Vector::from_vec(vec![1.0, -2.0])).unwrap();
        for a in 0..3 {
            assert!(p.score(0, a).amax() < 1e-15);
        }
    }

    #[test]
    fn features_normalized_to_unit_ball() {
        let f = PolicyFeatures::from_nested(&[vec![vec![3.0, 4.0], vec![1.0, 0.0]]]).unwrap();
        assert!((f.max_norm() - 1.0).abs() < 1e-15);
        assert_eq!(f.get(0, 1), &[0.2, 0.0]);
    }

    #[test]
    fn score_matches_finite_difference() {
        let f = random_features(4, 3, 5, 11);
        let params = random_parameters(5, 100, 1.0, 12);
        let h = 1e-5;
        for (i, w) in params.into_iter().enumerate() {
            let p = SoftmaxPolicy::new(Arc::clone(&f), w.clone()).unwrap();
            let (s, a) = (i % 4, (i / 4) % 3);
            let psi = p.score(s, a);
            let mut fd = Vector::zeros(5);
            for k in 0..5 {
                let mut wp = w.clone();
                wp[k] += h;
                let mut wm = w.clone();
                wm[k] -= h;
                fd[k] = (p.with_params(wp).log_prob(s, a) - p.with_params(wm).log_prob(s, a))
                    / (2.0 * h);
            }
            let rel = (&psi - &fd).norm() / psi.norm().max(1e-12);
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn sampled_frequencies_are_uniform_at_zero() {
        let f = Arc::new(PolicyFeatures::tabular(1, 4));
        let p = SoftmaxPolicy::zeros(f);
        let mut c = PathCursor::new(0, 77);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_action(&p, &mut c, 0)] += 1;
        }
        for k in counts {
            assert!((k as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_limit_always_picks_dominant_action() {
        let p = SoftmaxPolicy::new(one_state_two_actions(), Vector::from_vec(vec![0.0, 800.0]))
            .unwrap();
        let mut c = PathCursor::new(0, 1);
        assert!((0..1000).all(|_| sample_action(&p, &mut c, 0) == 1));
    }

    #[test]
    fn same_seed_same_action() {
        let p = SoftmaxPolicy::zeros(Arc::new(PolicyFeatures::tabular(2, 5)));
        let mut c1 = PathCursor::new(0, 4);
        let mut c2 = PathCursor::new(0, 4);
        for _ in 0..50 {
            assert_eq!(sample_action(&p, &mut c1, 1), sample_action(&p, &mut c2, 1));
        }
    }

    #[test]
    fn tv_identity_and_disjoint_support() {
        let f = one_state_two_actions();
        let p = SoftmaxPolicy::new(Arc::clone(&f), Vector::from_vec(vec![0.3, -0.1])).unwrap();
        assert_eq!(tv_distance(&p, &p, 0), 0.0);
        let a = p.with_params(Vector::from_vec(vec![500.0, 0.0]));
        let b = p.with_params(Vector::from_vec(vec![0.0, 500.0]));
        assert!((tv_distance(&a, &b, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_of_uniform_batch() {
        let p = SoftmaxPolicy::zeros(one_state_two_actions());
        let mk = |a| TransitionSample {
            state: 0,
            action: a,
            next_state: 0,
            reward: 0.0,
            restarted: false,
        };
        let est = fisher_estimate(&p, &[mk(0), mk(1)]).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_eq!(est.batch_size, 2);
        assert!((est.matrix - expected).amax() < 1e-15);
        assert!(matches!(fisher_estimate(&p, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn fisher_of_single_sample_is_outer_product() {
        let f = random_features(2, 3, 4, 5);
        let p = SoftmaxPolicy::new(f, Vector::from_vec(vec![0.2, -0.4, 1.0, 0.1])).unwrap();
        let t = TransitionSample {
            state: 1,
            action: 2,
            next_state: 0,
            reward: 0.0,
            restarted: false,
        };
        let est = fisher_estimate(&p, &[t]).unwrap();
        let psi = p.score(1, 2);
        assert!((est.matrix - &psi * psi.transpose()).amax() < 1e-15);
    }

    #[test]
    fn one_hot_constants() {
        let f = Arc::new(PolicyFeatures::tabular(1, 2));
        let pairs = random_parameter_pairs(2, 200, 2.0, 3);
        let mut with_degenerate = pairs.clone();
        with_degenerate.push((pairs[0].0.clone(), pairs[0].0.clone()));
        let c = estimate_assumption1_constants(&f, &with_degenerate);
        assert_eq!(c.c_psi, 2.0);
        assert_eq!(c.pairs_used, 200);
        assert!(c.c_pi.is_finite() && c.c_pi > 0.0);
        assert!(c.c_pi <= 0.5 * c.c_psi);
        assert!(c.l_psi_observed <= c.l_psi);
    }
}
