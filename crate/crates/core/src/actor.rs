//! The actor-critic outer loop: a mini-batch TD critic phase followed by a
//! mini-batch actor phase on the restart-modified kernel, with plain (AC) or
//! Fisher-preconditioned (NAC) updates, all on one sample path.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::critic::{minibatch_td, prescribe_sa_hyperparams, td_delta, CriticModel, LinearSaProblem, TdConfig};
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, Mat, Vector};
use crate::mdp::{step, FiniteMdp, KernelChoice, PathCursor, Policy, TransitionSample};
use crate::oracle::chain::MixingConstants;
use crate::oracle::gradient::exact_gradient;
use crate::oracle::lipschitz::{lipschitz_constants, LipschitzConstants};
use crate::oracle::td::{actor_approx_error, critic_error_at, td_fixed_point};
use crate::oracle::values::{objective, optimal_value};
use crate::policy::{random_parameter_pairs, random_parameters, FisherAccumulator, PolicyFeatures, SoftmaxPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ac,
    Nac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorConfig {
    pub variant: Variant,
    /// Actor stepsize `alpha`.
    pub step_size: f64,
    /// Actor batch size `B`.
    pub batch_size: usize,
    /// Fisher regularizer `lambda` (NAC only).
    #[serde(default)]
    pub regularization: f64,
    /// Outer iterations `T`.
    pub iterations: usize,
    pub critic: TdConfig,
    /// Start each critic phase from the previous critic parameter instead of
    /// zero.
    #[serde(default)]
    pub warm_start: bool,
    /// Kernel that supplies the successor used in the actor's TD error:
    /// `visitation` uses the path's own successor (restarts included), `raw`
    /// replaces restart successors by a fresh draw from `P(.|s,a)`.
    #[serde(default = "default_successor")]
    pub successor: KernelChoice,
    /// Initial policy parameters; zero (uniform policy) when absent.
    #[serde(default)]
    pub initial_params: Option<Vec<f64>>,
    pub seed: u64,
}

fn default_successor() -> KernelChoice {
    KernelChoice::Visitation
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!(
                "actor stepsize must be non-negative, got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::InvalidHyperparameter(
                "actor batch size and iterations must be at least 1".into(),
            ));
        }
        if self.variant == Variant::Nac && !(self.regularization > 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "NAC needs a positive regularizer, got {}",
                self.regularization
            )));
        }
        self.critic.validate()
    }
}

/// Draws `B` transitions on the visitation kernel and returns the samples
/// the actor's TD errors are evaluated on. With `successor = Raw`, a restart
/// step's successor is replaced by an extra draw from `P(.|s,a)` that does
/// not move the path.
pub fn sample_actor_batch(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    cursor: &mut PathCursor,
    batch_size: usize,
    successor: KernelChoice,
) -> Result<Vec<TransitionSample>> {
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let s = cursor.state();
        let a = policy.sample_action(cursor, s);
        let mut sample = step(mdp, cursor, a, KernelChoice::Visitation)?;
        if sample.restarted && successor == KernelChoice::Raw {
            let next = cursor.sample_from(mdp.transition_row(s, a));
            sample = TransitionSample {
                next_state: next,
                reward: mdp.reward(s, a, next),
                restarted: false,
                ..sample
            };
        }
        batch.push(sample);
    }
    Ok(batch)
}

/// `v = (1/B) sum_i delta_theta(s_i, a_i, s_i') psi_w(s_i, a_i)`.
pub fn actor_gradient_estimate(
    policy: &SoftmaxPolicy,
    critic: &CriticModel,
    batch: &[TransitionSample],
    discount: f64,
) -> Result<Vector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut v = Vector::zeros(policy.features().dim());
    for sample in batch {
        let delta = td_delta(critic, sample, discount);
        v.axpy(delta, &policy.score(sample.state, sample.action), 1.0);
    }
    Ok(v / batch.len() as f64)
}

/// `w + alpha v`.
pub fn ac_step(params: &Vector, direction: &Vector, step_size: f64) -> Vector {
    params + direction * step_size
}

/// `w + alpha (F + lambda I)^{-1} v`, by Cholesky.
pub fn nac_step(
    params: &Vector,
    fisher: &Mat,
    regularization: f64,
    direction: &Vector,
    step_size: f64,
) -> Result<Vector> {
    if !(regularization > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "Fisher regularizer must be positive, got {regularization}"
        )));
    }
    let d = fisher.nrows();
    let natural = spd_solve(&(fisher + Mat::identity(d, d) * regularization), direction)?;
    Ok(params + natural * step_size)
}

/// Exact quantities for one policy iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateMetrics {
    pub grad_norm_sq: f64,
    pub objective: f64,
    pub gap: f64,
    pub zeta_critic: f64,
    pub zeta_actor: f64,
}

fn iterate_metrics(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    phi: &Mat,
    optimal: f64,
) -> (IterateMetrics, Option<Vector>) {
    let objective = objective(mdp, policy).unwrap_or(f64::NAN);
    let grad_norm_sq = exact_gradient(mdp, policy).map_or(f64::NAN, |g| g.norm_squared());
    let theta_star = td_fixed_point(mdp, policy, phi).ok().map(|td| td.theta_star);
    let zeta_critic = theta_star
        .as_ref()
        .and_then(|t| critic_error_at(mdp, policy, phi, t).ok())
        .unwrap_or(f64::NAN);
    let zeta_actor = actor_approx_error(mdp, policy).map_or(f64::NAN, |a| a.residual);
    (
        IterateMetrics {
            grad_norm_sq,
            objective,
            gap: optimal - objective,
            zeta_critic,
            zeta_actor,
        },
        theta_star,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    /// `w_t`, the parameter the iteration starts from.
    pub params: Vec<f64>,
    #[serde(flatten)]
    pub metrics: IterateMetrics,
    /// `||theta_t - theta*_{w_t}||^2`.
    pub theta_err_sq: f64,
    /// Path transitions consumed through the end of this iteration.
    pub cumulative_samples: u64,
    /// Cursor position after this iteration.
    pub cursor_state: usize,
    pub wallclock_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Critic,
    Actor,
}

/// One phase of the single sample path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub t: usize,
    pub phase: Phase,
    pub entry_state: usize,
    pub exit_state: usize,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<RunRecord>,
    pub phases: Vec<PhaseRecord>,
    /// Output index drawn uniformly from `1..=T`.
    pub t_hat: usize,
    pub final_params: Vec<f64>,
    /// Metrics of the last iterate `w_T`.
    pub final_metrics: IterateMetrics,
    pub optimal_objective: f64,
    pub initial_state: usize,
}

impl RunTrace {
    /// `(1/T) sum_t ||grad J(w_t)||^2` over `t = 0..T-1`.
    pub fn mean_grad_norm_sq(&self) -> f64 {
        self.records.iter().map(|r| r.metrics.grad_norm_sq).sum::<f64>() / self.records.len() as f64
    }

    /// Metrics of `w_{T_hat}`.
    pub fn metrics_at_t_hat(&self) -> &IterateMetrics {
        self.records
            .get(self.t_hat)
            .map_or(&self.final_metrics, |r| &r.metrics)
    }

    pub fn mean_gap(&self) -> f64 {
        self.records.iter().map(|r| r.metrics.gap).sum::<f64>() / self.records.len() as f64
    }

    /// Every phase starts where the previous one stopped, the first at the
    /// path's initial state.
    pub fn path_is_continuous(&self) -> bool {
        let mut expected = self.initial_state;
        for p in &self.phases {
            if p.entry_state != expected {
                return false;
            }
            expected = p.exit_state;
        }
        true
    }

    pub fn total_samples(&self) -> u64 {
        self.records.last().map_or(0, |r| r.cumulative_samples)
    }

    /// Header and one row per iteration:
    /// `t,grad_norm_sq,J_w,gap,theta_err_sq,zeta_critic,zeta_actor,cumulative_samples,wallclock_ns`.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "t,grad_norm_sq,J_w,gap,theta_err_sq,zeta_critic,zeta_actor,cumulative_samples,wallclock_ns")?;
        for r in &self.records {
            let m = &r.metrics;
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.t,
                m.grad_norm_sq,
                m.objective,
                m.gap,
                r.theta_err_sq,
                m.zeta_critic,
                m.zeta_actor,
                r.cumulative_samples,
                r.wallclock_ns
            )?;
        }
        Ok(())
    }
}

/// Runs `T` actor-critic iterations on one sample path started from `xi`.
pub fn run(
    mdp: &FiniteMdp,
    policy_features: &Arc<PolicyFeatures>,
    critic_features: &Mat,
    config: &ActorConfig,
) -> Result<RunTrace> {
    config.validate()?;
    if policy_features.num_states() != mdp.num_states()
        || policy_features.num_actions() != mdp.num_actions()
    {
        return Err(Error::DimensionMismatch(
            "policy features do not match the MDP".into(),
        ));
    }
    let start = Instant::now();
    let params = match &config.initial_params {
        Some(w) => Vector::from_column_slice(w),
        None => Vector::zeros(policy_features.dim()),
    };
    let mut policy = SoftmaxPolicy::new(Arc::clone(policy_features), params)?;
    let mut critic = CriticModel::new(critic_features.clone())?;
    let phi = critic.features().clone();
    let optimal = optimal_value(mdp).objective;
    let mut cursor = PathCursor::from_init_dist(mdp, config.seed);
    let initial_state = cursor.state();
    let steps0 = cursor.steps();
    let gamma = mdp.discount();

    let mut records = Vec::with_capacity(config.iterations);
    let mut phases = Vec::with_capacity(2 * config.iterations);
    for t in 0..config.iterations {
        let (metrics, theta_star) = iterate_metrics(mdp, &policy, &phi, optimal);

        if !config.warm_start {
            critic.set_theta(Vector::zeros(critic.dim()));
        }
        let td = minibatch_td(mdp, &policy, &mut critic, &config.critic, &mut cursor, None)?;
        phases.push(PhaseRecord {
            t,
            phase: Phase::Critic,
            entry_state: td.entry_state,
            exit_state: td.exit_state,
            samples: td.samples,
        });
        let theta_err_sq = theta_star.map_or(f64::NAN, |s| (critic.theta() - s).norm_squared());

        let entry_state = cursor.state();
        let before = cursor.steps();
        let batch = sample_actor_batch(mdp, &policy, &mut cursor, config.batch_size, config.successor)?;
        phases.push(PhaseRecord {
            t,
            phase: Phase::Actor,
            entry_state,
            exit_state: cursor.state(),
            samples: cursor.steps() - before,
        });
        let v = actor_gradient_estimate(&policy, &critic, &batch, gamma)?;
        let next = match config.variant {
            Variant::Ac => ac_step(policy.params(), &v, config.step_size),
            Variant::Nac => {
                let mut acc = FisherAccumulator::new(policy.features().dim());
                for s in &batch {
                    acc.push(&policy.score(s.state, s.action));
                }
                let fisher = acc.finish()?;
                nac_step(policy.params(), &fisher.matrix, config.regularization, &v, config.step_size)?
            }
        };
        records.push(RunRecord {
            t,
            params: policy.params().iter().copied().collect(),
            metrics,
            theta_err_sq,
            cumulative_samples: cursor.steps() - steps0,
            cursor_state: cursor.state(),
            wallclock_ns: start.elapsed().as_nanos() as u64,
        });
        policy = policy.with_params(next);
    }
    let (final_metrics, _) = iterate_metrics(mdp, &policy, &phi, optimal);
    let t_hat = 1 + ((cursor.uniform() * config.iterations as f64) as usize).min(config.iterations - 1);
    Ok(RunTrace {
        records,
        phases,
        t_hat,
        final_params: policy.params().iter().copied().collect(),
        final_metrics,
        optimal_objective: optimal,
        initial_state,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionOptions {
    /// Random policy parameters (besides zero) over which worst-case
    /// constants are taken.
    pub grid_size: usize,
    pub grid_seed: u64,
    /// Floor on the NAC regularizer.
    pub lambda_min: f64,
}

impl Default for PrescriptionOptions {
    fn default() -> Self {
        Self {
            grid_size: 20,
            grid_seed: 0,
            lambda_min: 1e-3,
        }
    }
}

/// Worst-case problem constants over a policy grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub lipschitz: LipschitzConstants,
    /// `max 2 ||theta*_w||`.
    pub radius: f64,
    /// `max zeta_critic(w)`.
    pub zeta_critic: f64,
    /// Critic linear-SA constants (worst case): `lambda_A`, `C_A`, `C_b`,
    /// mixing of the transition chain, and `max ||theta*||^2`.
    pub critic_lambda_a: f64,
    pub critic_c_a: f64,
    pub critic_c_b: f64,
    pub critic_mixing: MixingConstants,
    pub critic_theta_sq: f64,
}

/// Zero plus `grid_size` standard normal parameter vectors.
fn policy_grid(dim: usize, options: &PrescriptionOptions) -> Vec<Vector> {
    let mut grid = vec![Vector::zeros(dim)];
    grid.extend(random_parameters(dim, options.grid_size, 1.0, options.grid_seed));
    grid
}

/// `L_J` and its ingredients with mixing taken over the prescription grid.
pub fn gradient_lipschitz(
    mdp: &FiniteMdp,
    policy_features: &Arc<PolicyFeatures>,
    options: &PrescriptionOptions,
) -> Result<LipschitzConstants> {
    let dim = policy_features.dim();
    let grid = policy_grid(dim, options);
    let pairs = random_parameter_pairs(dim, options.grid_size.max(1) * 10, 1.0, options.grid_seed ^ 0xa5a5);
    lipschitz_constants(mdp, policy_features, &grid, &pairs)
}

/// `1/(4 L_J)` for AC and `lambda^2 / (4 L_J (1 + lambda))` for NAC.
pub fn prescribed_step_size(variant: Variant, l_j: f64, regularization: f64) -> f64 {
    match variant {
        Variant::Ac => 1.0 / (4.0 * l_j),
        Variant::Nac => regularization * regularization / (4.0 * l_j * (1.0 + regularization)),
    }
}

pub fn problem_constants(
    mdp: &FiniteMdp,
    policy_features: &Arc<PolicyFeatures>,
    critic_features: &Mat,
    options: &PrescriptionOptions,
) -> Result<ProblemConstants> {
    let grid = policy_grid(policy_features.dim(), options);
    let lipschitz = gradient_lipschitz(mdp, policy_features, options)?;
    let phi = CriticModel::new(critic_features.clone())?.features().clone();
    let base = SoftmaxPolicy::zeros(Arc::clone(policy_features));
    let mut out = ProblemConstants {
        lipschitz,
        radius: 0.0,
        zeta_critic: 0.0,
        critic_lambda_a: f64::INFINITY,
        critic_c_a: 0.0,
        critic_c_b: 0.0,
        critic_mixing: MixingConstants { kappa: 0.0, rho: 0.0 },
        critic_theta_sq: 0.0,
    };
    for w in &grid {
        let policy = base.with_params(w.clone());
        let problem = LinearSaProblem::td_embedding(mdp, &policy, &phi)?;
        let theta_norm = problem.theta_star.norm();
        out.radius = out.radius.max(2.0 * theta_norm);
        out.critic_theta_sq = out.critic_theta_sq.max(theta_norm * theta_norm);
        out.zeta_critic = out
            .zeta_critic
            .max(critic_error_at(mdp, &policy, &phi, &problem.theta_star)?);
        out.critic_lambda_a = out.critic_lambda_a.min(problem.lambda_a);
        out.critic_c_a = out.critic_c_a.max(problem.c_a);
        out.critic_c_b = out.critic_c_b.max(problem.c_b);
        out.critic_mixing = out.critic_mixing.max(problem.mixing()?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorPrescription {
    pub variant: Variant,
    pub step_size: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub regularization: f64,
    pub critic: TdConfig,
    /// Accuracy the critic phase is sized for.
    pub critic_target: f64,
    pub constants: ProblemConstants,
}

impl ActorPrescription {
    /// `(B + M T_c) T` as a float (the counts can exceed `usize` when
    /// multiplied).
    pub fn total_samples(&self) -> f64 {
        (self.batch_size as f64 + self.critic.batch_size as f64 * self.critic.iterations as f64)
            * self.iterations as f64
    }
}

/// Hyperparameters at which the convergence guarantees hold for accuracy
/// `target`.
///
/// AC: `alpha = 1/(4 L_J)`, `B >= 216 (r_max + 2R)^2 c / eps`,
/// `T >= 48 L_J r_max / ((1-gamma) eps)`, critic accuracy `eps/108`, where
/// `c = (1 + (kappa-1) rho)/(1-rho)`.
///
/// NAC: `lambda = max(sqrt(zeta_critic), lambda_min)`,
/// `alpha = lambda^2 / (4 L_J (1+lambda))` and the matching `T`, `B` and
/// critic accuracy. `zeta_critic` enters the batch bounds and critic accuracy
/// as `lambda^2`, so the floor also keeps them finite.
pub fn prescribe_actor_hyperparams(
    mdp: &FiniteMdp,
    policy_features: &Arc<PolicyFeatures>,
    critic_features: &Mat,
    variant: Variant,
    target: f64,
    options: &PrescriptionOptions,
) -> Result<ActorPrescription> {
    if !(target > 0.0) {
        return Err(Error::InvalidHyperparameter("target accuracy must be positive".into()));
    }
    let constants = problem_constants(mdp, policy_features, critic_features, options)?;
    prescribe_from_constants(mdp, constants, variant, target, options.lambda_min)
}

pub fn prescribe_from_constants(
    mdp: &FiniteMdp,
    constants: ProblemConstants,
    variant: Variant,
    target: f64,
    lambda_min: f64,
) -> Result<ActorPrescription> {
    let l_j = constants.lipschitz.l_j;
    let l_psi = constants.lipschitz.policy.l_psi;
    let r_max = mdp.r_max();
    let gamma = mdp.discount();
    let mix = constants.lipschitz.mixing.correlation_factor();
    let reach = (r_max + 2.0 * constants.radius).powi(2);
    let (step_size, batch, iterations, regularization, critic_target) = match variant {
        Variant::Ac => (
            prescribed_step_size(Variant::Ac, l_j, 0.0),
            216.0 * reach * mix / target,
            48.0 * l_j * r_max / ((1.0 - gamma) * target),
            0.0,
            target / 108.0,
        ),
        Variant::Nac => {
            let lambda = constants.zeta_critic.sqrt().max(lambda_min);
            let zeta = lambda * lambda;
            let lp = 1.0 + lambda;
            let iterations = (16.0 * l_j * lp / (target * (1.0 - gamma) * lambda * lambda))
                .max(16.0 * r_max * l_psi * lp / (target * (1.0 - gamma).powi(2) * lambda * lambda));
            let batch = (24.0 * reach * mix / zeta)
                .max(8.0 * r_max * r_max * mix / (lambda * lambda * (1.0 - gamma).powi(2) * zeta))
                .max(
                    3.0 * l_psi * lp / (target * (1.0 - gamma) * l_j)
                        * (32.0 * r_max * r_max / (lambda.powi(4) * (1.0 - gamma).powi(2))
                            + 432.0 * reach / (lambda * lambda))
                        * mix,
                );
            let critic_target = (zeta / 64.0)
                .min(target * lambda * lambda * (1.0 - gamma) * l_j / (324.0 * l_psi * lp));
            (prescribed_step_size(Variant::Nac, l_j, lambda), batch, iterations, lambda, critic_target)
        }
    };
    let sa = prescribe_sa_hyperparams(
        constants.critic_lambda_a,
        constants.critic_c_a,
        constants.critic_c_b,
        constants.critic_mixing,
        constants.critic_theta_sq,
        constants.radius,
        critic_target,
    )?;
    Ok(ActorPrescription {
        variant,
        step_size,
        batch_size: to_count(batch),
        iterations: to_count(iterations),
        regularization,
        critic: TdConfig {
            step_size: sa.step_size,
            iterations: sa.iterations,
            batch_size: sa.batch_size,
        },
        critic_target,
        constants,
    })
}

fn to_count(x: f64) -> usize {
    let x = x.ceil().max(1.0);
    if x >= usize::MAX as f64 {
        usize::MAX
    } else {
        x as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gradient::expected_actor_estimate;
    use crate::oracle::testing::{random_mdp, stay_switch};

    fn tabular_config(variant: Variant, step_size: f64, iterations: usize, batch_size: usize) -> ActorConfig {
        ActorConfig {
            variant,
            step_size,
            batch_size,
            regularization: 1e-2,
            iterations,
            critic: TdConfig { step_size: 0.5, iterations: 20, batch_size: 32 },
            warm_start: false,
            successor: KernelChoice::Visitation,
            initial_params: None,
            seed: 7,
        }
    }

    #[test]
    fn consistent_critic_leaves_only_restart_terms() {
        // deterministic stay/switch moves with rewards r(s,a) = c(s) - gamma c(succ(s,a)),
        // so theta = c is Bellman-consistent on every non-restart transition
        let c = [1.0, 3.0];
        let succ = |s: usize, a: usize| if a == 0 { s } else { 1 - s };
        let base = stay_switch(0.9);
        let mut r = vec![0.0; 8];
        for s in 0..2 {
            for a in 0..2 {
                for next in 0..2 {
                    r[(s * 2 + a) * 2 + next] = c[s] - 0.9 * c[succ(s, a)];
                }
            }
        }
        let mdp = base.with_rewards(r, 3.0);
        let policy = SoftmaxPolicy::zeros(Arc::new(PolicyFeatures::tabular(2, 2)));
        let mut critic = CriticModel::tabular(2);
        critic.set_theta(Vector::from_vec(c.to_vec()));
        let mut cursor = PathCursor::new(0, 3);
        let batch = sample_actor_batch(&mdp, &policy, &mut cursor, 200, KernelChoice::Visitation).unwrap();
        let mut expected = Vector::zeros(4);
        for s in &batch {
            let delta = td_delta(&critic, s, 0.9);
            if s.restarted {
                expected += policy.score(s.state, s.action) * delta;
            } else {
                assert!(delta.abs() < 1e-12);
            }
        }
        assert!(batch.iter().any(|s| s.restarted));
        let v = actor_gradient_estimate(&policy, &critic, &batch, 0.9).unwrap();
        assert!((v - expected / 200.0).amax() < 1e-12);
    }

    #[test]
    fn constant_reward_zero_critic_gives_mean_score() {
        let mdp = random_mdp(3, 2, 0.9, 1).with_rewards(vec![0.4; 18], 1.0);
        let features = crate::oracle::testing::random_features(3, 2, 2, 2);
        let policy = SoftmaxPolicy::new(features, Vector::from_vec(vec![0.5, -0.5])).unwrap();
        let critic = CriticModel::new(Mat::identity(3, 3)).unwrap();
        let batch = sample_actor_batch(&mdp, &policy, &mut PathCursor::new(0, 1), 50, KernelChoice::Visitation).unwrap();
        let v = actor_gradient_estimate(&policy, &critic, &batch, 0.9).unwrap();
        let mut mean = Vector::zeros(2);
        for s in &batch {
            mean += policy.score(s.state, s.action);
        }
        assert!((v - mean * (0.4 / 50.0)).amax() < 1e-12);
    }

    #[test]
    fn large_batch_matches_expected_estimate() {
        let mdp = random_mdp(3, 2, 0.9, 4);
        let features = crate::oracle::testing::random_features(3, 2, 2, 5);
        let policy = SoftmaxPolicy::new(features, Vector::from_vec(vec![0.3, 0.8])).unwrap();
        let phi = Mat::identity(3, 3);
        let theta = td_fixed_point(&mdp, &policy, &phi).unwrap().theta_star;
        let mut critic = CriticModel::new(phi.clone()).unwrap();
        critic.set_theta(theta.clone());
        // burn in from the start distribution, then sample
        let mut cursor = PathCursor::from_init_dist(&mdp, 12);
        sample_actor_batch(&mdp, &policy, &mut cursor, 1000, KernelChoice::Visitation).unwrap();
        let batch = sample_actor_batch(&mdp, &policy, &mut cursor, 100_000, KernelChoice::Visitation).unwrap();
        let v = actor_gradient_estimate(&policy, &critic, &batch, 0.9).unwrap();
        let g = expected_actor_estimate(&mdp, &policy, &phi, &theta, KernelChoice::Visitation).unwrap();
        assert!((v - g).amax() < 0.02);
    }

    #[test]
    fn ac_step_arithmetic() {
        let w = Vector::from_vec(vec![1.0, -2.0]);
        assert_eq!(ac_step(&w, &Vector::zeros(2), 0.3), w);
        assert_eq!(ac_step(&w, &Vector::from_vec(vec![5.0, 1.0]), 0.0), w);
        let moved = ac_step(&w, &Vector::from_vec(vec![1.0, 0.0]), 0.5);
        assert_eq!(moved, Vector::from_vec(vec![1.5, -2.0]));
    }

    #[test]
    fn nac_step_cases() {
        let w = Vector::zeros(2);
        let v = Vector::from_vec(vec![1.0, -3.0]);
        let out = nac_step(&w, &Mat::zeros(2, 2), 0.5, &v, 0.2).unwrap();
        assert!((out - &v * (0.2 / 0.5)).amax() < 1e-15);

        let f = Mat::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let lambda = 1e4;
        let out = nac_step(&w, &f, lambda, &v, 1.0).unwrap();
        let limit = &v / lambda;
        assert!((&out - &limit).norm() / limit.norm() <= f.norm() / lambda);

        let f = Mat::from_row_slice(3, 3, &[2.0, 0.3, -0.2, 0.3, 1.0, 0.1, -0.2, 0.1, 0.5]);
        let v = Vector::from_vec(vec![0.5, -1.0, 2.0]);
        let u = nac_step(&Vector::zeros(3), &f, 0.1, &v, 1.0).unwrap();
        assert!(((&f + Mat::identity(3, 3) * 0.1) * u - v).norm() < 1e-10);
        assert!(nac_step(&w, &Mat::zeros(2, 2), 0.0, &Vector::zeros(2), 1.0).is_err());
    }

    #[test]
    fn zero_stepsize_run_is_a_no_op() {
        let mdp = stay_switch(0.9);
        let features = Arc::new(PolicyFeatures::tabular(2, 2));
        let trace = run(&mdp, &features, &Mat::identity(2, 2), &tabular_config(Variant::Ac, 0.0, 1, 16)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.t_hat, 1);
        assert!((trace.final_metrics.objective - trace.records[0].metrics.objective).abs() < 1e-15);
        assert!((trace.records[0].metrics.objective - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tabular_ac_reaches_optimum() {
        let mdp = stay_switch(0.9);
        let features = Arc::new(PolicyFeatures::tabular(2, 2));
        let trace = run(&mdp, &features, &Mat::identity(2, 2), &tabular_config(Variant::Ac, 2.0, 2000, 256)).unwrap();
        assert!(trace.final_metrics.grad_norm_sq < 1e-2);
        assert!(trace.final_metrics.gap < 0.05);
    }

    #[test]
    fn tabular_nac_small_gap() {
        let mdp = stay_switch(0.9);
        let features = Arc::new(PolicyFeatures::tabular(2, 2));
        let trace = run(&mdp, &features, &Mat::identity(2, 2), &tabular_config(Variant::Nac, 0.05, 500, 1024)).unwrap();
        assert!(trace.metrics_at_t_hat().gap < 0.1, "gap {}", trace.metrics_at_t_hat().gap);
    }

    #[test]
    fn path_continuity_and_sample_accounting() {
        let mdp = random_mdp(4, 3, 0.9, 2);
        let features = crate::oracle::testing::random_features(4, 3, 3, 3);
        let phi = crate::oracle::testing::random_critic_features(4, 2, 4);
        let mut cfg = tabular_config(Variant::Nac, 0.1, 30, 17);
        cfg.critic = TdConfig { step_size: 0.2, iterations: 5, batch_size: 7 };
        let trace = run(&mdp, &features, &phi, &cfg).unwrap();
        assert!(trace.path_is_continuous());
        for r in &trace.records {
            assert_eq!(r.cumulative_samples, (17 + 7 * 5) * (r.t as u64 + 1));
        }
        assert_eq!(trace.phases.len(), 60);
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let mdp = random_mdp(3, 2, 0.9, 9);
        let features = crate::oracle::testing::random_features(3, 2, 2, 1);
        let cfg = tabular_config(Variant::Ac, 0.5, 20, 16);
        let a = run(&mdp, &features, &Mat::identity(3, 3), &cfg).unwrap();
        let b = run(&mdp, &features, &Mat::identity(3, 3), &cfg).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.params, y.params);
            assert_eq!(x.metrics, y.metrics);
            assert_eq!(x.theta_err_sq.to_bits(), y.theta_err_sq.to_bits());
        }
        assert_eq!(a.t_hat, b.t_hat);
    }

    #[test]
    fn prescription_structure() {
        let mdp = stay_switch(0.9);
        let features = Arc::new(PolicyFeatures::tabular(2, 2));
        let phi = Mat::identity(2, 2);
        let opts = PrescriptionOptions { grid_size: 5, ..Default::default() };
        let p1 = prescribe_actor_hyperparams(&mdp, &features, &phi, Variant::Ac, 0.1, &opts).unwrap();
        let p2 = prescribe_actor_hyperparams(&mdp, &features, &phi, Variant::Ac, 0.05, &opts).unwrap();
        assert!((p2.batch_size as f64 / p1.batch_size as f64 - 2.0).abs() < 1e-3);
        assert!((p2.iterations as f64 / p1.iterations as f64 - 2.0).abs() < 1e-3);
        assert!((p1.step_size - 1.0 / (4.0 * p1.constants.lipschitz.l_j)).abs() < 1e-15);
        let nac = prescribe_actor_hyperparams(&mdp, &features, &phi, Variant::Nac, 0.1, &opts).unwrap();
        assert!(nac.constants.zeta_critic < 1e-12);
        assert_eq!(nac.regularization, 1e-3);
    }
}
