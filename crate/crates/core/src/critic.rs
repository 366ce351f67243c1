//! Mini-batch TD(0) with linear features and the general mini-batch linear
//! stochastic approximation it is an instance of.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_part_eigenvalues, Mat, Vector};
use crate::mdp::{step, FiniteMdp, KernelChoice, PathCursor, Policy, TransitionSample};
use crate::oracle::chain::{mixing_constants, stationary_distribution, MixingConstants};
use crate::oracle::td::check_full_column_rank;
use crate::oracle::values::policy_table;

/// Linear value model `V(s) = phi(s) . theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticModel {
    phi: Mat,
    theta: Vector,
}

impl CriticModel {
    /// Checks full column rank and rescales `phi` so that every row has norm
    /// at most one. The parameter starts at zero.
    pub fn new(phi: Mat) -> Result<Self> {
        check_full_column_rank(&phi)?;
        let max_row = (0..phi.nrows())
            .map(|i| phi.row(i).norm())
            .fold(0.0, f64::max);
        let phi = if max_row > 1.0 { phi / max_row } else { phi };
        let theta = Vector::zeros(phi.ncols());
        Ok(Self { phi, theta })
    }

    /// One-hot features.
    pub fn tabular(num_states: usize) -> Self {
        Self {
            phi: Mat::identity(num_states, num_states),
            theta: Vector::zeros(num_states),
        }
    }

    pub fn features(&self) -> &Mat {
        &self.phi
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vector) {
        assert_eq!(theta.len(), self.phi.ncols());
        self.theta = theta;
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn num_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn value(&self, s: usize) -> f64 {
        self.phi.row(s).dot(&self.theta.transpose())
    }

    /// Value vector `Phi theta` over all states.
    pub fn values(&self) -> Vector {
        &self.phi * &self.theta
    }

    fn feature_row(&self, s: usize) -> Vector {
        self.phi.row(s).transpose()
    }
}

/// `delta = r + gamma phi(s') . theta - phi(s) . theta`.
pub fn td_delta(model: &CriticModel, sample: &TransitionSample, discount: f64) -> f64 {
    delta_at(&model.phi, &model.theta, sample, discount)
}

fn delta_at(phi: &Mat, theta: &Vector, sample: &TransitionSample, discount: f64) -> f64 {
    let value = |s: usize| phi.row(s).dot(&theta.transpose());
    sample.reward + discount * value(sample.next_state) - value(sample.state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    /// Stepsize `beta`.
    pub step_size: f64,
    /// Outer iterations `T_c`.
    pub iterations: usize,
    /// Mini-batch size `M`.
    pub batch_size: usize,
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!(
                "critic stepsize must be positive, got {}",
                self.step_size
            )));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidHyperparameter(
                "critic iterations and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub theta_err_sq: f64,
    pub wallclock_ns: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdRunResult {
    pub theta: Vector,
    /// `||theta_k - theta*||^2` after each outer iteration; empty when no
    /// reference is supplied.
    pub trace: Vec<TraceRow>,
    pub entry_state: usize,
    pub exit_state: usize,
    pub samples: u64,
}

/// Writes `k,theta_err_sq,wallclock_ns` rows with a header.
pub fn write_trace_csv(rows: &[TraceRow], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "k,theta_err_sq,wallclock_ns")?;
    for r in rows {
        writeln!(out, "{},{:e},{}", r.k, r.theta_err_sq, r.wallclock_ns)?;
    }
    Ok(())
}

/// Runs `T_c` mini-batch TD updates from the model's current parameter,
/// sampling the raw kernel under `policy` along the cursor's path. The model
/// holds the final parameter afterwards.
pub fn minibatch_td<P: Policy + ?Sized>(
    mdp: &FiniteMdp,
    policy: &P,
    model: &mut CriticModel,
    config: &TdConfig,
    cursor: &mut PathCursor,
    reference: Option<&Vector>,
) -> Result<TdRunResult> {
    config.validate()?;
    if model.num_states() != mdp.num_states() {
        return Err(Error::DimensionMismatch(
            "critic features do not match the MDP's states".into(),
        ));
    }
    let start = Instant::now();
    let entry_state = cursor.state();
    let steps_before = cursor.steps();
    let gamma = mdp.discount();
    let scale = config.step_size / config.batch_size as f64;
    let mut trace = Vec::with_capacity(if reference.is_some() { config.iterations } else { 0 });
    let mut direction = Vector::zeros(model.dim());
    for k in 0..config.iterations {
        direction.fill(0.0);
        for _ in 0..config.batch_size {
            let s = cursor.state();
            let a = policy.sample_action(cursor, s);
            let sample = step(mdp, cursor, a, KernelChoice::Raw)?;
            let delta = td_delta(model, &sample, gamma);
            direction.axpy(delta, &model.feature_row(sample.state), 1.0);
        }
        model.theta.axpy(scale, &direction, 1.0);
        if let Some(star) = reference {
            trace.push(TraceRow {
                k: k + 1,
                theta_err_sq: (&model.theta - star).norm_squared(),
                wallclock_ns: start.elapsed().as_nanos() as u64,
            });
        }
    }
    Ok(TdRunResult {
        theta: model.theta.clone(),
        trace,
        entry_state,
        exit_state: cursor.state(),
        samples: cursor.steps() - steps_before,
    })
}

/// A Markov noise source for linear stochastic approximation: each call
/// advances the chain one step and adds `A_x theta + b_x` at the new sample
/// `x` into `acc`.
pub trait SaSource {
    fn dim(&self) -> usize;

    fn accumulate_drift(&self, cursor: &mut PathCursor, theta: &Vector, acc: &mut Vector) -> Result<()>;
}

/// Explicit linear SA instance over a finite chain with per-state
/// `A_x`, `b_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSaProblem {
    pub chain: Mat,
    pub a_x: Vec<Mat>,
    pub b_x: Vec<Vector>,
    /// Stationary distribution of `chain`.
    pub stationary: Vector,
    /// `max_x ||A_x||_F`.
    pub c_a: f64,
    /// `max_x ||b_x||`.
    pub c_b: f64,
    pub mean_a: Mat,
    pub mean_b: Vector,
    /// `-lambda_max((A + A^T)/2)`, certifying the quadratic-form condition.
    pub lambda_a: f64,
    pub theta_star: Vector,
}

impl LinearSaProblem {
    pub fn new(chain: Mat, a_x: Vec<Mat>, b_x: Vec<Vector>) -> Result<Self> {
        let n = chain.nrows();
        if a_x.len() != n || b_x.len() != n || chain.ncols() != n {
            return Err(Error::DimensionMismatch(
                "chain, A_x and b_x must cover the same states".into(),
            ));
        }
        let stationary = stationary_distribution(&chain)?;
        let d = b_x.first().map_or(0, |b| b.len());
        let mut mean_a = Mat::zeros(d, d);
        let mut mean_b = Vector::zeros(d);
        for x in 0..n {
            mean_a += &a_x[x] * stationary[x];
            mean_b += &b_x[x] * stationary[x];
        }
        let c_a = a_x.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let c_b = b_x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let lambda_a = -sym_part_eigenvalues(&mean_a).last().copied().unwrap_or(0.0);
        if lambda_a <= 0.0 {
            return Err(Error::NonPositiveLambda(lambda_a));
        }
        let theta_star = -crate::linalg::solve(&mean_a, &mean_b)?;
        Ok(Self {
            chain,
            a_x,
            b_x,
            stationary,
            c_a,
            c_b,
            mean_a,
            mean_b,
            lambda_a,
            theta_star,
        })
    }

    /// TD(0) written as linear SA over transitions `x = (s, a, s')`, indexed
    /// `(s * A + a) * S + s'`, with `A_x = phi(s)(gamma phi(s') - phi(s))^T`
    /// and `b_x = r(s,a,s') phi(s)`.
    pub fn td_embedding<P: Policy + ?Sized>(mdp: &FiniteMdp, policy: &P, phi: &Mat) -> Result<Self> {
        let (s_count, a_count) = (mdp.num_states(), mdp.num_actions());
        let n = s_count * a_count * s_count;
        let pi = policy_table(mdp, policy);
        let gamma = mdp.discount();
        let index = |s: usize, a: usize, next: usize| (s * a_count + a) * s_count + next;
        let mut chain = Mat::zeros(n, n);
        let mut a_x = Vec::with_capacity(n);
        let mut b_x = Vec::with_capacity(n);
        for s in 0..s_count {
            for a in 0..a_count {
                for next in 0..s_count {
                    let from = index(s, a, next);
                    for b in 0..a_count {
                        for (after, p) in mdp.transition_row(next, b).iter().enumerate() {
                            chain[(from, index(next, b, after))] += pi[(next, b)] * p;
                        }
                    }
                    let f = phi.row(s).transpose();
                    let g = phi.row(next).transpose() * gamma - &f;
                    a_x.push(&f * g.transpose());
                    b_x.push(f * mdp.reward(s, a, next));
                }
            }
        }
        Self::new(chain, a_x, b_x)
    }

    pub fn mixing(&self) -> Result<MixingConstants> {
        mixing_constants(&self.chain)
    }
}

/// Cursor over a [`LinearSaProblem`]'s chain; the cursor's state is the
/// chain state.
impl SaSource for LinearSaProblem {
    fn dim(&self) -> usize {
        self.mean_b.len()
    }

    fn accumulate_drift(&self, cursor: &mut PathCursor, theta: &Vector, acc: &mut Vector) -> Result<()> {
        let row: Vec<f64> = self.chain.row(cursor.state()).iter().copied().collect();
        let x = cursor.sample_from(&row);
        cursor.teleport(x);
        acc.gemv(1.0, &self.a_x[x], theta, 1.0);
        *acc += &self.b_x[x];
        Ok(())
    }
}

/// On-policy TD(0) as a sample-driven linear SA source: the drift at a
/// transition is `delta * phi(s)`, which equals `A_x theta + b_x` for the
/// embedding above.
pub struct TdSource<'a, P: Policy + ?Sized> {
    pub mdp: &'a FiniteMdp,
    pub policy: &'a P,
    pub model: CriticModel,
}

impl<P: Policy + ?Sized> SaSource for TdSource<'_, P> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn accumulate_drift(&self, cursor: &mut PathCursor, theta: &Vector, acc: &mut Vector) -> Result<()> {
        let s = cursor.state();
        let a = self.policy.sample_action(cursor, s);
        let sample = step(self.mdp, cursor, a, KernelChoice::Raw)?;
        let delta = delta_at(&self.model.phi, theta, &sample, self.mdp.discount());
        acc.axpy(delta, &self.model.feature_row(sample.state), 1.0);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaRunResult {
    pub theta: Vector,
    pub trace: Vec<TraceRow>,
}

/// `K` iterations of `theta <- theta + alpha (A_hat theta + b_hat)` with the
/// batch means taken over `M` consecutive chain samples.
pub fn linear_sa<S: SaSource + ?Sized>(
    source: &S,
    step_size: f64,
    iterations: usize,
    batch_size: usize,
    cursor: &mut PathCursor,
    theta0: Vector,
    reference: Option<&Vector>,
) -> Result<SaRunResult> {
    if !(step_size > 0.0) || batch_size == 0 {
        return Err(Error::InvalidHyperparameter(
            "linear SA needs a positive stepsize and batch size".into(),
        ));
    }
    let start = Instant::now();
    let scale = step_size / batch_size as f64;
    let mut theta = theta0;
    let mut direction = Vector::zeros(source.dim());
    let mut trace = Vec::new();
    for k in 0..iterations {
        direction.fill(0.0);
        for _ in 0..batch_size {
            source.accumulate_drift(cursor, &theta, &mut direction)?;
        }
        theta.axpy(scale, &direction, 1.0);
        if let Some(star) = reference {
            trace.push(TraceRow {
                k: k + 1,
                theta_err_sq: (&theta - star).norm_squared(),
                wallclock_ns: start.elapsed().as_nanos() as u64,
            });
        }
    }
    Ok(SaRunResult { theta, trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaPrescription {
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Radius bound used for the parameter, `2 ||theta*||`.
    pub radius: f64,
    pub mixing: MixingConstants,
}

impl SaPrescription {
    pub fn total_samples(&self) -> f64 {
        self.iterations as f64 * self.batch_size as f64
    }
}

/// Stepsize, iteration count and batch size that guarantee
/// `E||theta_K - theta*||^2 <= target` for mini-batch linear SA:
///
/// `alpha = min(lambda/(8 C_A^2), 4/lambda)`,
/// `K = 8/(lambda alpha) ln(2 ||theta0 - theta*||^2 / target)`,
/// `M = (2/lambda + 2 alpha) 384 (C_A^2 R^2 + C_b^2) (1 + (kappa-1) rho) / ((1-rho) lambda target)`.
pub fn prescribe_sa_hyperparams(
    lambda_a: f64,
    c_a: f64,
    c_b: f64,
    mixing: MixingConstants,
    theta0_dist_sq: f64,
    radius: f64,
    target: f64,
) -> Result<SaPrescription> {
    if lambda_a <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda_a));
    }
    if !(target > 0.0) {
        return Err(Error::InvalidHyperparameter("target error must be positive".into()));
    }
    let alpha = (lambda_a / (8.0 * c_a * c_a)).min(4.0 / lambda_a);
    let log_term = (2.0 * theta0_dist_sq / target).ln().max(0.0);
    let iterations = (8.0 / (lambda_a * alpha) * log_term).ceil().max(1.0);
    let batch = (2.0 / lambda_a + 2.0 * alpha) * 384.0 * (c_a * c_a * radius * radius + c_b * c_b)
        * mixing.correlation_factor()
        / (lambda_a * target);
    Ok(SaPrescription {
        step_size: alpha,
        iterations: saturating_count(iterations),
        batch_size: saturating_count(batch.ceil().max(1.0)),
        radius,
        mixing,
    })
}

/// [`prescribe_sa_hyperparams`] with constants read off an explicit problem,
/// its chain's mixing constants and `R = 2 ||theta*||`.
pub fn prescribe_for_problem(problem: &LinearSaProblem, theta0: &Vector, target: f64) -> Result<SaPrescription> {
    let mixing = problem.mixing()?;
    prescribe_sa_hyperparams(
        problem.lambda_a,
        problem.c_a,
        problem.c_b,
        mixing,
        (theta0 - &problem.theta_star).norm_squared(),
        2.0 * problem.theta_star.norm(),
        target,
    )
}

fn saturating_count(x: f64) -> usize {
    if x >= usize::MAX as f64 {
        usize::MAX
    } else {
        x as usize
    }
}
