//! Seeded replication over sweep points, aggregation and scaling fits.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mbac::actor::{self, gradient_lipschitz, prescribed_step_size, PrescriptionOptions, RunTrace, Variant};
use mbac::critic::{
    linear_sa, minibatch_td, prescribe_for_problem, write_trace_csv, CriticModel, LinearSaProblem, TraceRow,
};
use mbac::linalg::Vector;
use mbac::mdp::PathCursor;
use mbac::oracle::td_fixed_point;
use mbac::policy::SoftmaxPolicy;
use mbac::stats::{loglog_fit, LineFit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ActorBlock, AlgorithmBlock, ExperimentConfig, SaBlock, SweepPoint, TdBlock};
use crate::error::{HarnessError, Result};
use crate::export;

/// Fraction of the final iterations averaged into steady-state metrics.
pub const TAIL_FRACTION: f64 = 0.2;

/// Per-iteration series and summary scalars of one (sweep point, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config_id: usize,
    pub seed: u64,
    pub t: Vec<u64>,
    /// Metric name to one value per entry of `t`; `None` where undefined.
    pub series: BTreeMap<String, Vec<Option<f64>>>,
    pub scalars: BTreeMap<String, f64>,
    pub samples: u64,
    pub error: Option<String>,
}

impl RunOutput {
    fn failed(config_id: usize, seed: u64, error: String) -> Self {
        Self {
            config_id,
            seed,
            t: Vec::new(),
            series: BTreeMap::new(),
            scalars: BTreeMap::new(),
            samples: 0,
            error: Some(error),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation (zero for a single run).
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Summary {
    /// Summary of the finite entries; `None` if there are none.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: v.len(),
            mean,
            std: var.sqrt(),
            min: v[0],
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub t: Vec<u64>,
    pub stats: Vec<Option<Summary>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub config_id: usize,
    pub params: BTreeMap<String, Value>,
    /// All runs of this point succeeded.
    pub complete: bool,
    pub failures: Vec<RunFailure>,
    pub series: BTreeMap<String, SeriesSummary>,
    pub scalars: BTreeMap<String, Summary>,
    pub total_samples: u64,
    pub runs: Vec<RunOutput>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub axis: String,
    pub metric: String,
    /// Values of the other sweep axes shared by the fitted points.
    pub group: BTreeMap<String, Value>,
    /// `(axis value, seed-mean of metric)`.
    pub points: Vec<(f64, f64)>,
    pub fit: Option<LineFit>,
    /// `ln y - (intercept + slope ln x)` per point.
    pub residuals: Vec<f64>,
    pub within_expected: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub artifact_version: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
}

impl Manifest {
    pub fn for_config(config: &ExperimentConfig) -> Self {
        Self {
            name: config.name.clone(),
            config_hash: config.hash(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            base_seed: config.base_seed,
            seeds: config.seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub manifest: Manifest,
    pub algorithm: String,
    pub points: Vec<PointResult>,
    pub slopes: Vec<SlopeFit>,
    pub total_samples: u64,
}

/// Runs every (sweep point, seed) pair, aggregates, and persists to the
/// configured output path if there is one. Seeds are `base_seed + i` for
/// replicate `i`; each run's sample path is a ChaCha8 stream keyed by its
/// seed. Run failures are recorded in the result without aborting the rest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    config.validate()?;
    let points = config.sweep_points()?;
    let seeds = config.seeds();
    let trace_dir = match (&config.output.path, config.output.trace) {
        (Some(path), true) => {
            let dir = path.join("traces");
            std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            Some(dir)
        }
        _ => None,
    };
    let jobs: Vec<(&SweepPoint, u64)> = points
        .iter()
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let execute = || -> Vec<RunOutput> {
        jobs.par_iter()
            .map(|&(point, seed)| run_isolated(point, seed, trace_dir.as_deref()))
            .collect()
    };
    let outputs = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(execute),
        None => execute(),
    };
    let mut by_point: Vec<Vec<RunOutput>> = vec![Vec::new(); points.len()];
    for out in outputs {
        by_point[out.config_id].push(out);
    }
    let point_results: Vec<PointResult> = points
        .iter()
        .zip(by_point)
        .map(|(p, runs)| aggregate_point(p, runs))
        .collect();
    let slopes = fit_slopes(config, &point_results);
    let result = AggregateResult {
        manifest: Manifest::for_config(config),
        algorithm: config.algorithm.kind().to_string(),
        total_samples: point_results.iter().map(|p| p.total_samples).sum(),
        points: point_results,
        slopes,
    };
    if let Some(path) = &config.output.path {
        export::export(&result, path, config.output.format)?;
    }
    Ok(result)
}

fn run_isolated(point: &SweepPoint, seed: u64, trace_dir: Option<&Path>) -> RunOutput {
    let id = point.config_id;
    match catch_unwind(AssertUnwindSafe(|| run_single(&point.config, id, seed, trace_dir))) {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => RunOutput::failed(id, seed, e.to_string()),
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "run panicked".into());
            RunOutput::failed(id, seed, message)
        }
    }
}

/// Executes one run of `config` with the given seed.
pub fn run_single(
    config: &ExperimentConfig,
    config_id: usize,
    seed: u64,
    trace_dir: Option<&Path>,
) -> Result<RunOutput> {
    let trace_path = trace_dir.map(|d| d.join(format!("run_{config_id}_{seed}.csv")));
    let mut out = match &config.algorithm {
        AlgorithmBlock::Td(block) => run_td(config, block, seed, trace_path)?,
        AlgorithmBlock::Sa(block) => run_sa(config, block, seed, trace_path)?,
        AlgorithmBlock::Ac(block) => run_actor(config, block, Variant::Ac, seed, trace_path)?,
        AlgorithmBlock::Nac(block) => run_actor(config, block, Variant::Nac, seed, trace_path)?,
    };
    out.config_id = config_id;
    Ok(out)
}

fn evaluated_policy(
    config: &ExperimentConfig,
    mdp: &mbac::mdp::FiniteMdp,
    params: &Option<Vec<f64>>,
) -> Result<SoftmaxPolicy> {
    let features = config.policy_features.build(mdp)?;
    let w = match params {
        Some(w) => Vector::from_column_slice(w),
        None => Vector::zeros(features.dim()),
    };
    Ok(SoftmaxPolicy::new(features, w)?)
}

fn tail_mean(values: &[f64]) -> f64 {
    let n = ((values.len() as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, values.len().max(1));
    let tail = &values[values.len().saturating_sub(n)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn write_trace(path: Option<PathBuf>, write: impl FnOnce(std::fs::File) -> std::io::Result<()>) -> Result<()> {
    if let Some(path) = path {
        let file = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        write(file).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}

fn critic_output(seed: u64, trace: &[TraceRow], samples: u64) -> RunOutput {
    let errors: Vec<f64> = trace.iter().map(|r| r.theta_err_sq).collect();
    let mut scalars = BTreeMap::new();
    if let Some(&last) = errors.last() {
        scalars.insert("final_theta_err_sq".into(), last);
        scalars.insert("steady_state_mse".into(), tail_mean(&errors));
    }
    let mut series = BTreeMap::new();
    series.insert(
        "theta_err_sq".to_string(),
        errors.iter().map(|&e| Some(e).filter(|x| x.is_finite())).collect(),
    );
    RunOutput {
        config_id: 0,
        seed,
        t: trace.iter().map(|r| r.k as u64).collect(),
        series,
        scalars,
        samples,
        error: None,
    }
}

fn run_td(config: &ExperimentConfig, block: &TdBlock, seed: u64, trace: Option<PathBuf>) -> Result<RunOutput> {
    let mdp = config.mdp.load()?;
    let policy = evaluated_policy(config, &mdp, &block.policy_params)?;
    let mut model = CriticModel::new(config.critic_features.build(mdp.num_states())?)?;
    let theta_star = td_fixed_point(&mdp, &policy, model.features())?.theta_star;
    let mut cursor = PathCursor::from_init_dist(&mdp, seed);
    let result = minibatch_td(&mdp, &policy, &mut model, &block.td, &mut cursor, Some(&theta_star))?;
    write_trace(trace, |f| write_trace_csv(&result.trace, f))?;
    Ok(critic_output(seed, &result.trace, result.samples))
}

fn run_sa(config: &ExperimentConfig, block: &SaBlock, seed: u64, trace: Option<PathBuf>) -> Result<RunOutput> {
    let mdp = config.mdp.load()?;
    let policy = evaluated_policy(config, &mdp, &block.policy_params)?;
    let model = CriticModel::new(config.critic_features.build(mdp.num_states())?)?;
    let problem = LinearSaProblem::td_embedding(&mdp, &policy, model.features())?;
    let theta0 = Vector::zeros(model.dim());
    let (step_size, iterations, batch_size) = match block.prescribe_target {
        Some(target) => {
            let p = prescribe_for_problem(&problem, &theta0, target)?;
            (p.step_size, p.iterations, p.batch_size)
        }
        None => (block.step_size, block.iterations, block.batch_size),
    };
    let mut cursor = PathCursor::new(0, seed);
    let start = cursor.sample_from(problem.stationary.as_slice());
    cursor.teleport(start);
    let result = linear_sa(
        &problem,
        step_size,
        iterations,
        batch_size,
        &mut cursor,
        theta0,
        Some(&problem.theta_star),
    )?;
    write_trace(trace, |f| write_trace_csv(&result.trace, f))?;
    let mut out = critic_output(seed, &result.trace, (iterations * batch_size) as u64);
    out.scalars.insert("step_size".into(), step_size);
    Ok(out)
}

/// Series names written for actor runs, in CSV order.
pub const ACTOR_METRICS: [&str; 7] = [
    "cumulative_samples",
    "gap",
    "grad_norm_sq",
    "J_w",
    "theta_err_sq",
    "zeta_actor",
    "zeta_critic",
];

fn run_actor(
    config: &ExperimentConfig,
    block: &ActorBlock,
    variant: Variant,
    seed: u64,
    trace_path: Option<PathBuf>,
) -> Result<RunOutput> {
    let mdp = config.mdp.load()?;
    let features = config.policy_features.build(&mdp)?;
    let phi = config.critic_features.build(mdp.num_states())?;
    let mut actor_config = block.actor_config(variant, seed);
    if block.prescribed_step_size {
        let l_j = gradient_lipschitz(&mdp, &features, &PrescriptionOptions::default())?.l_j;
        actor_config.step_size = prescribed_step_size(variant, l_j, block.regularization);
    }
    let trace = actor::run(&mdp, &features, &phi, &actor_config)?;
    write_trace(trace_path, |f| trace.write_csv(f))?;
    Ok(actor_output(seed, &trace, actor_config.step_size))
}

fn actor_output(seed: u64, trace: &RunTrace, step_size: f64) -> RunOutput {
    let finite = |x: f64| Some(x).filter(|v| v.is_finite());
    let column = |f: &dyn Fn(&actor::RunRecord) -> f64| -> Vec<Option<f64>> {
        trace.records.iter().map(|r| finite(f(r))).collect()
    };
    let mut series = BTreeMap::new();
    series.insert("cumulative_samples".to_string(), column(&|r| r.cumulative_samples as f64));
    series.insert("gap".to_string(), column(&|r| r.metrics.gap));
    series.insert("grad_norm_sq".to_string(), column(&|r| r.metrics.grad_norm_sq));
    series.insert("J_w".to_string(), column(&|r| r.metrics.objective));
    series.insert("theta_err_sq".to_string(), column(&|r| r.theta_err_sq));
    series.insert("zeta_actor".to_string(), column(&|r| r.metrics.zeta_actor));
    series.insert("zeta_critic".to_string(), column(&|r| r.metrics.zeta_critic));

    let grads: Vec<f64> = trace.records.iter().map(|r| r.metrics.grad_norm_sq).collect();
    let mut scalars = BTreeMap::new();
    scalars.insert("step_size".into(), step_size);
    scalars.insert("mean_grad_norm_sq".into(), trace.mean_grad_norm_sq());
    scalars.insert("plateau_grad_norm_sq".into(), tail_mean(&grads));
    scalars.insert("mean_gap".into(), trace.mean_gap());
    scalars.insert("gap_t_hat".into(), trace.metrics_at_t_hat().gap);
    scalars.insert("final_gap".into(), trace.final_metrics.gap);
    scalars.insert("final_grad_norm_sq".into(), trace.final_metrics.grad_norm_sq);
    scalars.insert("t_hat".into(), trace.t_hat as f64);
    scalars.insert("path_continuous".into(), f64::from(u8::from(trace.path_is_continuous())));
    scalars.retain(|_, v| v.is_finite());
    RunOutput {
        config_id: 0,
        seed,
        t: trace.records.iter().map(|r| r.t as u64).collect(),
        series,
        scalars,
        samples: trace.total_samples(),
        error: None,
    }
}

fn aggregate_point(point: &SweepPoint, runs: Vec<RunOutput>) -> PointResult {
    let failures: Vec<RunFailure> = runs
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|m| RunFailure {
                seed: r.seed,
                message: m.clone(),
            })
        })
        .collect();
    let ok: Vec<&RunOutput> = runs.iter().filter(|r| r.error.is_none()).collect();
    let mut series = BTreeMap::new();
    if let Some(first) = ok.first() {
        for name in first.series.keys() {
            let len = ok.iter().map(|r| r.series[name].len()).min().unwrap_or(0);
            let stats = (0..len)
                .map(|i| Summary::of(ok.iter().filter_map(|r| r.series[name][i])))
                .collect();
            series.insert(
                name.clone(),
                SeriesSummary {
                    t: first.t[..len].to_vec(),
                    stats,
                },
            );
        }
    }
    let mut scalars = BTreeMap::new();
    let names: std::collections::BTreeSet<&String> = ok.iter().flat_map(|r| r.scalars.keys()).collect();
    for name in names {
        if let Some(s) = Summary::of(ok.iter().filter_map(|r| r.scalars.get(name).copied())) {
            scalars.insert(name.clone(), s);
        }
    }
    PointResult {
        config_id: point.config_id,
        params: point.params.clone(),
        complete: failures.is_empty(),
        failures,
        series,
        scalars,
        total_samples: runs.iter().map(|r| r.samples).sum(),
        runs,
    }
}

/// The other axes' values and the `(x, y)` points sharing them.
type SlopeGroup = (BTreeMap<String, Value>, Vec<(f64, f64)>);

fn fit_slopes(config: &ExperimentConfig, points: &[PointResult]) -> Vec<SlopeFit> {
    let mut fits = Vec::new();
    for check in &config.scaling {
        let mut groups: BTreeMap<String, SlopeGroup> = BTreeMap::new();
        for p in points {
            let Some(x) = p.params.get(&check.axis).and_then(Value::as_f64) else {
                continue;
            };
            let Some(y) = p.scalars.get(&check.metric).map(|s| s.mean) else {
                continue;
            };
            let mut group = p.params.clone();
            group.remove(&check.axis);
            let key = serde_json::to_string(&group).expect("params serialize");
            groups.entry(key).or_insert_with(|| (group, Vec::new())).1.push((x, y));
        }
        for (_, (group, pts)) in groups {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let fit = loglog_fit(&xs, &ys);
            let residuals = match fit {
                Some(f) => pts
                    .iter()
                    .filter(|(x, y)| *x > 0.0 && *y > 0.0)
                    .map(|(x, y)| y.ln() - (f.intercept + f.slope * x.ln()))
                    .collect(),
                None => Vec::new(),
            };
            let within_expected = check
                .expected
                .map(|[lo, hi]| fit.is_some_and(|f| f.slope >= lo && f.slope <= hi));
            fits.push(SlopeFit {
                axis: check.axis.clone(),
                metric: check.metric.clone(),
                group,
                points: pts,
                fit,
                residuals,
                within_expected,
            });
        }
    }
    fits
}
