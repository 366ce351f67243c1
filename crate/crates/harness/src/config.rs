//! Experiment configuration: MDP source, feature specs, algorithm block,
//! sweep axes and output settings. Accepted as TOML or JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mbac::actor::{ActorConfig, Variant};
use mbac::critic::TdConfig;
use mbac::linalg::Mat;
use mbac::mdp::{FiniteMdp, KernelChoice, MdpDefinition};
use mbac::policy::{random_parameters, PolicyFeatures};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::generate::{self, GeneratorSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MdpSource {
    Inline { definition: MdpDefinition },
    File { path: PathBuf },
    Generator(GeneratorSpec),
}

impl MdpSource {
    pub fn load(&self) -> Result<FiniteMdp> {
        match self {
            Self::Inline { definition } => Ok(definition.clone().into_mdp()?),
            Self::File { path } => Ok(FiniteMdp::load(path)?),
            Self::Generator(spec) => generate::build(spec),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFeatureSpec {
    #[default]
    Tabular,
    /// Nested `S x A x d1` array.
    Explicit { values: Vec<Vec<Vec<f64>>> },
    /// I.i.d. standard normal entries, rescaled so the largest row norm is 1.
    Random { dim: usize, seed: u64 },
}

impl PolicyFeatureSpec {
    pub fn build(&self, mdp: &FiniteMdp) -> Result<Arc<PolicyFeatures>> {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let features = match self {
            Self::Tabular => PolicyFeatures::tabular(s, a),
            Self::Explicit { values } => PolicyFeatures::from_nested(values)?,
            Self::Random { dim, seed } => {
                let flat = random_parameters(s * a * dim, 1, 1.0, *seed)
                    .pop()
                    .map(|v| v.iter().copied().collect())
                    .unwrap_or_default();
                PolicyFeatures::from_flat(s, a, *dim, flat)?
            }
        };
        if features.num_states() != s || features.num_actions() != a {
            return Err(HarnessError::Config(format!(
                "policy features are {}x{}, MDP is {s}x{a}",
                features.num_states(),
                features.num_actions()
            )));
        }
        Ok(Arc::new(features))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticFeatureSpec {
    #[default]
    Tabular,
    /// `S x d2` rows.
    Explicit { values: Vec<Vec<f64>> },
    /// I.i.d. standard normal rows normalized to unit length.
    Random { dim: usize, seed: u64 },
}

impl CriticFeatureSpec {
    pub fn build(&self, num_states: usize) -> Result<Mat> {
        let phi = match self {
            Self::Tabular => Mat::identity(num_states, num_states),
            Self::Explicit { values } => {
                let dim = values.first().map_or(0, Vec::len);
                if values.len() != num_states || values.iter().any(|r| r.len() != dim) || dim == 0 {
                    return Err(HarnessError::Config(format!(
                        "critic features must be a non-empty {num_states} x d2 array"
                    )));
                }
                Mat::from_fn(num_states, dim, |i, j| values[i][j])
            }
            Self::Random { dim, seed } => {
                let flat = random_parameters(num_states * dim, 1, 1.0, *seed)
                    .pop()
                    .unwrap_or_else(|| mbac::linalg::Vector::zeros(0));
                let mut phi = Mat::from_row_slice(num_states, *dim, flat.as_slice());
                for mut row in phi.row_iter_mut() {
                    let n = row.norm();
                    if n > 0.0 {
                        row /= n;
                    }
                }
                phi
            }
        };
        Ok(phi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdBlock {
    #[serde(flatten)]
    pub td: TdConfig,
    /// Policy parameters to evaluate; defaults to zero (uniform policy).
    #[serde(default)]
    pub policy_params: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaBlock {
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub policy_params: Option<Vec<f64>>,
    /// When set, the stepsize, iteration count and batch size are replaced by
    /// the guaranteed-accuracy prescription for this target error.
    #[serde(default)]
    pub prescribe_target: Option<f64>,
}

fn default_regularization() -> f64 {
    1e-3
}

fn default_successor() -> KernelChoice {
    KernelChoice::Visitation
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorBlock {
    pub step_size: f64,
    /// Replace `step_size` by `1/(4 L_J)` (AC) or
    /// `lambda^2 / (4 L_J (1 + lambda))` (NAC) for this problem.
    #[serde(default)]
    pub prescribed_step_size: bool,
    pub batch_size: usize,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
    pub iterations: usize,
    pub critic: TdConfig,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_successor")]
    pub successor: KernelChoice,
    #[serde(default)]
    pub initial_params: Option<Vec<f64>>,
}

impl ActorBlock {
    pub fn actor_config(&self, variant: Variant, seed: u64) -> ActorConfig {
        ActorConfig {
            variant,
            step_size: self.step_size,
            batch_size: self.batch_size,
            regularization: self.regularization,
            iterations: self.iterations,
            critic: self.critic,
            warm_start: self.warm_start,
            successor: self.successor,
            initial_params: self.initial_params.clone(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmBlock {
    Td(TdBlock),
    Sa(SaBlock),
    Ac(ActorBlock),
    Nac(ActorBlock),
}

impl AlgorithmBlock {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Td(_) => "td",
            Self::Sa(_) => "sa",
            Self::Ac(_) => "ac",
            Self::Nac(_) => "nac",
        }
    }
}

/// A log-log fit of a per-run scalar against one sweep axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingCheck {
    pub axis: String,
    pub metric: String,
    /// Inclusive slope range the fit is expected to land in.
    #[serde(default)]
    pub expected: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Also write one per-iteration CSV per run.
    #[serde(default)]
    pub trace: bool,
}

fn default_name() -> String {
    "experiment".into()
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub mdp: MdpSource,
    #[serde(default)]
    pub policy_features: PolicyFeatureSpec,
    #[serde(default)]
    pub critic_features: CriticFeatureSpec,
    pub algorithm: AlgorithmBlock,
    /// Dotted parameter path (e.g. `algorithm.batch_size`) to the values it
    /// takes; the sweep is the Cartesian product in key order.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub scaling: Vec<ScalingCheck>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// One point of the sweep grid with its fully substituted configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub config_id: usize,
    pub params: BTreeMap<String, Value>,
    pub config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let config = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64)
            .map(|i| self.base_seed.wrapping_add(i))
            .collect()
    }

    /// SHA-256 of the canonical JSON encoding, leaving out the output
    /// settings and worker count, which do not affect any result.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSpec::default();
        canonical.workers = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        for (axis, values) in &self.sweep {
            if values.is_empty() {
                return Err(HarnessError::Config(format!("sweep axis `{axis}` has no values")));
            }
        }
        for check in &self.scaling {
            if !self.sweep.contains_key(&check.axis) {
                return Err(HarnessError::Config(format!(
                    "scaling check refers to `{}`, which is not a sweep axis",
                    check.axis
                )));
            }
        }
        for point in self.sweep_points()? {
            point.config.validate_point()?;
        }
        Ok(())
    }

    fn validate_point(&self) -> Result<()> {
        let check = |r: mbac::Result<()>| r.map_err(|e| HarnessError::Config(e.to_string()));
        match &self.algorithm {
            AlgorithmBlock::Td(b) => check(b.td.validate()),
            AlgorithmBlock::Sa(b) => {
                if !(b.step_size > 0.0) || b.iterations == 0 || b.batch_size == 0 {
                    return Err(HarnessError::Config(
                        "SA needs a positive stepsize, iteration count and batch size".into(),
                    ));
                }
                match b.prescribe_target {
                    Some(t) if !(t > 0.0) => {
                        Err(HarnessError::Config("prescribe_target must be positive".into()))
                    }
                    _ => Ok(()),
                }
            }
            AlgorithmBlock::Ac(b) => check(b.actor_config(Variant::Ac, 0).validate()),
            AlgorithmBlock::Nac(b) => check(b.actor_config(Variant::Nac, 0).validate()),
        }
    }

    /// Expands the sweep axes. Every axis must name a parameter that is
    /// present in the serialized configuration.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let mut base = self.clone();
        base.sweep.clear();
        base.scaling.clear();
        let base_value = serde_json::to_value(&base)?;
        for axis in self.sweep.keys() {
            if lookup(&base_value, axis).is_none() {
                return Err(HarnessError::Config(format!("sweep axis `{axis}` is not a parameter")));
            }
        }
        let mut combos: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for (axis, values) in &self.sweep {
            combos = combos
                .into_iter()
                .flat_map(|combo| {
                    values.iter().map(move |v| {
                        let mut next = combo.clone();
                        next.insert(axis.clone(), v.clone());
                        next
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .enumerate()
            .map(|(config_id, params)| {
                let mut value = base_value.clone();
                for (axis, v) in &params {
                    *lookup(&mut value, axis).expect("checked above") = v.clone();
                }
                let config: ExperimentConfig = serde_json::from_value(value)
                    .map_err(|e| HarnessError::Config(format!("sweep point {params:?}: {e}")))?;
                Ok(SweepPoint {
                    config_id,
                    params,
                    config,
                })
            })
            .collect()
    }
}

fn lookup<V: LookupMut>(value: V, path: &str) -> Option<V> {
    path.split('.').try_fold(value, |v, key| v.child(key))
}

trait LookupMut: Sized {
    fn child(self, key: &str) -> Option<Self>;
}

impl LookupMut for &Value {
    fn child(self, key: &str) -> Option<Self> {
        self.as_object()?.get(key)
    }
}

impl LookupMut for &mut Value {
    fn child(self, key: &str) -> Option<Self> {
        self.as_object_mut()?.get_mut(key)
    }
}
