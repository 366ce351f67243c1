//! Tabular MDPs and the two Markovian samplers.
//!
//! Both samplers advance a single [`PathCursor`]. The critic samples with
//! the raw kernel `P`, the actor with the restart-modified kernel
//! `P~(.|s,a) = gamma * P(.|s,a) + (1 - gamma) * xi`, whose stationary
//! state-action distribution is the discounted visitation measure.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability rows must sum to one within this tolerance.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    /// `P[s][a][s']`, flattened row-major.
    transition: Vec<f64>,
    /// `r[s][a][s']`, flattened row-major.
    reward: Vec<f64>,
    init_dist: Vec<f64>,
    discount: f64,
    r_max: f64,
}

impl FiniteMdp {
    /// Builds an MDP and rejects it unless [`FiniteMdp::validate`] is clean.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        init_dist: Vec<f64>,
        discount: f64,
        r_max: f64,
    ) -> Result<Self> {
        let mdp = Self::new_unchecked(
            num_states,
            num_actions,
            transition,
            reward,
            init_dist,
            discount,
            r_max,
        );
        let report = mdp.validate();
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report.to_string()))
        }
    }

    /// Builds an MDP without checking any invariant. Use [`FiniteMdp::validate`]
    /// to inspect it.
    pub fn new_unchecked(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        init_dist: Vec<f64>,
        discount: f64,
        r_max: f64,
    ) -> Self {
        Self {
            num_states,
            num_actions,
            transition,
            reward,
            init_dist,
            discount,
            r_max,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_state_actions(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    #[inline]
    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    /// `P(.|s,a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.transition[o..o + self.num_states]
    }

    /// `r(s,a,.)`.
    #[inline]
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.reward[o..o + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.offset(s, a) + next]
    }

    /// Expected one-step reward `sum_s' P(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(self.reward_row(s, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    /// Row `(s,a)` of the chosen kernel as an explicit distribution.
    pub fn kernel_row(&self, s: usize, a: usize, kernel: KernelChoice) -> Vec<f64> {
        match kernel {
            KernelChoice::Raw => self.transition_row(s, a).to_vec(),
            KernelChoice::Visitation => {
                let g = self.discount;
                self.transition_row(s, a)
                    .iter()
                    .zip(&self.init_dist)
                    .map(|(p, x)| g * p + (1.0 - g) * x)
                    .collect()
            }
        }
    }

    /// Copy of this MDP with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Self {
        let mut out = self.clone();
        out.discount = discount;
        out
    }

    /// Copy with every reward replaced.
    pub fn with_rewards(&self, reward: Vec<f64>, r_max: f64) -> Self {
        let mut out = self.clone();
        out.reward = reward;
        out.r_max = r_max;
        out
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 {
            violations.push(Violation::EmptySpace {
                num_states: ns,
                num_actions: na,
            });
            return ValidationReport { violations };
        }
        let expected = ns * na * ns;
        if self.transition.len() != expected {
            violations.push(Violation::Shape {
                field: "transition",
                expected,
                found: self.transition.len(),
            });
        }
        if self.reward.len() != expected {
            violations.push(Violation::Shape {
                field: "reward",
                expected,
                found: self.reward.len(),
            });
        }
        if self.init_dist.len() != ns {
            violations.push(Violation::Shape {
                field: "init_dist",
                expected: ns,
                found: self.init_dist.len(),
            });
        }
        if !violations.is_empty() {
            return ValidationReport { violations };
        }

        for s in 0..ns {
            for a in 0..na {
                let row = self.transition_row(s, a);
                for (next, &p) in row.iter().enumerate() {
                    if !(p >= 0.0) || !p.is_finite() {
                        violations.push(Violation::NegativeProbability {
                            state: s,
                            action: a,
                            next_state: next,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    violations.push(Violation::RowSum {
                        state: s,
                        action: a,
                        sum,
                        deficit: 1.0 - sum,
                    });
                }
                for (next, &r) in self.reward_row(s, a).iter().enumerate() {
                    if !r.is_finite() || r.abs() > self.r_max {
                        violations.push(Violation::RewardBound {
                            state: s,
                            action: a,
                            next_state: next,
                            value: r,
                            r_max: self.r_max,
                        });
                    }
                }
            }
        }
        for (s, &x) in self.init_dist.iter().enumerate() {
            if !(x >= 0.0) || !x.is_finite() {
                violations.push(Violation::NegativeInitMass { state: s, value: x });
            }
        }
        let sum: f64 = self.init_dist.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            violations.push(Violation::InitDistSum { sum });
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            violations.push(Violation::Discount {
                value: self.discount,
            });
        }
        if !(self.r_max >= 0.0) || !self.r_max.is_finite() {
            violations.push(Violation::RewardScale { r_max: self.r_max });
        }
        ValidationReport { violations }
    }

    /// Parses an MDP definition (JSON, or TOML when the text does not start
    /// with `{`) and rejects it unless it validates.
    pub fn from_definition_str(text: &str) -> Result<Self> {
        let def: MdpDefinition = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
        };
        def.into_mdp()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_definition_str(&text)
    }

    /// Nested-array definition of this MDP.
    pub fn to_definition(&self) -> MdpDefinition {
        let (ns, na) = (self.num_states, self.num_actions);
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| {
                            let o = self.offset(s, a);
                            flat[o..o + ns].to_vec()
                        })
                        .collect()
                })
                .collect()
        };
        MdpDefinition {
            num_states: ns,
            num_actions: na,
            transition: nest(&self.transition),
            reward: Some(nest(&self.reward)),
            reward_fn: None,
            init_dist: self.init_dist.clone(),
            discount: self.discount,
            r_max: self.r_max,
        }
    }
}

/// On-disk MDP definition: nested `S x A x S` arrays, with the reward either
/// given explicitly or through the `reward_fn` shorthand
/// `"indicator_next_state=k"` (reward 1 whenever the next state is `k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDefinition {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_fn: Option<String>,
    pub init_dist: Vec<f64>,
    pub discount: f64,
    pub r_max: f64,
}

impl MdpDefinition {
    pub fn into_mdp(self) -> Result<FiniteMdp> {
        let (ns, na) = (self.num_states, self.num_actions);
        let flatten = |name: &str, nested: &[Vec<Vec<f64>>]| -> Result<Vec<f64>> {
            if nested.len() != ns || nested.iter().any(|row| row.len() != na) {
                return Err(Error::Parse(format!("{name} must have shape {ns}x{na}x{ns}")));
            }
            let mut flat = Vec::with_capacity(ns * na * ns);
            for row in nested.iter().flatten() {
                if row.len() != ns {
                    return Err(Error::Parse(format!("{name} must have shape {ns}x{na}x{ns}")));
                }
                flat.extend_from_slice(row);
            }
            Ok(flat)
        };
        let transition = flatten("transition", &self.transition)?;
        let reward = match (&self.reward, &self.reward_fn) {
            (Some(r), None) => flatten("reward", r)?,
            (None, Some(f)) => reward_from_shorthand(f, ns, na)?,
            (Some(_), Some(_)) => {
                return Err(Error::Parse(
                    "give either `reward` or `reward_fn`, not both".into(),
                ))
            }
            (None, None) => return Err(Error::Parse("missing `reward` or `reward_fn`".into())),
        };
        FiniteMdp::new(
            ns,
            na,
            transition,
            reward,
            self.init_dist,
            self.discount,
            self.r_max,
        )
    }
}

fn reward_from_shorthand(spec: &str, ns: usize, na: usize) -> Result<Vec<f64>> {
    let target = spec
        .trim()
        .strip_prefix("indicator_next_state=")
        .ok_or_else(|| Error::Parse(format!("unknown reward_fn `{spec}`")))?;
    let k: usize = target
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad state index in reward_fn `{spec}`")))?;
    if k >= ns {
        return Err(Error::Parse(format!("reward_fn state {k} out of range")));
    }
    let mut reward = vec![0.0; ns * na * ns];
    for chunk in reward.chunks_mut(ns) {
        chunk[k] = 1.0;
    }
    Ok(reward)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptySpace {
        num_states: usize,
        num_actions: usize,
    },
    Shape {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    NegativeProbability {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
        deficit: f64,
    },
    RewardBound {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
        r_max: f64,
    },
    NegativeInitMass {
        state: usize,
        value: f64,
    },
    InitDistSum {
        sum: f64,
    },
    Discount {
        value: f64,
    },
    RewardScale {
        r_max: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace {
                num_states,
                num_actions,
            } => write!(f, "empty space: S={num_states}, A={num_actions}"),
            Violation::Shape {
                field,
                expected,
                found,
            } => write!(f, "{field}: expected {expected} entries, found {found}"),
            Violation::NegativeProbability {
                state,
                action,
                next_state,
                value,
            } => write!(
                f,
                "P[{state}][{action}][{next_state}] = {value} is not a probability"
            ),
            Violation::RowSum {
                state,
                action,
                sum,
                deficit,
            } => write!(
                f,
                "P[{state}][{action}] sums to {sum} (deficit {deficit:e})"
            ),
            Violation::RewardBound {
                state,
                action,
                next_state,
                value,
                r_max,
            } => write!(
                f,
                "|r[{state}][{action}][{next_state}]| = {} exceeds r_max = {r_max}",
                value.abs()
            ),
            Violation::NegativeInitMass { state, value } => {
                write!(f, "init_dist[{state}] = {value} is not a probability")
            }
            Violation::InitDistSum { sum } => write!(f, "init_dist sums to {sum}"),
            Violation::Discount { value } => write!(f, "discount {value} not in (0, 1)"),
            Violation::RewardScale { r_max } => write!(f, "r_max {r_max} is not a finite bound"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    /// `P(.|s,a)`.
    Raw,
    /// `gamma * P(.|s,a) + (1 - gamma) * xi`.
    Visitation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    /// The successor was drawn from `xi` by the restart branch of the
    /// visitation kernel.
    pub restarted: bool,
}

/// Position on the single sample path together with its random stream.
///
/// The generator is ChaCha8 keyed by a 64-bit seed, so a cursor's future is
/// fully determined by its seed and the draws already taken.
#[derive(Clone, Debug)]
pub struct PathCursor {
    state: usize,
    rng: ChaCha8Rng,
    steps: u64,
}

impl PathCursor {
    pub fn new(state: usize, seed: u64) -> Self {
        Self {
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
        }
    }

    /// Cursor whose initial state is drawn from `xi` using its own stream.
    pub fn from_init_dist(mdp: &FiniteMdp, seed: u64) -> Self {
        let mut cursor = Self::new(0, seed);
        let u = cursor.uniform();
        cursor.state = sample_index(mdp.init_dist(), u);
        cursor
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Number of transitions taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Draws an index from `probs` by inverse CDF on one uniform.
    pub fn sample_from(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        sample_index(probs, u)
    }

    /// Moves the cursor without consuming randomness.
    pub fn teleport(&mut self, state: usize) {
        self.state = state;
    }
}

/// Inverse-CDF lookup. Falls back to the last index with positive mass when
/// rounding leaves `u` beyond the accumulated total.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Anything that assigns action probabilities to states.
pub trait Policy {
    fn num_actions(&self) -> usize;

    fn action_probs(&self, state: usize) -> Vec<f64>;

    /// Action by inverse CDF on one uniform from the cursor.
    fn sample_action(&self, cursor: &mut PathCursor, state: usize) -> usize {
        let probs = self.action_probs(state);
        cursor.sample_from(&probs)
    }
}

/// Explicit `S x A` probability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TablePolicy {
    pub num_actions: usize,
    pub probs: Vec<f64>,
}

impl TablePolicy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self { num_actions, probs }
    }
}

impl Policy for TablePolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, state: usize) -> Vec<f64> {
        self.probs[state * self.num_actions..(state + 1) * self.num_actions].to_vec()
    }
}

/// Advances the path by one transition from the cursor's current state.
///
/// Under [`KernelChoice::Visitation`] a Bernoulli(1 - gamma) draw is taken
/// first; on success the successor comes from `xi`, otherwise from `P`.
pub fn step(
    mdp: &FiniteMdp,
    cursor: &mut PathCursor,
    action: usize,
    kernel: KernelChoice,
) -> Result<TransitionSample> {
    let state = cursor.state;
    if state >= mdp.num_states() {
        return Err(Error::StateOutOfRange {
            state,
            num_states: mdp.num_states(),
        });
    }
    if action >= mdp.num_actions() {
        return Err(Error::ActionOutOfRange {
            action,
            num_actions: mdp.num_actions(),
        });
    }
    let restarted = match kernel {
        KernelChoice::Raw => false,
        KernelChoice::Visitation => cursor.uniform() < 1.0 - mdp.discount(),
    };
    let next_state = if restarted {
        cursor.sample_from(mdp.init_dist())
    } else {
        cursor.sample_from(mdp.transition_row(state, action))
    };
    cursor.state = next_state;
    cursor.steps += 1;
    Ok(TransitionSample {
        state,
        action,
        next_state,
        reward: mdp.reward(state, action, next_state),
        restarted,
    })
}

/// `len` consecutive transitions under `policy` on one path.
pub fn sample_trajectory<P: Policy + ?Sized>(
    mdp: &FiniteMdp,
    cursor: &mut PathCursor,
    policy: &P,
    len: usize,
    kernel: KernelChoice,
) -> Result<Vec<TransitionSample>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let action = policy.sample_action(cursor, cursor.state);
        out.push(step(mdp, cursor, action, kernel)?);
    }
    Ok(out)
}
