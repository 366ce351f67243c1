//! Named MDP generators.

use mbac::mdp::FiniteMdp;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Two states; action 0 stays, action 1 switches; reward 1 whenever the
    /// next state is 1; uniform start.
    TwoStateChain,
    /// Each `(s, a)` reaches `branching` distinct successors with
    /// Dirichlet(1) weights; rewards are i.i.d. uniform on `[0, r_max]`.
    RandomGarnet {
        states: usize,
        actions: usize,
        branching: usize,
    },
    /// `size x size` grid with moves up/right/down/left that succeed with
    /// probability 0.9 and otherwise slip to a uniformly random direction.
    /// Entering the far corner pays 1; the corner resets to the origin.
    Gridworld { size: usize },
}

fn default_discount() -> f64 {
    0.9
}

fn default_r_max() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

impl GeneratorSpec {
    pub fn garnet(states: usize, actions: usize, branching: usize, seed: u64) -> Self {
        Self {
            generator: Generator::RandomGarnet {
                states,
                actions,
                branching,
            },
            seed,
            discount: default_discount(),
            r_max: default_r_max(),
        }
    }

    pub fn two_state_chain() -> Self {
        Self {
            generator: Generator::TwoStateChain,
            seed: 0,
            discount: default_discount(),
            r_max: default_r_max(),
        }
    }
}

/// Builds the MDP named by `name` (`two_state_chain`, `random_garnet` or
/// `garnet`, `gridworld`) from a JSON object of its parameters.
pub fn generate_mdp(name: &str, params: &serde_json::Value, seed: u64) -> Result<FiniteMdp> {
    let mut object = match params {
        serde_json::Value::Object(map) => map.clone(),
        serde_json::Value::Null => serde_json::Map::new(),
        other => {
            return Err(HarnessError::Config(format!(
                "generator parameters must be an object, got {other}"
            )))
        }
    };
    let canonical = match name {
        "garnet" => "random_garnet",
        other => other,
    };
    if !matches!(canonical, "two_state_chain" | "random_garnet" | "gridworld") {
        return Err(HarnessError::Config(format!("unknown generator `{name}`")));
    }
    object.insert("name".into(), canonical.into());
    object.insert("seed".into(), seed.into());
    let spec: GeneratorSpec = serde_json::from_value(serde_json::Value::Object(object))
        .map_err(|e| HarnessError::Config(format!("generator `{name}`: {e}")))?;
    build(&spec)
}

pub fn build(spec: &GeneratorSpec) -> Result<FiniteMdp> {
    if !(spec.r_max > 0.0) {
        return Err(HarnessError::Config("r_max must be positive".into()));
    }
    let mdp = match spec.generator {
        Generator::TwoStateChain => two_state_chain(spec.discount, spec.r_max),
        Generator::RandomGarnet {
            states,
            actions,
            branching,
        } => garnet(states, actions, branching, spec.discount, spec.r_max, spec.seed),
        Generator::Gridworld { size } => gridworld(size, spec.discount, spec.r_max),
    }?;
    Ok(mdp)
}

fn two_state_chain(discount: f64, r_max: f64) -> Result<FiniteMdp> {
    let p = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let r: Vec<f64> = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        .iter()
        .map(|x| x * r_max)
        .collect();
    Ok(FiniteMdp::new(2, 2, p, r, vec![0.5, 0.5], discount, r_max)?)
}

fn garnet(
    states: usize,
    actions: usize,
    branching: usize,
    discount: f64,
    r_max: f64,
    seed: u64,
) -> Result<FiniteMdp> {
    if states == 0 || actions == 0 || branching == 0 || branching > states {
        return Err(HarnessError::Config(format!(
            "garnet needs 1 <= branching <= states, got S={states}, A={actions}, b={branching}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; states * actions * states];
    for row in p.chunks_mut(states) {
        let targets = sample(&mut rng, states, branching);
        let weights: Vec<f64> = (0..branching).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        for (target, w) in targets.iter().zip(&weights) {
            row[target] = w / total;
        }
    }
    let r = (0..states * actions * states)
        .map(|_| rng.random::<f64>() * r_max)
        .collect();
    let xi = vec![1.0 / states as f64; states];
    Ok(FiniteMdp::new(states, actions, p, r, xi, discount, r_max)?)
}

const SLIP: f64 = 0.1;

fn gridworld(size: usize, discount: f64, r_max: f64) -> Result<FiniteMdp> {
    if size < 2 {
        return Err(HarnessError::Config("gridworld needs size >= 2".into()));
    }
    let ns = size * size;
    let goal = ns - 1;
    let moves: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
    let target = |s: usize, m: usize| -> usize {
        let (row, col) = ((s / size) as isize, (s % size) as isize);
        let (nr, nc) = (row + moves[m].0, col + moves[m].1);
        if nr < 0 || nc < 0 || nr >= size as isize || nc >= size as isize {
            s
        } else {
            nr as usize * size + nc as usize
        }
    };
    let mut p = vec![0.0; ns * 4 * ns];
    let mut r = vec![0.0; ns * 4 * ns];
    for s in 0..ns {
        for a in 0..4 {
            let row = &mut p[(s * 4 + a) * ns..(s * 4 + a + 1) * ns];
            if s == goal {
                row[0] = 1.0;
                continue;
            }
            row[target(s, a)] += 1.0 - SLIP;
            for m in 0..4 {
                row[target(s, m)] += SLIP / 4.0;
            }
            r[(s * 4 + a) * ns + goal] = r_max;
        }
    }
    let xi = vec![1.0 / ns as f64; ns];
    Ok(FiniteMdp::new(ns, 4, p, r, xi, discount, r_max)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mbac::oracle::optimal_value;

    #[test]
    fn two_state_chain_optimum_is_geometric_series() {
        let mdp = build(&GeneratorSpec::two_state_chain()).unwrap();
        let opt = optimal_value(&mdp);
        assert!((opt.objective - 10.0).abs() < 1e-9);
        assert_eq!(opt.greedy, vec![1, 0]);
    }

    #[test]
    fn garnet_is_deterministic_in_seed() {
        let a = build(&GeneratorSpec::garnet(5, 3, 2, 7)).unwrap();
        let b = build(&GeneratorSpec::garnet(5, 3, 2, 7)).unwrap();
        let c = build(&GeneratorSpec::garnet(5, 3, 2, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn garnets_validate_and_have_branching_support() {
        for seed in 0..100 {
            let mdp = build(&GeneratorSpec::garnet(5, 3, 2, seed)).unwrap();
            assert!(mdp.validate().is_valid(), "seed {seed}");
            for s in 0..5 {
                for a in 0..3 {
                    let support = mdp.transition_row(s, a).iter().filter(|&&p| p > 0.0).count();
                    assert_eq!(support, 2);
                    assert!(mdp.reward_row(s, a).iter().all(|&r| (0.0..=1.0).contains(&r)));
                }
            }
        }
    }

    #[test]
    fn gridworld_validates() {
        let mdp = build(&GeneratorSpec {
            generator: Generator::Gridworld { size: 3 },
            seed: 0,
            discount: 0.95,
            r_max: 1.0,
        })
        .unwrap();
        assert!(mdp.validate().is_valid());
        assert_eq!(mdp.num_states(), 9);
        assert!(optimal_value(&mdp).objective > 0.0);
    }

    #[test]
    fn named_generation() {
        let params = serde_json::json!({"states": 4, "actions": 2, "branching": 3});
        let a = generate_mdp("garnet", &params, 3).unwrap();
        let b = build(&GeneratorSpec::garnet(4, 2, 3, 3)).unwrap();
        assert_eq!(a, b);
        assert!(generate_mdp("two_state_chain", &serde_json::Value::Null, 0).is_ok());
        assert!(matches!(
            generate_mdp("maze", &serde_json::Value::Null, 0),
            Err(HarnessError::Config(_))
        ));
        assert!(generate_mdp("garnet", &serde_json::json!({"states": 4}), 0).is_err());
    }
}
