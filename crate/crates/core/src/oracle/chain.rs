//! Stationary distributions and geometric mixing constants of finite
//! Markov chains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalue_moduli, mat_pow, Mat, Vector};

/// Eigenvalues within this distance of the unit circle count as unit-modulus.
const UNIT_EIG_TOL: f64 = 1e-9;
/// Moduli below this are treated as zero. A defective zero eigenvalue comes
/// back from the eigensolver at roughly the square root of machine precision.
const ZERO_EIG_TOL: f64 = 1e-6;
/// TV distances below this end the mixing grid.
const TV_FLOOR: f64 = 1e-12;
const MAX_GRID_T: u64 = 1 << 40;

/// Number of eigenvalues on the unit circle.
pub fn unit_eigenvalue_multiplicity(chain: &Mat) -> usize {
    eigenvalue_moduli(chain)
        .iter()
        .filter(|&&m| (m - 1.0).abs() < UNIT_EIG_TOL)
        .count()
}

/// Unique stationary distribution `mu^T K = mu^T` of an irreducible,
/// aperiodic chain, by solving `(K^T - I) mu = 0` with one equation replaced
/// by the normalization.
pub fn stationary_distribution(chain: &Mat) -> Result<Vector> {
    let n = chain.nrows();
    if n == 0 || chain.ncols() != n {
        return Err(Error::DimensionMismatch("chain must be square".into()));
    }
    let multiplicity = unit_eigenvalue_multiplicity(chain);
    if multiplicity != 1 {
        return Err(Error::NotErgodic { multiplicity });
    }
    stationary_by_solve(chain)
}

/// Linear solve without the ergodicity check (used when uniqueness is known,
/// e.g. chains with a positive restart component).
pub(crate) fn stationary_by_solve(chain: &Mat) -> Result<Vector> {
    let n = chain.nrows();
    let mut system = chain.transpose() - Mat::identity(n, n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(n);
    rhs[n - 1] = 1.0;
    let mu = crate::linalg::solve(&system, &rhs)?;
    // Clip round-off negatives and renormalize.
    let mu = mu.map(|x| x.max(0.0));
    let total = mu.sum();
    Ok(mu / total)
}

/// `max_s TV(K^t(s, .), mu)`.
pub fn worst_case_tv(chain_power: &Mat, mu: &Vector) -> f64 {
    (0..chain_power.nrows())
        .map(|s| {
            0.5 * chain_power
                .row(s)
                .iter()
                .zip(mu.iter())
                .map(|(p, m)| (p - m).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingConstants {
    /// Geometric prefactor: `max_s TV(K^t(s,.), mu) <= kappa * rho^t` on the grid.
    pub kappa: f64,
    /// Second-largest eigenvalue modulus.
    pub rho: f64,
}

impl MixingConstants {
    /// `(1 + (kappa - 1) rho) / (1 - rho)`, the mini-batch correlation factor.
    pub fn correlation_factor(&self) -> f64 {
        (1.0 + (self.kappa - 1.0) * self.rho) / (1.0 - self.rho)
    }

    /// `ceil(log_rho(1/kappa))`, taken as 0 when `rho = 0` or `kappa <= 1`.
    pub fn log_rho_inv_kappa(&self) -> f64 {
        if self.rho <= 0.0 || self.kappa <= 1.0 {
            0.0
        } else {
            ((1.0 / self.kappa).ln() / self.rho.ln()).ceil()
        }
    }

    /// Elementwise worst case of two estimates.
    pub fn max(self, other: MixingConstants) -> MixingConstants {
        MixingConstants {
            kappa: self.kappa.max(other.kappa),
            rho: self.rho.max(other.rho),
        }
    }
}

/// Grid points `t = 0, 1, 2, ...` growing geometrically by 1.25.
fn log_grid() -> impl Iterator<Item = u64> {
    let mut t: u64 = 0;
    std::iter::from_fn(move || {
        let cur = t;
        t = if t < 4 {
            t + 1
        } else {
            ((t as f64) * 1.25).ceil() as u64
        };
        Some(cur)
    })
}

/// Estimated `(kappa, rho)` for an ergodic chain.
///
/// `rho` is the second-largest eigenvalue modulus. `kappa` is the smallest
/// constant with `TV_t <= kappa * rho^t` at every grid point, where the grid
/// runs until `TV_t < 1e-12`. Returns the TV curve (points above that floor)
/// alongside.
pub fn mixing_constants_with_curve(chain: &Mat) -> Result<(MixingConstants, Vec<(u64, f64)>)> {
    let mu = stationary_distribution(chain)?;
    let mut curve = Vec::new();
    for t in log_grid().take_while(|&t| t <= MAX_GRID_T) {
        let tv = worst_case_tv(&mat_pow(chain, t), &mu);
        if tv < TV_FLOOR && t > 0 {
            break;
        }
        curve.push((t, tv));
    }
    let moduli = eigenvalue_moduli(chain);
    let mut rho = moduli.get(1).copied().unwrap_or(0.0);
    if rho < ZERO_EIG_TOL {
        rho = 0.0;
    }
    let tv0 = curve[0].1;
    if rho == 0.0 && curve.len() > 1 {
        // Nilpotent transient: all non-unit eigenvalues vanish but the chain
        // needs more than one step. Use the slowest observed geometric rate.
        rho = curve
            .iter()
            .filter(|&&(t, _)| t > 0)
            .map(|&(t, tv)| (tv / tv0).powf(1.0 / t as f64))
            .fold(0.0, f64::max);
    }
    let kappa = curve
        .iter()
        .map(|&(t, tv)| tv / rho.powf(t as f64))
        .fold(0.0, f64::max);
    Ok((MixingConstants { kappa, rho }, curve))
}

pub fn mixing_constants(chain: &Mat) -> Result<MixingConstants> {
    mixing_constants_with_curve(chain).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym2(stay: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[stay, 1.0 - stay, 1.0 - stay, stay])
    }

    fn random_chain(n: usize, seed: u64) -> Mat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut k = Mat::from_fn(n, n, |_, _| rng.random::<f64>());
        for mut row in k.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        k
    }

    #[test]
    fn symmetric_chain_is_uniform() {
        let mu = stationary_distribution(&sym2(0.5)).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-15 && (mu[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_chain_is_rejected() {
        match stationary_distribution(&Mat::identity(3, 3)) {
            Err(Error::NotErgodic { multiplicity }) => assert_eq!(multiplicity, 3),
            other => panic!("expected NotErgodic, got {other:?}"),
        }
    }

    #[test]
    fn periodic_chain_is_rejected() {
        assert!(matches!(
            stationary_distribution(&sym2(0.0)),
            Err(Error::NotErgodic { multiplicity: 2 })
        ));
    }

    #[test]
    fn random_chain_matches_power_iteration() {
        let k = random_chain(5, 17);
        let mu = stationary_distribution(&k).unwrap();
        let residual = (mu.transpose() * &k - mu.transpose()).amax();
        assert!(residual < 1e-10);
        // independent route: power iteration from uniform
        let mut p = Vector::from_element(5, 0.2);
        for _ in 0..10_000 {
            p = (p.transpose() * &k).transpose();
        }
        assert!((p - mu).amax() < 1e-12);
    }

    #[test]
    fn half_switch_mixes_in_one_step() {
        let c = mixing_constants(&sym2(0.5)).unwrap();
        assert_eq!(c.rho, 0.0);
        assert!((c.kappa - 0.5).abs() < 1e-12);
        assert_eq!(c.correlation_factor(), 1.0);
    }

    #[test]
    fn sticky_chain_rho_is_second_eigenvalue() {
        let (c, curve) = mixing_constants_with_curve(&sym2(0.9)).unwrap();
        assert!((c.rho - 0.8).abs() < 1e-12);
        for (t, tv) in curve {
            assert!(tv <= c.kappa * c.rho.powf(t as f64) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn random_chain_curve_below_bound() {
        for seed in 0..10 {
            let (c, curve) = mixing_constants_with_curve(&random_chain(6, seed)).unwrap();
            assert!(c.rho < 1.0);
            for (t, tv) in curve {
                assert!(tv <= c.kappa * c.rho.powf(t as f64) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn log_factor_convention() {
        let c = MixingConstants {
            kappa: 0.5,
            rho: 0.9,
        };
        assert_eq!(c.log_rho_inv_kappa(), 0.0);
        let c = MixingConstants {
            kappa: 4.0,
            rho: 0.5,
        };
        assert_eq!(c.log_rho_inv_kappa(), 2.0);
        let c = MixingConstants {
            kappa: 4.0,
            rho: 0.0,
        };
        assert_eq!(c.log_rho_inv_kappa(), 0.0);
    }
}
