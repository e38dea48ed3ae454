use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Clique, MarginalVector, Scale, Source};

/// A (possibly noised) marginal of either the private or the public data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub clique: Clique,
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub source: Source,
}

impl Measurement {
    /// Noise-free measurement of a public marginal.
    pub fn exact(marginal: &MarginalVector) -> Self {
        Self {
            clique: marginal.clique.clone(),
            cards: marginal.cards.clone(),
            values: marginal.cells.clone(),
            sigma: 0.0,
            source: Source::Public,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.sigma == 0.0
    }

    pub fn as_marginal(&self) -> MarginalVector {
        MarginalVector {
            clique: self.clique.clone(),
            cards: self.cards.clone(),
            cells: self.values.clone(),
            scale: Scale::Counts,
        }
    }
}

/// zCDP cost of the Gaussian mechanism with noise scale `sigma` on a
/// sensitivity-1 query.
pub fn gaussian_rho(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma * sigma)
}

/// Noise scale whose Gaussian-mechanism cost is exactly `rho`.
pub fn gaussian_sigma(rho: f64) -> f64 {
    (1.0 / (2.0 * rho)).sqrt()
}

/// Epsilon of an exponential mechanism costing `rho` (rho = eps^2 / 8).
pub fn exponential_epsilon(rho: f64) -> f64 {
    (8.0 * rho).sqrt()
}

/// Adds i.i.d. N(0, sigma^2) noise to every cell of a count-scale marginal.
///
/// Private marginals must be noised; `sigma == 0` is only accepted for
/// public sources.
pub fn gaussian_measure<R: Rng + ?Sized>(
    marginal: &MarginalVector,
    sigma: f64,
    source: Source,
    rng: &mut R,
) -> Result<Measurement> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("invalid noise scale {sigma}")));
    }
    if sigma == 0.0 && source == Source::Private {
        return Err(Error::BudgetExceeded { requested: f64::INFINITY, remaining: 0.0 });
    }
    debug_assert_eq!(marginal.scale, Scale::Counts);
    let values = if sigma == 0.0 {
        marginal.cells.clone()
    } else {
        let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
        marginal.cells.iter().map(|&c| c + normal.sample(rng)).collect()
    };
    Ok(Measurement { clique: marginal.clique.clone(), cards: marginal.cards.clone(), values, sigma, source })
}

/// Selection probabilities `∝ exp(eps * s / (2 * sensitivity))`, computed
/// with the maximum score shifted to zero.
pub fn exponential_probabilities(scores: &[f64], epsilon: f64, sensitivity: f64) -> Vec<f64> {
    let scale = epsilon / (2.0 * sensitivity);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| ((s - max) * scale).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Exponential mechanism over `scores`; returns the selected index.
pub fn exp_select<R: Rng + ?Sized>(scores: &[f64], epsilon: f64, sensitivity: f64, rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Selection("no candidates to select from".into()));
    }
    if !(sensitivity > 0.0) || !(epsilon > 0.0) {
        return Err(Error::Selection(format!("epsilon ({epsilon}) and sensitivity ({sensitivity}) must be positive")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Selection("NaN score".into()));
    }
    let probs = exponential_probabilities(scores, epsilon, sensitivity);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // u landed in the rounding gap above the cumulative sum
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn marginal(cells: Vec<f64>) -> MarginalVector {
        let cards = vec![cells.len()];
        MarginalVector::new(Clique::single(0), cards, cells, Scale::Counts).unwrap()
    }

    #[test]
    fn calibration_identities() {
        assert_eq!(gaussian_sigma(0.5), 1.0);
        assert_eq!(gaussian_rho(1.0), 0.5);
        assert!((exponential_epsilon(0.125) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn public_noiseless_is_identity() {
        let m = marginal(vec![3.0, 1.0, 4.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let out = gaussian_measure(&m, 0.0, Source::Public, &mut rng).unwrap();
        assert_eq!(out.values, m.cells);
    }

    #[test]
    fn private_noiseless_is_rejected() {
        let m = marginal(vec![3.0, 1.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let err = gaussian_measure(&m, 0.0, Source::Private, &mut rng).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }

    #[test]
    fn seeded_measurement_is_deterministic() {
        let m = marginal(vec![10.0; 8]);
        let a = gaussian_measure(&m, 2.0, Source::Private, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let b = gaussian_measure(&m, 2.0, Source::Private, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_candidate_always_selected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(exp_select(&[-5.0], 1.0, 1.0, &mut rng).unwrap(), 0);
        }
        assert!(exp_select(&[], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let p = exponential_probabilities(&[1e6, 1e6 - 1.0, -1e9], 1.0, 1.0);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }
}
