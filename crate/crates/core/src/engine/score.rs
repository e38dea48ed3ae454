use crate::error::{Error, Result};
use crate::tabular::{l1, MarginalVector, Schema};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// L1 gap between the true and model marginals (counts scale), minus the
/// expected L1 norm of the Gaussian noise the measurement would add.
pub fn score_private(truth: &MarginalVector, model: &MarginalVector, sigma: f64) -> f64 {
    l1(&truth.cells, &model.cells) - SQRT_2_OVER_PI * sigma * truth.len() as f64
}

/// Plain L1 gap for a fully public clique, whose measurement is exact.
pub fn score_public_vertical(schema: &Schema, public: &MarginalVector, model: &MarginalVector) -> Result<f64> {
    if !public.clique.is_all_public(schema) {
        return Err(Error::Visibility(format!("{} touches a private column", public.clique)));
    }
    Ok(l1(&public.cells, &model.cells))
}

/// Score of a public candidate when the public data is a separate, smaller
/// sample of the population: the model error minus the expected error of
/// substituting the public marginal, rescaled to the private row count.
pub fn score_public_horizontal(
    truth: &MarginalVector,
    public: &MarginalVector,
    model: &MarginalVector,
    n_private: usize,
    n_public: usize,
) -> f64 {
    l1(&truth.cells, &model.cells) - (n_private as f64 / n_public as f64) * l1(&truth.cells, &public.cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Clique, Scale};

    fn mv(cells: Vec<f64>) -> MarginalVector {
        let cards = vec![cells.len()];
        MarginalVector::new(Clique::single(0), cards, cells, Scale::Counts).unwrap()
    }

    #[test]
    fn private_score_examples() {
        let a = mv(vec![3.0, 1.0]);
        assert_eq!(score_private(&a, &a, 0.0), 0.0);
        let pen = score_private(&a, &a, 1.5);
        assert!((pen + (2.0 / std::f64::consts::PI).sqrt() * 1.5 * 2.0).abs() < 1e-15);
        let s = score_private(&a, &mv(vec![2.0, 2.0]), 1.0);
        // 2 - sqrt(2/pi) * 2
        let oracle = 2.0 - (2.0f64 / std::f64::consts::PI).sqrt() * 2.0;
        assert!((s - oracle).abs() < 1e-15);
        assert!((s - 0.4042).abs() < 1e-4);
    }

    #[test]
    fn public_vertical_examples() {
        let schema = Schema::anonymous(&[2, 2]).unwrap().with_public_fraction(0.5).unwrap();
        let p = mv(vec![5.0, 5.0]);
        assert_eq!(score_public_vertical(&schema, &p, &p).unwrap(), 0.0);
        assert_eq!(score_public_vertical(&schema, &p, &mv(vec![6.0, 4.0])).unwrap(), 2.0);
        let mut private = mv(vec![5.0, 5.0]);
        private.clique = Clique::single(1);
        assert!(matches!(score_public_vertical(&schema, &private, &private), Err(Error::Visibility(_))));
    }

    #[test]
    fn public_horizontal_examples() {
        let truth = mv(vec![3.0, 1.0]);
        let model = mv(vec![2.0, 2.0]);
        let vertical = score_public_horizontal(&truth, &truth, &model, 4, 4);
        assert_eq!(vertical, l1(&truth.cells, &model.cells));
        // model error 5, public-vs-truth 0.3, |D| / |D_pub| = 10
        let t = mv(vec![10.0, 0.0]);
        let m = mv(vec![7.5, 2.5]);
        let p = mv(vec![9.85, 0.15]);
        let s = score_public_horizontal(&t, &p, &m, 100, 10);
        assert!((s - 2.0).abs() < 1e-12);
    }
}
