use serde::{Deserialize, Serialize};

use super::dataset::{Clique, ColumnSource};
use super::schema::Schema;
use crate::error::{Error, Result};
use crate::factor::Factor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Counts,
    Probability,
}

/// Flattened contingency table over a clique's product domain.
///
/// Cells are laid out row-major over the clique's columns in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalVector {
    pub clique: Clique,
    pub cards: Vec<usize>,
    pub cells: Vec<f64>,
    pub scale: Scale,
}

impl MarginalVector {
    pub fn new(clique: Clique, cards: Vec<usize>, cells: Vec<f64>, scale: Scale) -> Result<Self> {
        if cards.len() != clique.len() || cells.len() != cards.iter().product::<usize>() {
            return Err(Error::SchemaMismatch(format!(
                "marginal over {clique} has {} cells, expected {}",
                cells.len(),
                cards.iter().product::<usize>()
            )));
        }
        Ok(Self { clique, cards, cells, scale })
    }

    pub fn from_factor(factor: Factor, scale: Scale) -> Self {
        let clique = Clique::new(factor.vars().to_vec()).expect("factor vars are distinct");
        let cards = factor.cards().to_vec();
        Self { clique, cards, cells: factor.into_values(), scale }
    }

    pub fn to_factor(&self) -> Factor {
        Factor::new(self.clique.indices().to_vec(), self.cards.clone(), self.cells.clone())
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Divides by the total (a zero total yields the uniform distribution).
    pub fn to_probability(&self) -> MarginalVector {
        let total = self.total();
        let cells = if total > 0.0 {
            self.cells.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / self.cells.len() as f64; self.cells.len()]
        };
        MarginalVector { cells, scale: Scale::Probability, ..self.clone() }
    }

    /// Rescales so the cells sum to `n`.
    pub fn to_counts(&self, n: f64) -> MarginalVector {
        let p = self.to_probability();
        MarginalVector { cells: p.cells.iter().map(|c| c * n).collect(), scale: Scale::Counts, ..p }
    }

    pub fn l1_distance(&self, other: &MarginalVector) -> f64 {
        debug_assert_eq!(self.clique, other.clique);
        l1(&self.cells, &other.cells)
    }

    /// Sums out every column not in `sub`.
    pub fn project(&self, sub: &Clique) -> Result<MarginalVector> {
        if !sub.is_subset_of(self.clique.indices()) {
            return Err(Error::SchemaMismatch(format!("{sub} is not a subset of {}", self.clique)));
        }
        Ok(MarginalVector::from_factor(self.to_factor().sum_onto(sub.indices()), self.scale))
    }
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Exact marginal of `data` over `clique`.
///
/// Fails with a visibility error when `data` does not hold one of the
/// clique's columns and with a schema mismatch for out-of-range indices.
pub fn compute_marginal<S: ColumnSource + ?Sized>(data: &S, clique: &Clique, scale: Scale) -> Result<MarginalVector> {
    let schema: &Schema = data.schema();
    clique.validate(schema)?;
    let cards = clique.cards(schema);
    let size: usize = cards.iter().product();
    let n = data.n();
    let mut cells = vec![0.0; size];
    if clique.is_empty() {
        cells[0] = n as f64;
    } else {
        let mut flat = vec![0usize; n];
        for (&col_idx, &card) in clique.indices().iter().zip(&cards) {
            let col = data.column(col_idx).ok_or_else(|| {
                Error::Visibility(format!("column '{}' is not available in this view", schema.column(col_idx).name))
            })?;
            for (f, &v) in flat.iter_mut().zip(col) {
                *f = *f * card + v as usize;
            }
        }
        for f in flat {
            cells[f] += 1.0;
        }
    }
    let m = MarginalVector { clique: clique.clone(), cards, cells, scale: Scale::Counts };
    Ok(match scale {
        Scale::Counts => m,
        Scale::Probability => m.to_probability(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::dataset::DiscreteDataset;
    use proptest::prelude::*;

    fn four_rows() -> DiscreteDataset {
        let schema = Schema::anonymous(&[2, 2]).unwrap();
        DiscreteDataset::from_rows(schema, &[vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 1]]).unwrap()
    }

    #[test]
    fn counts_on_small_dataset() {
        let d = four_rows();
        let m = compute_marginal(&d, &Clique::new(vec![0, 1]).unwrap(), Scale::Counts).unwrap();
        assert_eq!(m.cells, vec![1.0, 1.0, 0.0, 2.0]);
        let m1 = compute_marginal(&d, &Clique::single(1), Scale::Counts).unwrap();
        assert_eq!(m1.cells, vec![1.0, 3.0]);
        let m0 = compute_marginal(&d, &Clique::empty(), Scale::Counts).unwrap();
        assert_eq!(m0.cells, vec![4.0]);
        let p = compute_marginal(&d, &Clique::single(1), Scale::Probability).unwrap();
        assert_eq!(p.cells, vec![0.25, 0.75]);
    }

    #[test]
    fn out_of_range_clique_is_schema_mismatch() {
        let d = four_rows();
        let err = compute_marginal(&d, &Clique::single(5), Scale::Counts).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn view_refuses_absent_columns() {
        let d = four_rows();
        let d = d.with_schema(d.schema().with_public_columns(&["c0"]).unwrap()).unwrap();
        let (public, _) = d.vertical_split();
        let err = compute_marginal(&public, &Clique::new(vec![0, 1]).unwrap(), Scale::Counts).unwrap_err();
        assert!(matches!(err, Error::Visibility(_)));
        let ok = compute_marginal(&public, &Clique::single(0), Scale::Counts).unwrap();
        let full = compute_marginal(&d, &Clique::single(0), Scale::Counts).unwrap();
        assert_eq!(ok, full);
    }

    fn dataset_strategy() -> impl Strategy<Value = DiscreteDataset> {
        (prop::collection::vec(1usize..4, 1..5), 0usize..40).prop_flat_map(|(cards, n)| {
            let cols = cards.iter().map(|&c| prop::collection::vec(0u32..c as u32, n)).collect::<Vec<_>>();
            (Just(cards), cols).prop_map(|(cards, cols)| {
                DiscreteDataset::from_columns(Schema::anonymous(&cards).unwrap(), cols).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn counts_sum_to_n_and_marginals_are_consistent(d in dataset_strategy()) {
            let all = Clique::new((0..d.d()).collect()).unwrap();
            let full = compute_marginal(&d, &all, Scale::Counts).unwrap();
            prop_assert_eq!(full.total(), d.n() as f64);
            for sub in all.subsets() {
                let direct = compute_marginal(&d, &sub, Scale::Counts).unwrap();
                let projected = full.project(&sub).unwrap();
                prop_assert_eq!(direct.cells, projected.cells);
            }
        }

        #[test]
        fn public_clique_equal_on_public_view(d in dataset_strategy(), p in 0.0f64..=1.0) {
            let d = d.with_schema(d.schema().with_public_fraction(p).unwrap()).unwrap();
            let (public, _) = d.vertical_split();
            let pubs = Clique::new(d.schema().public_indices()).unwrap();
            for sub in pubs.subsets() {
                let a = compute_marginal(&d, &sub, Scale::Counts).unwrap();
                let b = compute_marginal(&public, &sub, Scale::Counts).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
