use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::Schema;
use crate::error::{Error, Result};

/// Sorted set of distinct column indices identifying a marginal query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clique(Vec<usize>);

impl Clique {
    /// Sorts the indices; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidWorkload(format!("duplicate column in clique {indices:?}")));
        }
        Ok(Self(indices))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn single(idx: usize) -> Self {
        Self(vec![idx])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.binary_search(&idx).is_ok()
    }

    pub fn is_subset_of(&self, other: &[usize]) -> bool {
        self.0.iter().all(|i| other.contains(i))
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        match self.0.iter().find(|&&i| i >= schema.d()) {
            Some(i) => Err(Error::SchemaMismatch(format!(
                "clique {self} references column {i} but schema has {} columns",
                schema.d()
            ))),
            None => Ok(()),
        }
    }

    pub fn cards(&self, schema: &Schema) -> Vec<usize> {
        self.0.iter().map(|&i| schema.cardinality(i)).collect()
    }

    /// Number of cells `n_q` of the marginal over this clique.
    pub fn domain_size(&self, schema: &Schema) -> usize {
        self.0.iter().map(|&i| schema.cardinality(i)).product()
    }

    pub fn is_all_public(&self, schema: &Schema) -> bool {
        self.0.iter().all(|&i| schema.is_public(i))
    }

    /// All non-empty subsets, in ascending size then lexicographic order.
    pub fn subsets(&self) -> Vec<Clique> {
        let k = self.0.len();
        let mut out: Vec<Clique> = (1u64..(1u64 << k))
            .map(|mask| Clique((0..k).filter(|b| mask >> b & 1 == 1).map(|b| self.0[b]).collect()))
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }
}

impl fmt::Display for Clique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// Anything that can hand out category columns addressed by schema index.
///
/// Implementations return `None` for columns they do not hold; marginal
/// evaluation turns that into a visibility error instead of reading data
/// the caller is not allowed to see.
pub trait ColumnSource {
    fn schema(&self) -> &Schema;
    fn n(&self) -> usize;
    fn column(&self, idx: usize) -> Option<&[u32]>;
}

/// n x d matrix of category indices, stored column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteDataset {
    schema: Schema,
    columns: Vec<Vec<u32>>,
    n: usize,
}

impl DiscreteDataset {
    pub fn from_columns(schema: Schema, columns: Vec<Vec<u32>>) -> Result<Self> {
        if columns.len() != schema.d() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns supplied for a {}-column schema",
                columns.len(),
                schema.d()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::SchemaMismatch(format!("column {j} has {} rows, expected {n}", col.len())));
            }
            let card = schema.cardinality(j) as u32;
            if let Some(&v) = col.iter().find(|&&v| v >= card) {
                return Err(Error::SchemaMismatch(format!(
                    "value {v} in column '{}' exceeds cardinality {card}",
                    schema.column(j).name
                )));
            }
        }
        Ok(Self { schema, columns, n })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<u32>]) -> Result<Self> {
        let d = schema.d();
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::SchemaMismatch(format!("row {r} has {} values, expected {d}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                columns[j].push(v);
            }
        }
        Self::from_columns(schema, columns)
    }

    /// Dataset with no rows.
    pub fn empty(schema: Schema) -> Self {
        let d = schema.d();
        Self { schema, columns: vec![Vec::new(); d], n: 0 }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.schema.d()
    }

    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn row(&self, r: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        (0..self.n).map(move |r| self.row(r))
    }

    /// Same data under a schema differing only in visibility flags.
    pub fn with_schema(&self, schema: Schema) -> Result<Self> {
        if schema.cardinalities() != self.schema.cardinalities() {
            return Err(Error::SchemaMismatch("cardinalities differ".into()));
        }
        Ok(Self { schema, columns: self.columns.clone(), n: self.n })
    }

    /// First `k` columns only.
    pub fn truncate_columns(&self, k: usize) -> Result<Self> {
        let k = k.min(self.d());
        let idx: Vec<usize> = (0..k).collect();
        Self::from_columns(self.schema.project(&idx), self.columns[..k].to_vec())
    }

    /// Row-aligned views over the public and the private columns.
    pub fn vertical_split(&self) -> (DatasetView, DatasetView) {
        (self.view(&self.schema.public_indices()), self.view(&self.schema.private_indices()))
    }

    /// View holding only the columns in `indices` (schema order kept).
    pub fn view(&self, indices: &[usize]) -> DatasetView {
        let mut indices = indices.to_vec();
        indices.sort_unstable();
        indices.dedup();
        DatasetView {
            schema: self.schema.clone(),
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            indices,
            n: self.n,
        }
    }
}

impl ColumnSource for DiscreteDataset {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn n(&self) -> usize {
        self.n
    }

    fn column(&self, idx: usize) -> Option<&[u32]> {
        self.columns.get(idx).map(Vec::as_slice)
    }
}

/// A row-aligned projection of a dataset onto a subset of its columns.
///
/// Column indices stay those of the full schema, so cliques can be
/// evaluated on a view directly; touching an absent column is an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetView {
    schema: Schema,
    indices: Vec<usize>,
    columns: Vec<Vec<u32>>,
    n: usize,
}

impl DatasetView {
    /// Builds a view from explicit columns; used to inject poisoned data in tests.
    pub fn from_parts(schema: Schema, indices: Vec<usize>, columns: Vec<Vec<u32>>, n: usize) -> Result<Self> {
        if indices.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::SchemaMismatch("view columns do not match indices / row count".into()));
        }
        for (&i, col) in indices.iter().zip(&columns) {
            let card = schema.cardinality(i) as u32;
            if col.iter().any(|&v| v >= card) {
                return Err(Error::SchemaMismatch(format!("value out of range in column {i}")));
            }
        }
        Ok(Self { schema, indices, columns, n })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn width(&self) -> usize {
        self.indices.len()
    }

    /// Materializes the view as a standalone dataset over the projected schema.
    pub fn to_dataset(&self) -> DiscreteDataset {
        DiscreteDataset { schema: self.schema.project(&self.indices), columns: self.columns.clone(), n: self.n }
    }

    pub fn local_row(&self, r: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[r]).collect()
    }
}

impl ColumnSource for DatasetView {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn n(&self) -> usize {
        self.n
    }

    fn column(&self, idx: usize) -> Option<&[u32]> {
        self.indices.binary_search(&idx).ok().map(|p| self.columns[p].as_slice())
    }
}

/// Two row-aligned column sources read as one (e.g. public and private views).
#[derive(Debug, Clone, Copy)]
pub struct Joined<'a, P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized> {
    pub public: &'a P,
    pub private: &'a Q,
}

impl<'a, P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized> Joined<'a, P, Q> {
    pub fn new(public: &'a P, private: &'a Q) -> Result<Self> {
        if public.n() != private.n() {
            return Err(Error::SchemaMismatch(format!(
                "public view has {} rows, private view {}",
                public.n(),
                private.n()
            )));
        }
        if public.schema() != private.schema() {
            return Err(Error::SchemaMismatch("views come from different schemas".into()));
        }
        Ok(Self { public, private })
    }

    /// Reassembles the full dataset in schema order.
    pub fn to_dataset(&self) -> Result<DiscreteDataset> {
        let d = self.public.schema().d();
        let mut cols = Vec::with_capacity(d);
        for j in 0..d {
            let c =
                self.column(j).ok_or_else(|| Error::SchemaMismatch(format!("column {j} missing from both views")))?;
            cols.push(c.to_vec());
        }
        DiscreteDataset::from_columns(self.public.schema().clone(), cols)
    }
}

impl<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized> ColumnSource for Joined<'_, P, Q> {
    fn schema(&self) -> &Schema {
        self.public.schema()
    }

    fn n(&self) -> usize {
        self.public.n()
    }

    fn column(&self, idx: usize) -> Option<&[u32]> {
        self.public.column(idx).or_else(|| self.private.column(idx))
    }
}
