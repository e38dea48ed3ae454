use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a column may be read without privacy cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub cardinality: usize,
    pub visibility: Visibility,
}

/// Ordered column list with cardinalities and the public/private partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidSchema("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if c.cardinality == 0 {
                return Err(Error::InvalidSchema(format!("column '{}' has cardinality 0", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate column name '{}'", c.name)));
            }
        }
        Ok(Self { columns })
    }

    /// All-private schema from names and cardinalities.
    pub fn from_cardinalities<S: Into<String>>(names: impl IntoIterator<Item = S>, cards: &[usize]) -> Result<Self> {
        let columns = names
            .into_iter()
            .zip(cards)
            .map(|(name, &cardinality)| Column { name: name.into(), cardinality, visibility: Visibility::Private })
            .collect();
        Self::new(columns)
    }

    /// Anonymous all-private schema with columns named `c0, c1, ...`.
    pub fn anonymous(cards: &[usize]) -> Result<Self> {
        Self::from_cardinalities((0..cards.len()).map(|i| format!("c{i}")), cards)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn d_pub(&self) -> usize {
        self.public_indices().len()
    }

    pub fn d_priv(&self) -> usize {
        self.private_indices().len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.cardinality).collect()
    }

    pub fn cardinality(&self, idx: usize) -> usize {
        self.columns[idx].cardinality
    }

    pub fn is_public(&self, idx: usize) -> bool {
        self.columns[idx].visibility == Visibility::Public
    }

    pub fn public_indices(&self) -> Vec<usize> {
        self.indices_with(Visibility::Public)
    }

    pub fn private_indices(&self) -> Vec<usize> {
        self.indices_with(Visibility::Private)
    }

    fn indices_with(&self, v: Visibility) -> Vec<usize> {
        self.columns.iter().enumerate().filter(|(_, c)| c.visibility == v).map(|(i, _)| i).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Product of all cardinalities, saturating at `u128::MAX`.
    pub fn domain_size(&self) -> u128 {
        self.columns.iter().fold(1u128, |acc, c| acc.saturating_mul(c.cardinality as u128))
    }

    /// Copy of this schema with every column set to `visibility`.
    pub fn with_all(&self, visibility: Visibility) -> Self {
        let columns = self.columns.iter().map(|c| Column { visibility, ..c.clone() }).collect();
        Self { columns }
    }

    /// Marks the first `ceil(p * d)` columns public and the rest private.
    pub fn with_public_fraction(&self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("public fraction {p} outside [0, 1]")));
        }
        let k = public_count(self.d(), p);
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| Column {
                visibility: if i < k { Visibility::Public } else { Visibility::Private },
                ..c.clone()
            })
            .collect();
        Ok(Self { columns })
    }

    /// Marks exactly the named columns public.
    pub fn with_public_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut public = HashSet::new();
        for n in names {
            let idx = self
                .index_of(n.as_ref())
                .ok_or_else(|| Error::Config(format!("unknown public column '{}'", n.as_ref())))?;
            public.insert(idx);
        }
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| Column {
                visibility: if public.contains(&i) { Visibility::Public } else { Visibility::Private },
                ..c.clone()
            })
            .collect();
        Ok(Self { columns })
    }

    /// Schema restricted to `indices`, in the given order.
    pub fn project(&self, indices: &[usize]) -> Self {
        Self { columns: indices.iter().map(|&i| self.columns[i].clone()).collect() }
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        Self::new(schema.columns)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Number of public columns for fraction `p` of `d` columns.
pub fn public_count(d: usize, p: f64) -> usize {
    // guard against 0.75 * 8 = 6.000000000000001 style round-up
    let raw = p * d as f64;
    let k = (raw - 1e-9).ceil().max(0.0) as usize;
    k.min(d)
}
