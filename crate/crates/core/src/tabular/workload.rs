use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dataset::Clique;
use super::schema::Schema;
use crate::error::{Error, Result};

/// Which dataset a workload entry is answered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Public,
    Private,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Public => "public",
            Source::Private => "private",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkloadEntry {
    pub clique: Clique,
    pub label: Source,
}

/// Set of marginal queries, each clique appearing once with its label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Workload {
    entries: Vec<WorkloadEntry>,
}

impl Workload {
    /// Labels each clique from schema visibility; duplicates are dropped.
    pub fn from_cliques(schema: &Schema, cliques: impl IntoIterator<Item = Clique>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for clique in cliques {
            clique.validate(schema)?;
            if clique.is_empty() {
                return Err(Error::InvalidWorkload("empty clique in workload".into()));
            }
            if seen.insert(clique.clone()) {
                entries.push(WorkloadEntry { label: label_for(schema, &clique), clique });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[WorkloadEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cliques(&self) -> impl Iterator<Item = &Clique> {
        self.entries.iter().map(|e| &e.clique)
    }

    pub fn with_label(&self, label: Source) -> impl Iterator<Item = &WorkloadEntry> {
        self.entries.iter().filter(move |e| e.label == label)
    }

    /// Keeps only entries containing at least one private column.
    pub fn require_private(&self, schema: &Schema) -> Workload {
        Workload { entries: self.entries.iter().filter(|e| !e.clique.is_all_public(schema)).cloned().collect() }
    }

    /// All non-empty sub-cliques of every entry, deduplicated and relabeled.
    pub fn downward_closure(&self, schema: &Schema) -> Result<Workload> {
        let mut all = BTreeSet::new();
        for e in &self.entries {
            all.extend(e.clique.subsets());
        }
        let mut cliques: Vec<Clique> = all.into_iter().collect();
        cliques.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        Workload::from_cliques(schema, cliques)
    }
}

fn label_for(schema: &Schema, clique: &Clique) -> Source {
    if clique.is_all_public(schema) {
        Source::Public
    } else {
        Source::Private
    }
}

/// All size-`k` cliques, optionally only those touching a private column.
pub fn build_workload(schema: &Schema, k: usize, require_private: bool) -> Result<Workload> {
    let d = schema.d();
    if k == 0 || k > d {
        return Err(Error::InvalidWorkload(format!("k = {k} must be in 1..={d}")));
    }
    let mut cliques = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let c = Clique::new(idx.clone())?;
        if !require_private || !c.is_all_public(schema) {
            cliques.push(c);
        }
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && idx[i - 1] == d - k + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Workload::from_cliques(schema, cliques)
}

/// All cliques of size 1..=k_max.
pub fn all_marginals_up_to(schema: &Schema, k_max: usize) -> Result<Workload> {
    let mut cliques = Vec::new();
    for k in 1..=k_max.min(schema.d()) {
        cliques.extend(build_workload(schema, k, false)?.cliques().cloned());
    }
    Workload::from_cliques(schema, cliques)
}
