use std::path::Path;

use serde::{Deserialize, Serialize};

use super::structure::{build_junction_tree, intersect, JunctionTree};
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::tabular::{Clique, MarginalVector, Scale, Schema};

/// Smallest probability used when turning marginals back into log-potentials.
const LOG_FLOOR: f64 = 1e-30;

/// Discrete graphical model over a junction forest.
///
/// Potentials are kept in log space, one per model clique. After
/// [`GraphicalModel::calibrate`] every clique also carries its normalized
/// marginal (its belief), from which all queries are answered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphicalModel {
    schema: Schema,
    tree: JunctionTree,
    potentials: Vec<Factor>,
    total: f64,
    #[serde(skip)]
    beliefs: Vec<Factor>,
}

impl PartialEq for GraphicalModel {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.tree == other.tree
            && self.potentials == other.potentials
            && self.total.to_bits() == other.total.to_bits()
    }
}

impl GraphicalModel {
    /// Uniform model over the junction forest of `measured`, scaled to `total` rows.
    pub fn new(schema: &Schema, measured: &[Clique], total: f64, param_cap: usize) -> Result<Self> {
        let tree = build_junction_tree(schema, measured, param_cap)?;
        Ok(Self::from_tree(schema.clone(), tree, total))
    }

    pub fn from_tree(schema: Schema, tree: JunctionTree, total: f64) -> Self {
        let potentials =
            tree.cliques.iter().map(|c| Factor::constant(c.indices().to_vec(), c.cards(&schema), 0.0)).collect();
        let mut m = Self { schema, tree, potentials, total, beliefs: Vec::new() };
        m.calibrate();
        m
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn tree(&self) -> &JunctionTree {
        &self.tree
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.tree.cliques
    }

    pub fn potentials(&self) -> &[Factor] {
        &self.potentials
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Replaces the log-potentials and recalibrates.
    pub fn set_potentials(&mut self, potentials: Vec<Factor>) {
        debug_assert_eq!(potentials.len(), self.tree.cliques.len());
        self.potentials = potentials;
        self.calibrate();
    }

    /// Replaces the potentials without recomputing beliefs; the caller must
    /// calibrate (or call [`set_potentials`](Self::set_potentials)) before reading them.
    pub(crate) fn set_potentials_stale(&mut self, potentials: Vec<Factor>) {
        debug_assert_eq!(potentials.len(), self.tree.cliques.len());
        self.potentials = potentials;
    }

    /// Normalized marginal of model clique `i` (probability scale).
    pub fn belief(&self, i: usize) -> &Factor {
        &self.beliefs[i]
    }

    pub fn beliefs(&self) -> &[Factor] {
        &self.beliefs
    }

    /// Two-pass log-space belief propagation on every tree of the forest.
    pub fn calibrate(&mut self) {
        self.beliefs = calibrate_beliefs(&self.tree, &self.potentials);
    }

    /// Probability-scale marginal over `vars` (sorted, distinct).
    ///
    /// Variables inside one model clique are read off its belief; otherwise
    /// the smallest connecting subtree is eliminated leaf to root.
    pub fn marginal_prob(&self, vars: &[usize]) -> Factor {
        if let Some(i) = self.tree.containing(vars) {
            return self.beliefs[i].sum_onto(vars);
        }
        let (comps, parent) = self.tree.components();
        let mut comp_of = vec![0usize; self.tree.cliques.len()];
        for (ci, comp) in comps.iter().enumerate() {
            for &u in &comp.order {
                comp_of[u] = ci;
            }
        }
        let mut terminals: Vec<Vec<usize>> = vec![Vec::new(); comps.len()];
        let mut targets: Vec<Vec<usize>> = vec![Vec::new(); comps.len()];
        for &v in vars {
            let home = self.tree.containing(&[v]).expect("every column lies in some clique");
            terminals[comp_of[home]].push(home);
            targets[comp_of[home]].push(v);
        }
        let mut result = Factor::scalar(1.0);
        for (ci, comp) in comps.iter().enumerate() {
            if targets[ci].is_empty() {
                continue;
            }
            let part = if let Some(i) = self.tree.containing(&targets[ci]) {
                self.beliefs[i].sum_onto(&targets[ci])
            } else {
                self.steiner_marginal(comp, &parent, &terminals[ci], &targets[ci])
            };
            result = result.product(&part);
        }
        result
    }

    fn steiner_marginal(
        &self,
        comp: &super::structure::Component,
        parent: &[Option<usize>],
        terminals: &[usize],
        targets: &[usize],
    ) -> Factor {
        let k = self.tree.cliques.len();
        let mut marked = vec![false; k];
        let mut is_terminal = vec![false; k];
        for &t in terminals {
            is_terminal[t] = true;
            let mut u = t;
            loop {
                if marked[u] {
                    break;
                }
                marked[u] = true;
                match parent[u] {
                    Some(p) => u = p,
                    None => break,
                }
            }
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &u in &comp.order {
            if let Some(p) = parent[u] {
                if marked[u] && marked[p] {
                    children[p].push(u);
                }
            }
        }
        // drop the chain above the lowest common ancestor
        let mut top = comp.root;
        while !is_terminal[top] && children[top].len() == 1 {
            marked[top] = false;
            top = children[top][0];
        }
        let mut messages: Vec<Option<Factor>> = vec![None; k];
        for &u in comp.order.iter().rev() {
            if !marked[u] {
                continue;
            }
            let mut f = self.beliefs[u].clone();
            for &c in &children[u] {
                let m = messages[c].take().expect("child processed first");
                f = f.product(&m);
            }
            let keep_targets: Vec<usize> = targets.iter().copied().filter(|v| f.vars().contains(v)).collect();
            if u == top {
                return f.sum_onto(&keep_targets);
            }
            let p = parent[u].expect("non-top node has a parent");
            let sep = self.tree.separator(u, p);
            let mu_sep = self.beliefs[u].sum_onto(&sep);
            f = f.combine(&mu_sep, |a, b| if b > 0.0 { a / b } else { 0.0 });
            let mut keep = sep;
            keep.extend(keep_targets);
            keep.sort_unstable();
            keep.dedup();
            messages[u] = Some(f.sum_onto(&keep));
        }
        unreachable!("top node is always reached")
    }

    /// Counts-scale marginal of the model over `clique`.
    pub fn infer_marginal(&self, clique: &Clique) -> MarginalVector {
        let f = self.marginal_prob(clique.indices()).map(|p| p * self.total);
        MarginalVector::from_factor(f, Scale::Counts)
    }

    /// Reparameterizes this model's structure to approximate `old`.
    ///
    /// Each clique's potential becomes the log of `old`'s marginal on it,
    /// minus the log separator marginal towards its parent, so the new
    /// model reproduces `old` exactly whenever `old` factorizes over it.
    pub fn warm_start_from(&mut self, old: &GraphicalModel) {
        let (comps, parent) = self.tree.components();
        let mut pots = self.potentials.clone();
        for comp in &comps {
            for &u in &comp.order {
                let c = &self.tree.cliques[u];
                let mu = old.marginal_prob(c.indices());
                let mass = mu.sum();
                let mut log_mu = mu.map(|p| (p / mass).max(LOG_FLOOR).ln());
                if let Some(p) = parent[u] {
                    let sep = intersect(c.indices(), self.tree.cliques[p].indices());
                    let mu_sep = mu.sum_onto(&sep).map(|p| (p / mass).max(LOG_FLOOR).ln());
                    log_mu.add_assign_broadcast(&mu_sep, -1.0);
                }
                pots[u] = log_mu;
            }
        }
        self.total = old.total;
        self.set_potentials(pots);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: GraphicalModel = serde_json::from_str(text)?;
        if m.potentials.len() != m.tree.cliques.len() {
            return Err(Error::Structure("potential count does not match clique count".into()));
        }
        m.calibrate();
        Ok(m)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Log-space message from clique `from` over `sep`, given the sum of its
/// potential and all other incoming messages.
pub(crate) fn message(partial: &Factor, sep: &[usize]) -> Factor {
    partial.logsumexp_onto(sep)
}

pub(crate) fn calibrate_beliefs(tree: &JunctionTree, potentials: &[Factor]) -> Vec<Factor> {
    let k = tree.cliques.len();
    let (comps, parent) = tree.components();
    let mut partial: Vec<Factor> = potentials.to_vec();
    let mut up: Vec<Option<Factor>> = vec![None; k];
    for comp in &comps {
        for &u in comp.order.iter().rev() {
            if let Some(p) = parent[u] {
                let sep = tree.separator(u, p);
                let m = message(&partial[u], &sep);
                partial[p].add_assign_broadcast(&m, 1.0);
                up[u] = Some(m);
            }
        }
    }
    let mut log_beliefs: Vec<Factor> = partial.clone();
    for comp in &comps {
        for &u in comp.order.iter().skip(1) {
            let p = parent[u].expect("non-root");
            let sep = tree.separator(u, p);
            let mut cavity = log_beliefs[p].clone();
            cavity.add_assign_broadcast(up[u].as_ref().expect("collected"), -1.0);
            let down = message(&cavity, &sep);
            log_beliefs[u].add_assign_broadcast(&down, 1.0);
        }
    }
    log_beliefs
        .into_iter()
        .map(|b| {
            let z = b.logsumexp();
            b.map(|v| (v - z).exp())
        })
        .collect()
}
