use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Clique, Schema};

/// Default cap on the total number of potential entries of a model.
pub const DEFAULT_PARAM_CAP: usize = 10_000_000;

/// Junction forest over the maximal cliques of a triangulated graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionTree {
    pub cliques: Vec<Clique>,
    /// Undirected tree edges `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// Min-fill elimination order over all columns.
    pub elimination_order: Vec<usize>,
    /// `neighbors_at_elimination[v]`: columns adjacent to `v` when it was eliminated.
    pub neighbors_at_elimination: Vec<Vec<usize>>,
}

/// One rooted component of a junction forest.
#[derive(Debug, Clone)]
pub struct Component {
    pub root: usize,
    /// Nodes in breadth-first order from the root.
    pub order: Vec<usize>,
}

impl JunctionTree {
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.cliques.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn separator(&self, a: usize, b: usize) -> Vec<usize> {
        intersect(self.cliques[a].indices(), self.cliques[b].indices())
    }

    /// Parent of each node when every component is rooted at its lowest index.
    pub fn components(&self) -> (Vec<Component>, Vec<Option<usize>>) {
        let adj = self.neighbors();
        let k = self.cliques.len();
        let mut parent = vec![None; k];
        let mut seen = vec![false; k];
        let mut comps = Vec::new();
        for root in 0..k {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut order = vec![root];
            let mut head = 0;
            while head < order.len() {
                let u = order[head];
                head += 1;
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        parent[v] = Some(u);
                        order.push(v);
                    }
                }
            }
            comps.push(Component { root, order });
        }
        (comps, parent)
    }

    /// Index of the smallest model clique containing `vars`, if any.
    pub fn containing(&self, vars: &[usize]) -> Option<usize> {
        self.cliques
            .iter()
            .enumerate()
            .filter(|(_, c)| vars.iter().all(|v| c.contains(*v)))
            .min_by_key(|(i, c)| (c.len(), *i))
            .map(|(i, _)| i)
    }

    /// Checks that for every pair of cliques, their intersection is
    /// contained in every clique on the path between them.
    pub fn has_running_intersection(&self) -> bool {
        let adj = self.neighbors();
        let k = self.cliques.len();
        for a in 0..k {
            // path parents from a via BFS
            let mut prev = vec![usize::MAX; k];
            prev[a] = a;
            let mut queue = vec![a];
            let mut head = 0;
            while head < queue.len() {
                let u = queue[head];
                head += 1;
                for &v in &adj[u] {
                    if prev[v] == usize::MAX {
                        prev[v] = u;
                        queue.push(v);
                    }
                }
            }
            for b in (a + 1)..k {
                let sep = intersect(self.cliques[a].indices(), self.cliques[b].indices());
                if prev[b] == usize::MAX {
                    if !sep.is_empty() {
                        return false;
                    }
                    continue;
                }
                let mut u = b;
                while u != a {
                    if !sep.iter().all(|v| self.cliques[u].contains(*v)) {
                        return false;
                    }
                    u = prev[u];
                }
            }
        }
        true
    }

    pub fn parameter_count(&self, schema: &Schema) -> u128 {
        self.cliques.iter().map(|c| clique_size(schema, c)).fold(0u128, |a, b| a.saturating_add(b))
    }
}

pub fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|v| b.binary_search(v).is_ok()).collect()
}

pub fn clique_size(schema: &Schema, c: &Clique) -> u128 {
    c.indices().iter().fold(1u128, |acc, &i| acc.saturating_mul(schema.cardinality(i) as u128))
}

/// Min-fill elimination over the graph whose edges join columns sharing a
/// measured clique. Ties go to the lowest column index.
fn min_fill(d: usize, measured: &[Clique]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); d];
    for c in measured {
        for &a in c.indices() {
            for &b in c.indices() {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    let mut alive = vec![true; d];
    let mut order = Vec::with_capacity(d);
    let mut nbrs = vec![Vec::new(); d];
    for _ in 0..d {
        let mut best = None;
        for v in (0..d).filter(|&v| alive[v]) {
            let ns: Vec<usize> = adj[v].iter().copied().collect();
            let mut fill = 0usize;
            for i in 0..ns.len() {
                for j in (i + 1)..ns.len() {
                    if !adj[ns[i]].contains(&ns[j]) {
                        fill += 1;
                    }
                }
            }
            if best.is_none_or(|(f, _)| fill < f) {
                best = Some((fill, v));
            }
        }
        let (_, v) = best.expect("some vertex remains");
        let ns: Vec<usize> = adj[v].iter().copied().collect();
        for i in 0..ns.len() {
            for j in (i + 1)..ns.len() {
                adj[ns[i]].insert(ns[j]);
                adj[ns[j]].insert(ns[i]);
            }
        }
        for &u in &ns {
            adj[u].remove(&v);
        }
        alive[v] = false;
        order.push(v);
        nbrs[v] = ns;
    }
    (order, nbrs)
}

/// Triangulates the measured-clique graph, extracts maximal cliques and
/// joins them into a junction forest by a maximum-weight spanning forest
/// over separator sizes.
pub fn build_junction_tree(schema: &Schema, measured: &[Clique], param_cap: usize) -> Result<JunctionTree> {
    let d = schema.d();
    for c in measured {
        c.validate(schema)?;
    }
    let (order, nbrs) = min_fill(d, measured);
    let mut candidates: Vec<Vec<usize>> = order
        .iter()
        .map(|&v| {
            let mut c = nbrs[v].clone();
            c.push(v);
            c.sort_unstable();
            c
        })
        .collect();
    candidates.dedup();
    let mut cliques: Vec<Clique> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let dominated = candidates.iter().enumerate().any(|(j, o)| {
            j != i && o.len() >= c.len() && c.iter().all(|v| o.contains(v)) && (o.len() > c.len() || j < i)
        });
        if !dominated {
            cliques.push(Clique::new(c.clone())?);
        }
    }

    let mut pairs = Vec::new();
    for i in 0..cliques.len() {
        for j in (i + 1)..cliques.len() {
            let w = intersect(cliques[i].indices(), cliques[j].indices()).len();
            if w > 0 {
                pairs.push((w, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf: Vec<usize> = (0..cliques.len()).collect();
    fn find(uf: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut y = x;
        while uf[y] != r {
            let next = uf[y];
            uf[y] = r;
            y = next;
        }
        r
    }
    let mut edges = Vec::new();
    for (_, i, j) in pairs {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            edges.push((i, j));
        }
    }
    edges.sort_unstable();

    let tree = JunctionTree { cliques, edges, elimination_order: order, neighbors_at_elimination: nbrs };
    let params = tree.parameter_count(schema);
    if params > param_cap as u128 {
        return Err(Error::Scalability(format!(
            "graphical model needs {params} parameters, above the cap of {param_cap}"
        )));
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cl(v: &[usize]) -> Clique {
        Clique::new(v.to_vec()).unwrap()
    }

    #[test]
    fn chain_keeps_its_cliques() {
        let s = Schema::anonymous(&[2, 3, 4]).unwrap();
        let t = build_junction_tree(&s, &[cl(&[0, 1]), cl(&[1, 2])], DEFAULT_PARAM_CAP).unwrap();
        let set: BTreeSet<_> = t.cliques.iter().cloned().collect();
        assert_eq!(set, [cl(&[0, 1]), cl(&[1, 2])].into_iter().collect());
        assert_eq!(t.edges.len(), 1);
        let (a, b) = t.edges[0];
        assert_eq!(t.separator(a, b), vec![1]);
        assert!(t.has_running_intersection());
    }

    #[test]
    fn triangle_collapses_to_one_clique() {
        let s = Schema::anonymous(&[2, 2, 2]).unwrap();
        let t = build_junction_tree(&s, &[cl(&[0, 1]), cl(&[1, 2]), cl(&[0, 2])], DEFAULT_PARAM_CAP).unwrap();
        assert_eq!(t.cliques, vec![cl(&[0, 1, 2])]);
        assert!(t.edges.is_empty());
    }

    #[test]
    fn disconnected_columns_form_a_forest() {
        let s = Schema::anonymous(&[2, 2, 2, 2]).unwrap();
        let t = build_junction_tree(&s, &[cl(&[0, 1])], DEFAULT_PARAM_CAP).unwrap();
        let covered: BTreeSet<usize> = t.cliques.iter().flat_map(|c| c.indices().to_vec()).collect();
        assert_eq!(covered, (0..4).collect());
        let (comps, _) = t.components();
        assert_eq!(comps.len(), 3);
        assert!(t.has_running_intersection());
    }

    #[test]
    fn cycle_is_triangulated() {
        let s = Schema::anonymous(&[2; 5]).unwrap();
        let measured = [cl(&[0, 1]), cl(&[1, 2]), cl(&[2, 3]), cl(&[3, 4]), cl(&[0, 4])];
        let t = build_junction_tree(&s, &measured, DEFAULT_PARAM_CAP).unwrap();
        assert!(t.has_running_intersection());
        for m in &measured {
            assert!(t.containing(m.indices()).is_some());
        }
        let (comps, _) = t.components();
        assert_eq!(comps.len(), 1);
        let mut order = t.elimination_order.clone();
        order.sort_unstable();
        assert_eq!(order, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn parameter_cap_is_enforced() {
        let s = Schema::anonymous(&[100, 100, 100]).unwrap();
        let err = build_junction_tree(&s, &[cl(&[0, 1, 2])], 10_000).unwrap_err();
        assert!(matches!(err, Error::Scalability(_)));
    }
}
