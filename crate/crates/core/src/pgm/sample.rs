use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use super::model::GraphicalModel;
use crate::dp::{Purpose, RngStreams};
use crate::error::{Error, Result};
use crate::factor::{strides_in, Factor};
use crate::tabular::{ColumnSource, DiscreteDataset};

/// Default cap on the largest intermediate table of conditional sampling.
pub const DEFAULT_CONDITIONAL_CAP: usize = 10_000_000;

/// Draws `n` rows, visiting columns in reverse elimination order and
/// sampling each from its calibrated conditional given the neighbors it had
/// when eliminated (all of which are already drawn by then).
pub fn sample<R: Rng + ?Sized>(model: &GraphicalModel, n: usize, rng: &mut R) -> DiscreteDataset {
    let schema = model.schema().clone();
    let tree = model.tree();
    let mut columns: Vec<Vec<u32>> = vec![vec![0; n]; schema.d()];
    for &v in tree.elimination_order.iter().rev() {
        let mut vars = tree.neighbors_at_elimination[v].clone();
        vars.push(v);
        vars.sort_unstable();
        let table = model.marginal_prob(&vars);
        let strides = strides_in(&vars, &vars, table.cards());
        let v_pos = vars.iter().position(|&x| x == v).expect("v in its own scope");
        let v_stride = strides[v_pos];
        let card = schema.cardinality(v);
        let mut out = vec![0u32; n];
        for (r, slot) in out.iter_mut().enumerate() {
            let base: usize =
                vars.iter().zip(&strides).filter(|(&x, _)| x != v).map(|(&x, &s)| columns[x][r] as usize * s).sum();
            let weights = (0..card).map(|k| table.values()[base + k * v_stride]);
            *slot = draw(weights, rng) as u32;
        }
        columns[v] = out;
    }
    DiscreteDataset::from_columns(schema, columns).expect("sampled values lie in range")
}

/// Inverse-CDF draw from unnormalized non-negative weights; uniform when
/// all weights vanish.
fn draw<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let u: f64 = rng.random();
    let count = weights.clone().count();
    if !(total > 0.0) {
        return ((u * count as f64) as usize).min(count - 1);
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            last = k;
        }
        acc += w;
        if target < acc {
            return k;
        }
    }
    last
}

/// Elimination plan for the variables left free by the evidence.
struct Plan {
    free: Vec<usize>,
    evidence: Vec<usize>,
}

/// Keeps the public columns of `public` verbatim and samples every private
/// column from the model conditioned on that row's public values.
///
/// Rows are grouped by public tuple; each group conditions the
/// log-potentials on its evidence, eliminates the free columns and samples
/// them backwards, using its own random stream so groups can run in
/// parallel without changing the result.
pub fn conditional_sample<S: ColumnSource + ?Sized>(
    model: &GraphicalModel,
    public: &S,
    streams: &RngStreams,
    cap: usize,
) -> Result<DiscreteDataset> {
    let schema = model.schema().clone();
    if public.schema() != &schema {
        return Err(Error::SchemaMismatch("public view schema differs from the model schema".into()));
    }
    let n = public.n();
    let evidence = schema.public_indices();
    let mut pub_cols: Vec<&[u32]> = Vec::with_capacity(evidence.len());
    for &e in &evidence {
        let col = public.column(e).ok_or_else(|| Error::SchemaMismatch(format!("public view lacks column {e}")))?;
        let card = schema.cardinality(e) as u32;
        if col.iter().any(|&x| x >= card) {
            return Err(Error::SchemaMismatch(format!(
                "evidence value out of range in column '{}'",
                schema.column(e).name
            )));
        }
        pub_cols.push(col);
    }
    let mut columns: Vec<Vec<u32>> = vec![Vec::new(); schema.d()];
    for (&e, col) in evidence.iter().zip(&pub_cols) {
        columns[e] = col.to_vec();
    }
    let plan = Plan {
        free: model.tree().elimination_order.iter().copied().filter(|v| !schema.is_public(*v)).collect(),
        evidence: evidence.clone(),
    };
    if plan.free.is_empty() {
        return DiscreteDataset::from_columns(schema, columns);
    }
    let cost = elimination_cost(model, &plan);
    if cost > cap as u128 {
        return Err(Error::Scalability(format!(
            "conditional sampling needs a {cost}-cell table, above the cap of {cap}; \
             lower the model parameter cap or the workload clique size"
        )));
    }

    let mut groups: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
    for r in 0..n {
        let key: Vec<u32> = pub_cols.iter().map(|c| c[r]).collect();
        groups.entry(key).or_default().push(r);
    }
    let groups: Vec<(Vec<u32>, Vec<usize>)> = groups.into_iter().collect();
    let drawn: Vec<Vec<Vec<u32>>> = groups
        .par_iter()
        .enumerate()
        .map(|(g, (key, rows))| {
            let mut rng = streams.stream(Purpose::Conditional, g as u64);
            sample_group(model, &plan, key, rows.len(), &mut rng)
        })
        .collect();
    for &v in &plan.free {
        columns[v] = vec![0; n];
    }
    for ((_, rows), values) in groups.iter().zip(drawn) {
        for (i, &r) in rows.iter().enumerate() {
            for (j, &v) in plan.free.iter().enumerate() {
                columns[v][r] = values[i][j];
            }
        }
    }
    DiscreteDataset::from_columns(schema, columns)
}

/// Largest table built while eliminating the free columns with all
/// evidence applied.
fn elimination_cost(model: &GraphicalModel, plan: &Plan) -> u128 {
    let schema = model.schema();
    let mut scopes: Vec<Vec<usize>> = model
        .cliques()
        .iter()
        .map(|c| c.indices().iter().copied().filter(|v| !plan.evidence.contains(v)).collect())
        .collect();
    let mut worst = 0u128;
    for &v in &plan.free {
        let mut union: Vec<usize> = Vec::new();
        scopes.retain(|s| {
            if s.contains(&v) {
                union.extend(s);
                false
            } else {
                true
            }
        });
        union.sort_unstable();
        union.dedup();
        let size = union.iter().fold(1u128, |a, &x| a.saturating_mul(schema.cardinality(x) as u128));
        worst = worst.max(size);
        union.retain(|&x| x != v);
        scopes.push(union);
    }
    worst
}

/// Samples `count` assignments of the free columns for one evidence tuple.
/// Each returned row lists values in `plan.free` order.
fn sample_group<R: Rng + ?Sized>(
    model: &GraphicalModel,
    plan: &Plan,
    key: &[u32],
    count: usize,
    rng: &mut R,
) -> Vec<Vec<u32>> {
    let mut factors: Vec<Factor> = model
        .potentials()
        .iter()
        .map(|p| {
            let mut f = p.clone();
            for (&e, &val) in plan.evidence.iter().zip(key) {
                if f.vars().contains(&e) {
                    f = f.slice(e, val as usize);
                }
            }
            f
        })
        .collect();
    let mut eliminated: Vec<Factor> = Vec::with_capacity(plan.free.len());
    for &v in &plan.free {
        let mut joint = Factor::scalar(0.0);
        factors.retain(|f| {
            if f.vars().contains(&v) {
                joint = joint.log_product(f);
                false
            } else {
                true
            }
        });
        let rest: Vec<usize> = joint.vars().iter().copied().filter(|&x| x != v).collect();
        factors.push(joint.logsumexp_onto(&rest));
        eliminated.push(joint);
    }
    let pos: Vec<usize> = {
        let mut p = vec![usize::MAX; model.schema().d()];
        for (j, &v) in plan.free.iter().enumerate() {
            p[v] = j;
        }
        p
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = vec![0u32; plan.free.len()];
        for (j, &v) in plan.free.iter().enumerate().rev() {
            let f = &eliminated[j];
            let strides = strides_in(f.vars(), f.vars(), f.cards());
            let mut base = 0usize;
            let mut v_stride = 0usize;
            for (&x, &s) in f.vars().iter().zip(&strides) {
                if x == v {
                    v_stride = s;
                } else {
                    base += row[pos[x]] as usize * s;
                }
            }
            let card = f.card_of(v).expect("v in its factor");
            let logs: Vec<f64> = (0..card).map(|k| f.values()[base + k * v_stride]).collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights = logs.iter().map(move |&l| if max.is_finite() { (l - max).exp() } else { 0.0 });
            row[j] = draw(weights, rng) as u32;
        }
        out.push(row);
    }
    out
}
