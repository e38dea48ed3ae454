use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::{message, GraphicalModel};
use crate::dp::Measurement;
use crate::error::{Error, Result};
use crate::factor::Factor;

/// Smallest target probability imposed on an exactly measured cell.
const TARGET_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub iterations: usize,
    pub grad_tol: f64,
    /// Stop fitting exact measurements once every one is within this L1
    /// distance, as a fraction of the row total.
    pub exact_tol: f64,
    /// Sweep cap of the projection before the first step.
    pub max_sweeps: usize,
    /// Sweep cap of the projection after each trial step; the constraints
    /// keep tightening over later iterations.
    pub step_sweeps: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { iterations: 1000, grad_tol: 1e-8, exact_tol: 1e-5, max_sweeps: 200, step_sweeps: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrace {
    /// Loss of every accepted iterate, starting with the initial one.
    pub losses: Vec<f64>,
    pub iterations: usize,
    /// Largest exact-measurement L1 error (fraction of the total) at exit.
    pub exact_error: f64,
    /// Proportional-fitting sweeps over all projections.
    pub sweeps: usize,
}

struct Assigned<'a> {
    m: &'a Measurement,
    clique: usize,
    weight: f64,
}

/// Fits the model's potentials to `measurements`.
///
/// Noisy measurements enter the weighted squared loss
/// `sum_i (1/sigma_i^2) * ||mu_i - y_i||^2` (counts scale), minimized by
/// mirror descent on the log-potentials with a backtracking step. Exact
/// measurements (`sigma == 0`) are constraints: after each step the
/// potentials are projected onto them by iterative proportional fitting on
/// the junction tree.
pub fn estimate(
    model: &mut GraphicalModel,
    measurements: &[Measurement],
    opts: &EstimateOptions,
) -> Result<EstimateTrace> {
    let mut noisy = Vec::new();
    let mut exact = Vec::new();
    for m in measurements {
        let clique = model
            .tree()
            .containing(m.clique.indices())
            .ok_or_else(|| Error::Structure(format!("measured clique {} is not covered by the model", m.clique)))?;
        if m.is_exact() {
            exact.push(Assigned { m, clique, weight: 0.0 });
        } else {
            noisy.push(Assigned { m, clique, weight: 1.0 / (m.sigma * m.sigma) });
        }
    }
    let n = model.total();
    let mut trace = EstimateTrace::default();
    trace.exact_error = project(model, &exact, n, opts, opts.max_sweeps, &mut trace.sweeps);
    if noisy.is_empty() {
        trace.losses.push(0.0);
        return Ok(trace);
    }

    let max_w = noisy.iter().map(|a| a.weight).fold(0.0, f64::max);
    let mut alpha = 1.0 / (2.0 * n.max(1.0) * max_w);
    let (mut loss, mut grad) = loss_and_grad(model, &noisy);
    trace.losses.push(loss);
    let mut grow = true;
    for _ in 0..opts.iterations {
        let gnorm = grad.iter().flat_map(|g| g.values()).map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol {
            break;
        }
        let theta = model.potentials().to_vec();
        let old_mu: Vec<Factor> = model.beliefs().to_vec();
        if grow {
            alpha *= 1.5;
        }
        let mut accepted = None;
        for attempt in 0..25 {
            let trial: Vec<Factor> = theta.iter().zip(&grad).map(|(t, g)| t.combine(g, |a, b| a - alpha * b)).collect();
            if exact.is_empty() {
                model.set_potentials(trial);
            } else {
                // project recalibrates when it finishes
                model.set_potentials_stale(trial);
            }
            let err = project(model, &exact, n, opts, opts.step_sweeps, &mut trace.sweeps);
            let (new_loss, new_grad) = loss_and_grad(model, &noisy);
            let dot: f64 = grad
                .iter()
                .zip(old_mu.iter().zip(model.beliefs()))
                .map(|(g, (a, b))| {
                    g.values()
                        .iter()
                        .zip(a.values().iter().zip(b.values()))
                        .map(|(g, (a, b))| g * n * (a - b))
                        .sum::<f64>()
                })
                .sum();
            if new_loss <= loss && loss - new_loss >= 0.5 * alpha * dot {
                accepted = Some((new_loss, new_grad, err));
                grow = attempt == 0;
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((l, g, err)) => {
                loss = l;
                grad = g;
                trace.exact_error = err;
                trace.losses.push(l);
                trace.iterations += 1;
            }
            None => {
                model.set_potentials(theta);
                break;
            }
        }
    }
    Ok(trace)
}

/// Weighted squared loss and its gradient with respect to each model
/// clique's counts-scale marginal.
fn loss_and_grad(model: &GraphicalModel, noisy: &[Assigned]) -> (f64, Vec<Factor>) {
    let n = model.total();
    let mut grad: Vec<Factor> = model.potentials().iter().map(|p| p.map(|_| 0.0)).collect();
    let mut loss = 0.0;
    for a in noisy {
        let mu = model.belief(a.clique).sum_onto(a.m.clique.indices());
        let diff: Vec<f64> = mu.values().iter().zip(&a.m.values).map(|(p, y)| n * p - y).collect();
        loss += a.weight * diff.iter().map(|d| d * d).sum::<f64>();
        let g = Factor::new(mu.vars().to_vec(), mu.cards().to_vec(), diff.iter().map(|d| 2.0 * a.weight * d).collect());
        grad[a.clique].add_assign_broadcast(&g, 1.0);
    }
    (loss, grad)
}

/// Iterative proportional fitting of exact measurements on the junction
/// tree. Cliques holding measurements are visited along an Euler tour, so
/// moving to the next clique only refreshes the one message crossing the
/// step. Returns the largest remaining L1 error as a fraction of `n`.
fn project(
    model: &mut GraphicalModel,
    exact: &[Assigned],
    n: f64,
    opts: &EstimateOptions,
    max_sweeps: usize,
    sweeps: &mut usize,
) -> f64 {
    if exact.is_empty() {
        return 0.0;
    }
    let tree = model.tree().clone();
    let k = tree.cliques.len();
    let mut groups: Vec<Vec<&Measurement>> = vec![Vec::new(); k];
    for a in exact {
        groups[a.clique].push(a.m);
    }
    let (comps, parent) = tree.components();
    let adj = tree.neighbors();
    let mut pots = model.potentials().to_vec();
    let mut worst = 0.0f64;
    for comp in &comps {
        let mut needed = vec![false; k];
        for &u in comp.order.iter().rev() {
            if !groups[u].is_empty() {
                needed[u] = true;
            }
            if needed[u] {
                if let Some(p) = parent[u] {
                    needed[p] = true;
                }
            }
        }
        if !needed[comp.root] {
            continue;
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &u in &comp.order {
            if let Some(p) = parent[u] {
                if needed[u] {
                    children[p].push(u);
                }
            }
        }
        let mut tour = Vec::new();
        euler_tour(comp.root, &children, &mut tour);

        let mut msgs = component_messages(&tree, &pots, &comp.order, &parent);
        let mut comp_err = f64::INFINITY;
        for _ in 0..max_sweeps {
            *sweeps += 1;
            let mut sweep_err = 0.0f64;
            for (step, &x) in tour.iter().enumerate() {
                if step > 0 {
                    let prev = tour[step - 1];
                    let mut partial = pots[prev].clone();
                    for &nb in &adj[prev] {
                        if nb != x {
                            partial.add_assign_broadcast(&msgs[&(nb, prev)], 1.0);
                        }
                    }
                    msgs.insert((prev, x), message(&partial, &tree.separator(prev, x)));
                }
                if groups[x].is_empty() {
                    continue;
                }
                let mut belief = pots[x].clone();
                for &nb in &adj[x] {
                    belief.add_assign_broadcast(&msgs[&(nb, x)], 1.0);
                }
                let z = belief.logsumexp();
                // probabilities are updated multiplicatively between measurements
                let mut prob = belief.map(|v| (v - z).exp());
                let last = groups[x].len() - 1;
                for (i, m) in groups[x].iter().enumerate() {
                    let mu = prob.sum_onto(m.clique.indices());
                    let total: f64 = mu.values().iter().sum();
                    let mut err = 0.0;
                    let ratio: Vec<f64> = mu
                        .values()
                        .iter()
                        .zip(&m.values)
                        .map(|(&p, &y)| {
                            let p = p / total;
                            err += (n * p - y).abs();
                            let target = (y / n).max(TARGET_FLOOR);
                            target.ln() - p.max(f64::MIN_POSITIVE).ln()
                        })
                        .collect();
                    sweep_err = sweep_err.max(err / n);
                    let r = Factor::new(mu.vars().to_vec(), mu.cards().to_vec(), ratio);
                    pots[x].add_assign_broadcast(&r, 1.0);
                    if i < last {
                        prob.mul_assign_broadcast(&r.map(f64::exp));
                    }
                }
            }
            comp_err = sweep_err;
            if sweep_err < opts.exact_tol {
                break;
            }
        }
        worst = worst.max(comp_err);
    }
    model.set_potentials(pots);
    worst
}

fn euler_tour(u: usize, children: &[Vec<usize>], out: &mut Vec<usize>) {
    out.push(u);
    for &c in &children[u] {
        euler_tour(c, children, out);
        out.push(u);
    }
}

/// All directed log-space messages of one tree component.
fn component_messages(
    tree: &super::structure::JunctionTree,
    pots: &[Factor],
    order: &[usize],
    parent: &[Option<usize>],
) -> HashMap<(usize, usize), Factor> {
    let mut msgs = HashMap::new();
    let mut partial: HashMap<usize, Factor> = order.iter().map(|&u| (u, pots[u].clone())).collect();
    for &u in order.iter().rev() {
        if let Some(p) = parent[u] {
            let m = message(&partial[&u], &tree.separator(u, p));
            partial.get_mut(&p).expect("parent in component").add_assign_broadcast(&m, 1.0);
            msgs.insert((u, p), m);
        }
    }
    // partial[root] is now the full root belief; push beliefs downwards
    let mut full = partial;
    for &u in order.iter().skip(1) {
        let p = parent[u].expect("non-root");
        let mut cavity = full[&p].clone();
        cavity.add_assign_broadcast(&msgs[&(u, p)], -1.0);
        let down = message(&cavity, &tree.separator(u, p));
        full.get_mut(&u).expect("node in component").add_assign_broadcast(&down, 1.0);
        msgs.insert((p, u), down);
    }
    msgs
}
