use std::collections::HashMap;

use rayon::prelude::*;

use super::score::{score_private, score_public_vertical};
use super::{EngineConfig, Method, RoundRecord, RunOutput, RunReport};
use crate::dp::{
    exp_select, exponential_epsilon, gaussian_measure, gaussian_sigma, schedule_rounds, Accountant, ChargeKind,
    Measurement, Purpose, RngStreams,
};
use crate::error::{Error, Result};
use crate::pgm::{build_junction_tree, conditional_sample, estimate, sample, GraphicalModel, DEFAULT_PARAM_CAP};
use crate::tabular::{compute_marginal, Clique, ColumnSource, Joined, MarginalVector, Scale, Schema, Source, Workload};

/// Fully private AIM: every column is treated as private.
pub fn aim_run<S: ColumnSource + ?Sized>(data: &S, workload: &Workload, config: &EngineConfig) -> Result<RunOutput> {
    let mut accountant = Accountant::new(config.budget.rho);
    aim_run_with(data, workload, config, &mut accountant)
}

pub fn aim_run_with<S: ColumnSource + ?Sized>(
    data: &S,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    let schema = data.schema().clone();
    let candidates = closure(workload, &schema, |_| Some(Source::Private))?;
    let init = (0..schema.d()).map(|j| (Clique::single(j), Source::Private)).collect();
    let setup = Setup { method: Method::Aim, schema, candidates, init, conditional: false, notes: Vec::new() };
    run_loop(setup, data, data, config, accountant)
}

/// Vertical JAM-PGM: public marginals are measured exactly and compete with
/// private ones in a single exponential mechanism each round.
pub fn vjam_run<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
) -> Result<RunOutput> {
    let mut accountant = Accountant::new(config.budget.rho);
    vjam_run_with(public, private, workload, config, &mut accountant)
}

pub fn vjam_run_with<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    let data = Joined::new(public, private)?;
    let schema = data.schema().clone();
    let keep_public = !config.conditional;
    let candidates = closure(workload, &schema, |c| {
        if c.is_all_public(&schema) {
            keep_public.then_some(Source::Public)
        } else {
            Some(Source::Private)
        }
    })?;
    let init = (0..schema.d())
        .map(|j| (Clique::single(j), if schema.is_public(j) { Source::Public } else { Source::Private }))
        .collect();
    let setup = Setup {
        method: Method::VjamPgm,
        schema,
        candidates,
        init,
        conditional: config.conditional,
        notes: vec![
            "public and private candidates share one exponential mechanism per round".into(),
            "unspent measurement budget of a public round is spread evenly over the remaining rounds".into(),
        ],
    };
    run_loop(setup, public, &data, config, accountant)
}

/// Conditional AIM: trains on cliques touching a private column and copies
/// the public columns into the output.
pub fn conditional_aim_run<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
) -> Result<RunOutput> {
    let mut accountant = Accountant::new(config.budget.rho);
    conditional_aim_run_with(public, private, workload, config, &mut accountant)
}

pub fn conditional_aim_run_with<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    let data = Joined::new(public, private)?;
    let schema = data.schema().clone();
    if workload.cliques().any(|c| c.is_all_public(&schema)) {
        return Err(Error::InvalidWorkload(
            "conditional generation needs a workload whose cliques all touch a private column".into(),
        ));
    }
    let candidates = closure(workload, &schema, |c| (!c.is_all_public(&schema)).then_some(Source::Private))?;
    let init = schema.private_indices().into_iter().map(|j| (Clique::single(j), Source::Private)).collect();
    let setup =
        Setup { method: Method::ConditionalAim, schema, candidates, init, conditional: true, notes: Vec::new() };
    run_loop(setup, public, &data, config, accountant)
}

/// Downward closure of `workload`, labeled by `label` (`None` drops a clique).
fn closure(
    workload: &Workload,
    schema: &Schema,
    label: impl Fn(&Clique) -> Option<Source>,
) -> Result<Vec<(Clique, Source)>> {
    Ok(workload.downward_closure(schema)?.cliques().filter_map(|c| label(c).map(|l| (c.clone(), l))).collect())
}

struct Setup {
    method: Method,
    schema: Schema,
    candidates: Vec<(Clique, Source)>,
    init: Vec<(Clique, Source)>,
    conditional: bool,
    notes: Vec<String>,
}

/// Exact marginals computed on demand and kept for the rest of the run.
struct TruthCache<'a, P: ColumnSource + ?Sized, D: ColumnSource + ?Sized> {
    public: &'a P,
    data: &'a D,
    cache: HashMap<Clique, MarginalVector>,
}

impl<P: ColumnSource + ?Sized, D: ColumnSource + ?Sized> TruthCache<'_, P, D> {
    fn get(&mut self, clique: &Clique, source: Source) -> Result<&MarginalVector> {
        if !self.cache.contains_key(clique) {
            let m = match source {
                Source::Public => compute_marginal(self.public, clique, Scale::Counts)?,
                Source::Private => compute_marginal(self.data, clique, Scale::Counts)?,
            };
            self.cache.insert(clique.clone(), m);
        }
        Ok(&self.cache[clique])
    }
}

fn run_loop<P: ColumnSource + ?Sized, D: ColumnSource + ?Sized>(
    setup: Setup,
    public: &P,
    data: &D,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    config.validate()?;
    match run_loop_inner(&setup, public, data, config, accountant) {
        Ok((out, rounds)) => {
            let ledger = accountant.ledger().clone();
            Ok(RunOutput {
                data: out,
                report: RunReport {
                    method: setup.method,
                    config: *config,
                    rounds,
                    rho_spent: ledger.total(),
                    ledger,
                    notes: setup.notes,
                },
            })
        }
        Err(e) => Err(accountant.abort(e)),
    }
}

fn run_loop_inner<P: ColumnSource + ?Sized, D: ColumnSource + ?Sized>(
    setup: &Setup,
    public: &P,
    data: &D,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<(crate::tabular::DiscreteDataset, Vec<RoundRecord>)> {
    let schema = &setup.schema;
    let n = public.n();
    let total = n as f64;
    let streams = RngStreams::new(config.seed);
    let rho = config.budget.rho;
    if !setup.candidates.iter().any(|(_, l)| *l == Source::Private) {
        return Err(Error::InvalidWorkload("no candidate touches a private column".into()));
    }
    let private_init = setup.init.iter().filter(|(_, l)| *l == Source::Private).count();
    let rho_init = if private_init > 0 { config.init_fraction * rho } else { 0.0 };
    let mut schedule = schedule_rounds(rho - rho_init, config.rounds, config.select_fraction);
    let mut truth = TruthCache { public, data, cache: HashMap::new() };

    let mut measurements: Vec<Measurement> = Vec::new();
    for (i, (clique, label)) in setup.init.iter().enumerate() {
        let public_meas = *label == Source::Public;
        let rho_i = if public_meas { 0.0 } else { rho_init / private_init as f64 };
        accountant.charge(ChargeKind::Measure, None, Some(clique.to_string()), public_meas, rho_i)?;
        let m = truth.get(clique, *label)?;
        let meas = if public_meas {
            Measurement::exact(m)
        } else {
            gaussian_measure(m, gaussian_sigma(rho_i), Source::Private, &mut streams.stream(Purpose::Init, i as u64))?
        };
        measurements.push(meas);
    }

    let opts = config.pgm;
    let measured: Vec<Clique> = measurements.iter().map(|m| m.clique.clone()).collect();
    let mut model = GraphicalModel::new(schema, &measured, total, DEFAULT_PARAM_CAP)?;
    estimate(&mut model, &measurements, &opts.estimate_options(opts.final_iterations))?;

    let mut eligible: Vec<bool> = vec![true; setup.candidates.len()];
    let mut records = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        let alloc = schedule[t];
        let last = t + 1 == config.rounds;
        accountant.charge(ChargeKind::Select, Some(t), None, false, alloc.rho_select)?;
        let sigma = gaussian_sigma(alloc.rho_measure);

        // size filter: a candidate stays eligible while adding it keeps the model small
        let measured: Vec<Clique> = measurements.iter().map(|m| m.clique.clone()).collect();
        for (k, (c, _)) in setup.candidates.iter().enumerate() {
            if eligible[k] && model.tree().containing(c.indices()).is_none() {
                let mut with = measured.clone();
                with.push(c.clone());
                eligible[k] = match build_junction_tree(schema, &with, usize::MAX) {
                    Ok(tree) => tree.parameter_count(schema) <= opts.max_model_size as u128,
                    Err(_) => false,
                };
            }
        }
        let pool: Vec<usize> = (0..setup.candidates.len())
            .filter(|&k| eligible[k])
            .filter(|&k| !last || setup.candidates[k].1 == Source::Private)
            .collect();
        if pool.is_empty() {
            return Err(Error::Selection(format!("no eligible candidate in round {t}")));
        }
        for &k in &pool {
            let (c, l) = &setup.candidates[k];
            truth.get(c, *l)?;
        }
        let model_ref = &model;
        let scores: Vec<f64> = pool
            .par_iter()
            .map(|&k| {
                let (c, l) = &setup.candidates[k];
                let fit = model_ref.infer_marginal(c);
                let tr = &truth.cache[c];
                match l {
                    Source::Private => Ok(score_private(tr, &fit, sigma)),
                    Source::Public => score_public_vertical(schema, tr, &fit),
                }
            })
            .collect::<Result<_>>()?;
        let eps = exponential_epsilon(alloc.rho_select);
        let pick = exp_select(&scores, eps, 1.0, &mut streams.stream(Purpose::Select, t as u64))?;
        let (clique, label) = setup.candidates[pool[pick]].clone();

        let meas = match label {
            Source::Private => {
                accountant.charge(ChargeKind::Measure, Some(t), Some(clique.to_string()), false, alloc.rho_measure)?;
                let m = truth.get(&clique, label)?;
                gaussian_measure(m, sigma, Source::Private, &mut streams.stream(Purpose::Measure, t as u64))?
            }
            Source::Public => {
                accountant.charge(ChargeKind::Measure, Some(t), Some(clique.to_string()), true, 0.0)?;
                let remaining = config.rounds - t - 1;
                for later in schedule.iter_mut().skip(t + 1) {
                    later.rho_measure += alloc.rho_measure / remaining as f64;
                }
                Measurement::exact(truth.get(&clique, label)?)
            }
        };
        let rho_measure = if label == Source::Private { alloc.rho_measure } else { 0.0 };
        let meas_sigma = meas.sigma;
        // an exact marginal measured before adds no constraint
        let repeat = meas.is_exact() && measurements.iter().any(|m| m.is_exact() && m.clique == clique);
        let model_error = if repeat {
            crate::tabular::l1(&model.infer_marginal(&clique).cells, &meas.values) / total
        } else {
            measurements.push(meas);
            if model.tree().containing(clique.indices()).is_none() {
                let measured: Vec<Clique> = measurements.iter().map(|m| m.clique.clone()).collect();
                let mut next = GraphicalModel::new(schema, &measured, total, DEFAULT_PARAM_CAP)?;
                next.warm_start_from(&model);
                model = next;
            }
            estimate(&mut model, &measurements, &opts.estimate_options(opts.round_iterations))?;
            let last_meas = measurements.last().expect("just pushed");
            crate::tabular::l1(&model.infer_marginal(&clique).cells, &last_meas.values) / total
        };
        records.push(RoundRecord {
            round: t,
            clique: clique.to_string(),
            label,
            score: scores[pick],
            candidates: pool.len(),
            sigma: meas_sigma,
            rho_select: alloc.rho_select,
            rho_measure,
            model_error,
            model_size: model.tree().parameter_count(schema).min(u64::MAX as u128) as u64,
        });
    }
    accountant.close();

    estimate(&mut model, &measurements, &opts.estimate_options(opts.final_iterations))?;
    let out = if setup.conditional {
        conditional_sample(&model, public, &streams, opts.conditional_cap)?
    } else {
        sample(&model, n, &mut streams.stream(Purpose::Sample, 0))
    };
    Ok((out, records))
}
