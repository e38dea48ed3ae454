//! Full-joint synthetic model trained with multiplicative weights (vPMW).

use std::collections::HashMap;

use rand::Rng;

use crate::dp::{
    exp_select, exponential_epsilon, gaussian_measure, gaussian_sigma, schedule_rounds, Accountant, ChargeKind,
    Measurement, Purpose, RngStreams,
};
use crate::engine::{EngineConfig, Method, RoundRecord, RunOutput, RunReport};
use crate::error::{Error, Result};
use crate::factor::{for_each_projected, strides_in};
use crate::tabular::{
    compute_marginal, l1, Clique, ColumnSource, DiscreteDataset, Joined, MarginalVector, Scale, Schema, Source,
    Workload,
};

pub const DEFAULT_DOMAIN_CAP: usize = 10_000_000;

const IPF_PASSES: usize = 10;
const IPF_TOL: f64 = 1e-6;

/// Probability table over the full product domain, row-major in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    schema: Schema,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(schema: Schema, probs: Vec<f64>) -> Result<Self> {
        let size = domain_cells(&schema, usize::MAX)?;
        if probs.len() != size {
            return Err(Error::SchemaMismatch(format!("joint has {} cells, domain has {size}", probs.len())));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("joint probabilities must be non-negative".into()));
        }
        let mut j = Self { schema, probs };
        j.normalize();
        Ok(j)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Marginal over `clique` in probability scale.
    pub fn marginal(&self, clique: &Clique) -> MarginalVector {
        let cards = clique.cards(&self.schema);
        let mut cells = vec![0.0; cards.iter().product()];
        let all: Vec<usize> = (0..self.schema.d()).collect();
        let strides = strides_in(&all, clique.indices(), &cards);
        for_each_projected(&self.schema.cardinalities(), &strides, |big, sub| cells[sub] += self.probs[big]);
        MarginalVector { clique: clique.clone(), cards, cells, scale: Scale::Probability }
    }

    /// Multiplies every cell by `weights` at its projection onto `clique`.
    fn reweight(&mut self, clique: &Clique, weights: &[f64]) {
        let cards = clique.cards(&self.schema);
        let all: Vec<usize> = (0..self.schema.d()).collect();
        let strides = strides_in(&all, clique.indices(), &cards);
        let probs = &mut self.probs;
        for_each_projected(&self.schema.cardinalities(), &strides, |big, sub| probs[big] *= weights[sub]);
        self.normalize();
    }

    fn normalize(&mut self) {
        let total: f64 = self.probs.iter().sum();
        if total > 0.0 && total.is_finite() {
            self.probs.iter_mut().for_each(|p| *p /= total);
        } else {
            let u = 1.0 / self.probs.len() as f64;
            self.probs.iter_mut().for_each(|p| *p = u);
        }
    }
}

fn domain_cells(schema: &Schema, cap: usize) -> Result<usize> {
    let size = schema.domain_size();
    if size > cap as u128 {
        return Err(Error::Scalability(format!(
            "full joint over {} columns has {size} cells, above the cap of {cap}; use a graphical-model method",
            schema.d()
        )));
    }
    Ok(size as usize)
}

pub fn uniform_init(schema: &Schema, cap: usize) -> Result<JointDistribution> {
    let size = domain_cells(schema, cap)?;
    Ok(JointDistribution { schema: schema.clone(), probs: vec![1.0 / size as f64; size] })
}

/// Fits a joint to public marginals by iterative proportional fitting,
/// starting from uniform.
pub fn public_init(schema: &Schema, marginals: &[MarginalVector], cap: usize) -> Result<JointDistribution> {
    for m in marginals {
        if !m.clique.is_all_public(schema) {
            return Err(Error::Visibility(format!("initial marginal {} touches a private column", m.clique)));
        }
    }
    let mut joint = uniform_init(schema, cap)?;
    let targets: Vec<MarginalVector> = marginals.iter().map(MarginalVector::to_probability).collect();
    for _ in 0..IPF_PASSES {
        let mut change: f64 = 0.0;
        for t in &targets {
            let cur = joint.marginal(&t.clique);
            change = change.max(l1(&cur.cells, &t.cells));
            let ratio: Vec<f64> = t
                .cells
                .iter()
                .zip(&cur.cells)
                .map(|(&want, &have)| if have > 0.0 { want / have } else { 0.0 })
                .collect();
            joint.reweight(&t.clique, &ratio);
        }
        if change < IPF_TOL {
            break;
        }
    }
    Ok(joint)
}

/// [`public_init`] over the public-labeled workload entries, read from the
/// public view alone.
pub fn public_init_from<P: ColumnSource + ?Sized>(
    public: &P,
    workload: &Workload,
    cap: usize,
) -> Result<JointDistribution> {
    let marginals = workload
        .with_label(Source::Public)
        .map(|e| compute_marginal(public, &e.clique, Scale::Probability))
        .collect::<Result<Vec<_>>>()?;
    public_init(public.schema(), &marginals, cap)
}

/// One multiplicative-weights step toward a measurement on a counts scale
/// of `n` rows.
pub fn mw_update(model: &JointDistribution, measurement: &Measurement, n: usize) -> JointDistribution {
    let mut next = model.clone();
    let current = model.marginal(&measurement.clique);
    let n = n as f64;
    let weights: Vec<f64> =
        measurement.values.iter().zip(&current.cells).map(|(&m, &p)| ((m - n * p) / (2.0 * n)).exp()).collect();
    next.reweight(&measurement.clique, &weights);
    next
}

pub fn average_models(models: &[JointDistribution]) -> Result<JointDistribution> {
    let first = models.first().ok_or_else(|| Error::Config("no models to average".into()))?;
    let mut acc = vec![0.0; first.probs.len()];
    for m in models {
        if m.schema != first.schema {
            return Err(Error::SchemaMismatch("averaged models have different schemas".into()));
        }
        acc.iter_mut().zip(&m.probs).for_each(|(a, p)| *a += p);
    }
    let k = models.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    let mut out = JointDistribution { schema: first.schema.clone(), probs: acc };
    out.normalize();
    Ok(out)
}

/// Draws `n` rows by inverse CDF over the flattened domain.
pub fn sample_joint<R: Rng + ?Sized>(model: &JointDistribution, n: usize, rng: &mut R) -> DiscreteDataset {
    let cards = model.schema.cardinalities();
    let mut cdf = Vec::with_capacity(model.probs.len());
    let mut acc = 0.0;
    for &p in &model.probs {
        acc += p;
        cdf.push(acc);
    }
    let last_positive = model.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let mut columns = vec![Vec::with_capacity(n); cards.len()];
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let mut flat = cdf.partition_point(|&c| c <= u).min(last_positive);
        for j in (0..cards.len()).rev() {
            columns[j].push((flat % cards[j]) as u32);
            flat /= cards[j];
        }
    }
    DiscreteDataset::from_columns(model.schema.clone(), columns).expect("sampled values lie in the domain")
}

/// vPMW: public IPF initialization, then private select-measure rounds with
/// multiplicative-weights updates; generates from the average of all
/// round models.
pub fn vpmw_run<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
) -> Result<RunOutput> {
    let mut accountant = Accountant::new(config.budget.rho);
    vpmw_run_with(public, private, workload, config, &mut accountant)
}

pub fn vpmw_run_with<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    config.validate()?;
    match vpmw_inner(public, private, workload, config, accountant) {
        Ok((data, rounds)) => {
            let ledger = accountant.ledger().clone();
            Ok(RunOutput {
                data,
                report: RunReport {
                    method: Method::Vpmw,
                    config: *config,
                    rounds,
                    rho_spent: ledger.total(),
                    ledger,
                    notes: vec!["output sampled from the average of all round models".into()],
                },
            })
        }
        Err(e) => Err(accountant.abort(e)),
    }
}

fn vpmw_inner<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<(DiscreteDataset, Vec<RoundRecord>)> {
    let data = Joined::new(public, private)?;
    let schema = data.schema().clone();
    let n = data.n();
    let total = n as f64;
    let candidates: Vec<Clique> = workload.with_label(Source::Private).map(|e| e.clique.clone()).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidWorkload(
            "no workload entry touches a private column; restrict the workload to private cliques".into(),
        ));
    }
    domain_cells(&schema, config.domain_cap)?;
    let mut model = public_init_from(public, workload, config.domain_cap)?;

    let streams = RngStreams::new(config.seed);
    let schedule = schedule_rounds(config.budget.rho, config.rounds, config.select_fraction);
    let mut truth: HashMap<Clique, MarginalVector> = HashMap::new();
    let mut sum = vec![0.0; model.probs.len()];
    let mut records = Vec::with_capacity(config.rounds);
    for (t, alloc) in schedule.iter().enumerate() {
        accountant.charge(ChargeKind::Select, Some(t), None, false, alloc.rho_select)?;
        if truth.is_empty() {
            for c in &candidates {
                truth.insert(c.clone(), compute_marginal(&data, c, Scale::Counts)?);
            }
        }
        let scores: Vec<f64> = candidates
            .iter()
            .map(|c| {
                let fit = model.marginal(c);
                truth[c].cells.iter().zip(&fit.cells).map(|(&a, &p)| (a - total * p).abs()).sum()
            })
            .collect();
        let pick = exp_select(
            &scores,
            exponential_epsilon(alloc.rho_select),
            1.0,
            &mut streams.stream(Purpose::Select, t as u64),
        )?;
        let clique = &candidates[pick];
        accountant.charge(ChargeKind::Measure, Some(t), Some(clique.to_string()), false, alloc.rho_measure)?;
        let sigma = gaussian_sigma(alloc.rho_measure);
        let meas =
            gaussian_measure(&truth[clique], sigma, Source::Private, &mut streams.stream(Purpose::Measure, t as u64))?;
        model = mw_update(&model, &meas, n);
        sum.iter_mut().zip(&model.probs).for_each(|(s, p)| *s += p);
        let fit = model.marginal(clique);
        let model_error = meas.values.iter().zip(&fit.cells).map(|(&m, &p)| (m - total * p).abs()).sum::<f64>() / total;
        records.push(RoundRecord {
            round: t,
            clique: clique.to_string(),
            label: Source::Private,
            score: scores[pick],
            candidates: candidates.len(),
            sigma,
            rho_select: alloc.rho_select,
            rho_measure: alloc.rho_measure,
            model_error,
            model_size: model.probs.len() as u64,
        });
    }
    accountant.close();
    let mut averaged = JointDistribution { schema, probs: sum };
    averaged.normalize();
    Ok((sample_joint(&averaged, n, &mut streams.stream(Purpose::Sample, 0)), records))
}
