//! GEM-lite: a relaxed dataset of soft rows fit to noisy marginals by
//! gradient descent, with public pretraining and an EMA of the logits.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dp::{
    exp_select, exponential_epsilon, gaussian_measure, gaussian_sigma, schedule_rounds, Accountant, ChargeKind,
    Measurement, Purpose, RngStreams,
};
use crate::engine::{EngineConfig, Method, RoundRecord, RunOutput, RunReport};
use crate::error::{Error, Result};
use crate::tabular::{
    compute_marginal, l1, Clique, ColumnSource, DiscreteDataset, Joined, MarginalVector, Scale, Schema, Source,
    Workload,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GemOptions {
    /// Number of soft rows.
    pub m: usize,
    /// Optimizer steps after each measurement.
    pub steps: usize,
    pub learning_rate: f64,
    /// Per-round multiplicative decay of the learning rate.
    pub decay: f64,
    pub ema: f64,
    pub pretrain_rounds: usize,
}

impl Default for GemOptions {
    fn default() -> Self {
        Self { m: 1000, steps: 50, learning_rate: 0.1, decay: 0.99, ema: 0.9, pretrain_rounds: 10 }
    }
}

/// `m` rows, each holding one logit vector per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDataset {
    schema: Schema,
    m: usize,
    offsets: Vec<usize>,
    width: usize,
    logits: Vec<f64>,
}

impl SoftDataset {
    pub fn from_logits(schema: &Schema, m: usize, logits: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("a soft dataset needs at least one row".into()));
        }
        let mut offsets = Vec::with_capacity(schema.d());
        let mut width = 0;
        for c in schema.cardinalities() {
            offsets.push(width);
            width += c;
        }
        if logits.len() != m * width {
            return Err(Error::SchemaMismatch(format!("expected {} logits, got {}", m * width, logits.len())));
        }
        Ok(Self { schema: schema.clone(), m, offsets, width, logits })
    }

    pub fn uniform(schema: &Schema, m: usize) -> Result<Self> {
        let width: usize = schema.cardinalities().iter().sum();
        Self::from_logits(schema, m, vec![0.0; m * width])
    }

    /// Standard normal logits.
    pub fn random<R: Rng + ?Sized>(schema: &Schema, m: usize, rng: &mut R) -> Result<Self> {
        let width: usize = schema.cardinalities().iter().sum();
        let logits = (0..m * width).map(|_| StandardNormal.sample(rng)).collect();
        Self::from_logits(schema, m, logits)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Row-wise softmax of every column, in the logit layout.
    pub fn probabilities(&self) -> Vec<f64> {
        let cards = self.schema.cardinalities();
        let mut out = self.logits.clone();
        for r in 0..self.m {
            for (j, &k) in cards.iter().enumerate() {
                let start = r * self.width + self.offsets[j];
                softmax_in_place(&mut out[start..start + k]);
            }
        }
        out
    }

    fn slot(&self, row: usize, col: usize) -> usize {
        row * self.width + self.offsets[col]
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Expected marginal of the soft rows over `clique`, scaled to `n` rows.
pub fn soft_marginal(s: &SoftDataset, clique: &Clique, n: usize) -> MarginalVector {
    soft_marginal_from(s, &s.probabilities(), clique, n as f64)
}

fn soft_marginal_from(s: &SoftDataset, probs: &[f64], clique: &Clique, n: f64) -> MarginalVector {
    let split = Split::new(s, probs, clique);
    let cells = split.marginal(s, probs, n);
    MarginalVector { clique: clique.clone(), cards: clique.cards(&s.schema), cells, scale: Scale::Counts }
}

/// A clique seen as one separate column (the widest) and the remaining
/// lead columns, flattened per row into `head` (`m` by `h`, row-major).
/// Work arrays are laid out `h` by `k_sep`; `perm` maps them to cells.
struct Split {
    lead: Vec<usize>,
    lead_cards: Vec<usize>,
    sep: usize,
    k_sep: usize,
    h: usize,
    head: Vec<f64>,
    perm: Vec<usize>,
}

impl Split {
    fn new(s: &SoftDataset, probs: &[f64], clique: &Clique) -> Self {
        let vars = clique.indices();
        let all = s.schema.cardinalities();
        let cards: Vec<usize> = vars.iter().map(|&c| all[c]).collect();
        let pos = (0..vars.len()).rev().max_by_key(|&j| cards[j]).expect("cliques are non-empty");
        let sep = vars[pos];
        let k_sep = cards[pos];
        let lead: Vec<usize> = vars.iter().copied().filter(|&c| c != sep).collect();
        let lead_cards: Vec<usize> = lead.iter().map(|&c| all[c]).collect();
        let h: usize = lead_cards.iter().product();

        let mut strides = vec![1; cards.len()];
        for j in (0..cards.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * cards[j + 1];
        }
        let lead_strides: Vec<usize> = (0..vars.len()).filter(|&j| j != pos).map(|j| strides[j]).collect();
        let mut perm = Vec::with_capacity(h * k_sep);
        let mut idx = vec![0usize; lead.len()];
        for _ in 0..h {
            let base: usize = idx.iter().zip(&lead_strides).map(|(i, st)| i * st).sum();
            perm.extend((0..k_sep).map(|l| base + l * strides[pos]));
            for c in (0..idx.len()).rev() {
                idx[c] += 1;
                if idx[c] < lead_cards[c] {
                    break;
                }
                idx[c] = 0;
            }
        }

        let mut head = vec![1.0; s.m * h];
        for (r, row) in head.chunks_mut(h).enumerate() {
            let mut len = 1;
            for (&c, &k) in lead.iter().zip(&lead_cards) {
                let p = &probs[s.slot(r, c)..s.slot(r, c) + k];
                for i in (0..len).rev() {
                    let base = row[i];
                    for a in 0..k {
                        row[i * k + a] = base * p[a];
                    }
                }
                len *= k;
            }
        }
        Self { lead, lead_cards, sep, k_sep, h, head, perm }
    }

    /// Marginal in cell order, scaled to `n` rows.
    fn marginal(&self, s: &SoftDataset, probs: &[f64], n: f64) -> Vec<f64> {
        let mut work = vec![0.0; self.h * self.k_sep];
        // head^T (h x m) times the separate column (m x k_sep)
        gemm(
            (self.h, s.m, self.k_sep),
            n / s.m as f64,
            (&self.head, 1, self.h),
            (&probs[s.offsets[self.sep]..], s.width, 1),
            0.0,
            (&mut work, self.k_sep, 1),
        );
        let mut cells = vec![0.0; work.len()];
        for (&p, w) in self.perm.iter().zip(work) {
            cells[p] = w;
        }
        cells
    }

    /// Adds d(sum_v g[v] * prod_c p_c[v_c]) / d p_c for every row and clique column.
    fn accumulate(&self, s: &SoftDataset, probs: &[f64], g: &[f64], grad_p: &mut [f64]) {
        let (h, k, m) = (self.h, self.k_sep, s.m);
        let off = s.offsets[self.sep];
        let g: Vec<f64> = self.perm.iter().map(|&p| g[p]).collect();
        // separate column: head (m x h) times g (h x k_sep)
        gemm((m, h, k), 1.0, (&self.head, h, 1), (&g, k, 1), 1.0, (&mut grad_p[off..], s.width, 1));
        if self.lead.is_empty() {
            return;
        }
        // g contracted with the separate column: (m x k_sep) times g^T (k_sep x h)
        let mut rest = vec![0.0; m * h];
        gemm((m, k, h), 1.0, (&probs[off..], s.width, 1), (&g, 1, k), 0.0, (&mut rest, h, 1));
        match self.lead[..] {
            [a] => {
                for (r, row) in rest.chunks(h).enumerate() {
                    let at = s.slot(r, a);
                    grad_p[at..at + h].iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
            [a, b] => {
                let kb = self.lead_cards[1];
                for (r, row) in rest.chunks(h).enumerate() {
                    let (at, bt) = (s.slot(r, a), s.slot(r, b));
                    let pa = &probs[at..at + self.lead_cards[0]];
                    let pb = &probs[bt..bt + kb];
                    let mut gb = vec![0.0; kb];
                    for (i, block) in row.chunks(kb).enumerate() {
                        grad_p[at + i] += block.iter().zip(pb).map(|(x, y)| x * y).sum::<f64>();
                        gb.iter_mut().zip(block).for_each(|(x, y)| *x += y * pa[i]);
                    }
                    grad_p[bt..bt + kb].iter_mut().zip(&gb).for_each(|(x, y)| *x += y);
                }
            }
            _ => self.accumulate_lead(s, probs, &rest, grad_p),
        }
    }

    fn accumulate_lead(&self, s: &SoftDataset, probs: &[f64], rest: &[f64], grad_p: &mut [f64]) {
        let q = self.lead.len();
        let mut idx = vec![0usize; q];
        for (r, row) in rest.chunks(self.h).enumerate() {
            let slots: Vec<usize> = self.lead.iter().map(|&c| s.slot(r, c)).collect();
            idx.iter_mut().for_each(|i| *i = 0);
            for &gv in row {
                for c in 0..q {
                    let mut other = gv;
                    for c2 in 0..q {
                        if c2 != c {
                            other *= probs[slots[c2] + idx[c2]];
                        }
                    }
                    grad_p[slots[c] + idx[c]] += other;
                }
                for c in (0..q).rev() {
                    idx[c] += 1;
                    if idx[c] < self.lead_cards[c] {
                        break;
                    }
                    idx[c] = 0;
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` on strided views given as (data, row stride, column stride).
fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    beta: f64,
    c: (&mut [f64], usize, usize),
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, k, a.1, a.2) < a.0.len());
    assert!(last(k, n, b.1, b.2) < b.0.len());
    assert!(last(m, n, c.1, c.2) < c.0.len());
    // SAFETY: every index reached through the strides is bounds-checked above
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

/// Mean over measurements of the L1 gap to the soft marginal divided by
/// `n`, and its gradient with respect to the logits.
pub fn loss_and_gradient(s: &SoftDataset, measurements: &[Measurement], n: usize) -> (f64, Vec<f64>) {
    let probs = s.probabilities();
    let nf = n as f64;
    let k = measurements.len().max(1) as f64;
    // measurements sharing a clique share one marginal evaluation
    let mut groups: BTreeMap<&Clique, Vec<&Measurement>> = BTreeMap::new();
    for m in measurements {
        groups.entry(&m.clique).or_default().push(m);
    }
    let mut loss = 0.0;
    let mut grad_p = vec![0.0; probs.len()];
    for (clique, ms) in groups {
        let split = Split::new(s, &probs, clique);
        let fit = split.marginal(s, &probs, nf);
        let mut g = vec![0.0; fit.len()];
        for m in ms {
            loss += l1(&fit, &m.values) / (nf * k);
            for (gi, (&a, &b)) in g.iter_mut().zip(fit.iter().zip(&m.values)) {
                let d = a - b;
                if d != 0.0 {
                    *gi += d.signum() / (nf * k);
                }
            }
        }
        let scale = nf / s.m as f64;
        g.iter_mut().for_each(|x| *x *= scale);
        split.accumulate(s, &probs, &g, &mut grad_p);
    }
    let cards = s.schema.cardinalities();
    let mut grad = vec![0.0; probs.len()];
    for r in 0..s.m {
        for (j, &kj) in cards.iter().enumerate() {
            let at = s.slot(r, j);
            let p = &probs[at..at + kj];
            let gp = &grad_p[at..at + kj];
            let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
            for a in 0..kj {
                grad[at + a] = p[a] * (gp[a] - dot);
            }
        }
    }
    (loss, grad)
}

/// Adam on the logits.
struct Adam {
    m1: Vec<f64>,
    m2: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m1: vec![0.0; len], m2: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m1[i] = B1 * self.m1[i] + (1.0 - B1) * grad[i];
            self.m2[i] = B2 * self.m2[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m1[i] / c1) / ((self.m2[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Fits the soft rows to exact public marginals for `rounds` passes of
/// `opts.steps` optimizer steps, keeping the best iterate seen.
pub fn pretrain_public(
    s: &SoftDataset,
    marginals: &[MarginalVector],
    rounds: usize,
    opts: &GemOptions,
) -> Result<SoftDataset> {
    for m in marginals {
        if !m.clique.is_all_public(&s.schema) {
            return Err(Error::Visibility(format!("pretraining marginal {} touches a private column", m.clique)));
        }
    }
    if rounds == 0 || marginals.is_empty() {
        return Ok(s.clone());
    }
    let n = marginals[0].total().round().max(1.0) as usize;
    let targets: Vec<Measurement> = marginals.iter().map(|m| Measurement::exact(&m.to_counts(n as f64))).collect();
    let mut cur = s.clone();
    let mut adam = Adam::new(cur.logits.len());
    let (mut best_loss, mut grad) = loss_and_gradient(&cur, &targets, n);
    let mut best = cur.clone();
    let mut lr = opts.learning_rate;
    for _ in 0..rounds {
        for _ in 0..opts.steps {
            adam.step(&mut cur.logits, &grad, lr);
            let (loss, g) = loss_and_gradient(&cur, &targets, n);
            if loss < best_loss {
                best_loss = loss;
                best = cur.clone();
            }
            grad = g;
        }
        lr *= opts.decay;
    }
    Ok(best)
}

/// Draws `n` rows: a soft row uniformly at random, then each column from
/// that row's probabilities.
pub fn sample_soft<R: Rng + ?Sized>(s: &SoftDataset, n: usize, rng: &mut R) -> DiscreteDataset {
    let probs = s.probabilities();
    let cards = s.schema.cardinalities();
    let mut columns = vec![Vec::with_capacity(n); cards.len()];
    for _ in 0..n {
        let r = rng.random_range(0..s.m);
        for (j, &k) in cards.iter().enumerate() {
            let p = &probs[s.slot(r, j)..s.slot(r, j) + k];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut v = k - 1;
            for (a, &pa) in p.iter().enumerate() {
                acc += pa;
                if u < acc {
                    v = a;
                    break;
                }
            }
            columns[j].push(v as u32);
        }
    }
    DiscreteDataset::from_columns(s.schema.clone(), columns).expect("sampled values lie in the domain")
}

/// `ema <- decay * ema + (1 - decay) * x`.
pub fn ema_update(ema: &mut [f64], x: &[f64], decay: f64) {
    ema.iter_mut().zip(x).for_each(|(a, &b)| *a = decay * *a + (1.0 - decay) * b);
}

pub fn gem_run<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
) -> Result<RunOutput> {
    let mut accountant = Accountant::new(config.budget.rho);
    gem_run_with(public, private, workload, config, &mut accountant)
}

pub fn gem_run_with<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    config.validate()?;
    match gem_inner(public, private, workload, config, accountant) {
        Ok((data, rounds)) => {
            let ledger = accountant.ledger().clone();
            Ok(RunOutput {
                data,
                report: RunReport {
                    method: Method::GemLite,
                    config: *config,
                    rounds,
                    rho_spent: ledger.total(),
                    ledger,
                    notes: vec![format!(
                        "soft-row relaxation with {} rows in place of a generator network",
                        config.gem.m
                    )],
                },
            })
        }
        Err(e) => Err(accountant.abort(e)),
    }
}

fn gem_inner<P: ColumnSource + ?Sized, Q: ColumnSource + ?Sized>(
    public: &P,
    private: &Q,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<(DiscreteDataset, Vec<RoundRecord>)> {
    let opts = config.gem;
    let data = Joined::new(public, private)?;
    let schema = data.schema().clone();
    let n = data.n();
    let candidates: Vec<Clique> = workload.with_label(Source::Private).map(|e| e.clique.clone()).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidWorkload(
            "no workload entry touches a private column; restrict the workload to private cliques".into(),
        ));
    }
    let streams = RngStreams::new(config.seed);
    let init = SoftDataset::random(&schema, opts.m, &mut streams.stream(Purpose::Init, 0))?;
    let public_marginals = workload
        .with_label(Source::Public)
        .map(|e| compute_marginal(public, &e.clique, Scale::Counts))
        .collect::<Result<Vec<_>>>()?;
    let mut soft = pretrain_public(&init, &public_marginals, opts.pretrain_rounds, &opts)?;

    let schedule = schedule_rounds(config.budget.rho, config.rounds, config.select_fraction);
    let ema_start = config.rounds.div_ceil(2).max(1) - 1;
    let mut ema: Option<Vec<f64>> = None;
    let mut adam = Adam::new(soft.logits.len());
    let mut lr = opts.learning_rate;
    let mut truth: Vec<MarginalVector> = Vec::new();
    let mut measurements: Vec<Measurement> = Vec::new();
    let mut records = Vec::with_capacity(config.rounds);
    for (t, alloc) in schedule.iter().enumerate() {
        accountant.charge(ChargeKind::Select, Some(t), None, false, alloc.rho_select)?;
        if truth.is_empty() {
            truth = candidates.iter().map(|c| compute_marginal(&data, c, Scale::Counts)).collect::<Result<_>>()?;
        }
        let probs = soft.probabilities();
        let scores: Vec<f64> = candidates
            .iter()
            .zip(&truth)
            .map(|(c, tr)| l1(&tr.cells, &soft_marginal_from(&soft, &probs, c, n as f64).cells))
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
        measurements.push(gaussian_measure(
            &truth[pick],
            sigma,
            Source::Private,
            &mut streams.stream(Purpose::Measure, t as u64),
        )?);

        for _ in 0..opts.steps {
            let (_, grad) = loss_and_gradient(&soft, &measurements, n);
            adam.step(&mut soft.logits, &grad, lr);
        }
        lr *= opts.decay;
        if t >= ema_start {
            ema = Some(match ema {
                None => soft.logits.clone(),
                Some(mut e) => {
                    ema_update(&mut e, &soft.logits, opts.ema);
                    e
                }
            });
        }
        let fit = soft_marginal(&soft, clique, n);
        let last = measurements.last().expect("just pushed");
        records.push(RoundRecord {
            round: t,
            clique: clique.to_string(),
            label: Source::Private,
            score: scores[pick],
            candidates: candidates.len(),
            sigma,
            rho_select: alloc.rho_select,
            rho_measure: alloc.rho_measure,
            model_error: l1(&fit.cells, &last.values) / n as f64,
            model_size: soft.logits.len() as u64,
        });
    }
    accountant.close();
    let final_model = SoftDataset::from_logits(&schema, opts.m, ema.unwrap_or_else(|| soft.logits.clone()))?;
    Ok((sample_soft(&final_model, n, &mut streams.stream(Purpose::Sample, 0)), records))
}
