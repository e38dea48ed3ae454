//! Workload error, experiment grids and result emission.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::PrivacyBudget;
use crate::engine::{method_workload, run_method, EngineConfig, Method, PgmOptions};
use crate::error::{Error, Result};
use crate::gem::GemOptions;
use crate::tabular::{all_marginals_up_to, compute_marginal, l1, ColumnSource, DiscreteDataset, Scale, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryError {
    pub clique: String,
    pub label: Source,
    pub l1: f64,
}

/// Average probability-scale L1 error over a marginal workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total_error: f64,
    /// Mean over all-public cliques (0 when there are none).
    pub public_error: f64,
    /// Mean over cliques touching a private column (0 when there are none).
    pub private_error: f64,
    pub per_query: Vec<QueryError>,
}

/// Compares every 1..=`k_max`-way marginal of `original` and `synthetic`.
pub fn workload_error<A, B>(original: &A, synthetic: &B, k_max: usize) -> Result<ErrorReport>
where
    A: ColumnSource + ?Sized + Sync,
    B: ColumnSource + ?Sized + Sync,
{
    let schema = original.schema();
    if schema.cardinalities() != synthetic.schema().cardinalities() || schema.names() != synthetic.schema().names() {
        return Err(Error::SchemaMismatch("original and synthetic data have different schemas".into()));
    }
    let workload = all_marginals_up_to(schema, k_max)?;
    let per_query = workload
        .entries()
        .par_iter()
        .map(|e| {
            let a = compute_marginal(original, &e.clique, Scale::Probability)?;
            let b = compute_marginal(synthetic, &e.clique, Scale::Probability)?;
            Ok(QueryError { clique: e.clique.to_string(), label: e.label, l1: l1(&a.cells, &b.cells) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |label: Option<Source>| {
        let vals: Vec<f64> = per_query.iter().filter(|q| label.is_none_or(|l| q.label == l)).map(|q| q.l1).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    Ok(ErrorReport {
        total_error: mean(None),
        public_error: mean(Some(Source::Public)),
        private_error: mean(Some(Source::Private)),
        per_query,
    })
}

fn default_seeds() -> usize {
    3
}

fn default_delta() -> f64 {
    1e-6
}

fn default_rounds() -> usize {
    100
}

fn default_k() -> usize {
    3
}

fn default_workers() -> usize {
    1
}

/// Methods crossed with epsilons, public fractions and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub dataset: String,
    pub methods: Vec<Method>,
    pub epsilons: Vec<f64>,
    pub public_fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Largest marginal order of both the training and evaluation workloads.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Run vJAM-PGM in conditional mode.
    #[serde(default)]
    pub conditional_vjam: bool,
    #[serde(default)]
    pub pgm: PgmOptions,
    #[serde(default)]
    pub gem: GemOptions,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentGrid {
    pub fn new(
        dataset: impl Into<String>,
        methods: Vec<Method>,
        epsilons: Vec<f64>,
        public_fractions: Vec<f64>,
    ) -> Self {
        Self {
            dataset: dataset.into(),
            methods,
            epsilons,
            public_fractions,
            seeds: default_seeds(),
            delta: default_delta(),
            rounds: default_rounds(),
            k: default_k(),
            conditional_vjam: false,
            pgm: PgmOptions::default(),
            gem: GemOptions::default(),
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("grid lists no methods".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("grid lists no epsilon values".into()));
        }
        if self.public_fractions.is_empty() {
            return Err(Error::Config("grid lists no public fractions".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("grid needs at least one seed".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::Config(format!("epsilon {e} must be positive")));
        }
        if let Some(p) = self.public_fractions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("public fraction {p} outside [0, 1]")));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        if self.rounds == 0 || self.k == 0 {
            return Err(Error::Config("rounds and k must be positive".into()));
        }
        Ok(())
    }

    /// Every cell of the grid, in method, epsilon, fraction, seed order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &epsilon in &self.epsilons {
                for &public_fraction in &self.public_fractions {
                    for seed in 0..self.seeds as u64 {
                        out.push(CellKey { method, epsilon, public_fraction, seed });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub method: Method,
    pub epsilon: f64,
    pub public_fraction: f64,
    pub seed: u64,
}

impl CellKey {
    fn id(&self) -> (Method, u64, u64, u64) {
        (self.method, self.epsilon.to_bits(), self.public_fraction.to_bits(), self.seed)
    }
}

/// One run of the grid. Failed runs keep their row with NaN errors and the
/// error class as status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub dataset: String,
    pub epsilon: f64,
    pub delta: f64,
    pub public_fraction: f64,
    pub seed: u64,
    pub total_error: f64,
    pub public_error: f64,
    pub private_error: f64,
    pub runtime_s: f64,
    pub rho_spent: f64,
    pub status: String,
}

impl ResultRow {
    pub fn key(&self) -> CellKey {
        CellKey { method: self.method, epsilon: self.epsilon, public_fraction: self.public_fraction, seed: self.seed }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stdev: f64,
}

impl MeanStd {
    /// Sample standard deviation (zero for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, stdev: f64::NAN };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / k;
        let stdev = if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
            0.0
        } else {
            (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        };
        Self { mean, stdev }
    }
}

/// Seed aggregate of one (method, epsilon, fraction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub epsilon: f64,
    pub public_fraction: f64,
    pub completed: usize,
    pub failed: usize,
    pub total_error: MeanStd,
    pub public_error: MeanStd,
    pub private_error: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(Method, u64, u64), Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.method, r.epsilon.to_bits(), r.public_fraction.to_bits())).or_default().push(r);
        }
        let mut out: Vec<AggregateRow> = groups
            .into_values()
            .map(|rows| {
                let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.is_ok()).collect();
                let col = |f: fn(&ResultRow) -> f64| MeanStd::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
                AggregateRow {
                    method: rows[0].method,
                    epsilon: rows[0].epsilon,
                    public_fraction: rows[0].public_fraction,
                    completed: ok.len(),
                    failed: rows.len() - ok.len(),
                    total_error: col(|r| r.total_error),
                    public_error: col(|r| r.public_error),
                    private_error: col(|r| r.private_error),
                }
            })
            .collect();
        out.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.epsilon.total_cmp(&b.epsilon))
                .then(a.public_fraction.total_cmp(&b.public_fraction))
        });
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "method",
            "epsilon",
            "public_fraction",
            "completed",
            "failed",
            "total_error_mean",
            "total_error_stdev",
            "public_error_mean",
            "public_error_stdev",
            "private_error_mean",
            "private_error_stdev",
        ])?;
        for a in self.aggregates() {
            w.write_record([
                a.method.to_string(),
                a.epsilon.to_string(),
                a.public_fraction.to_string(),
                a.completed.to_string(),
                a.failed.to_string(),
                a.total_error.mean.to_string(),
                a.total_error.stdev.to_string(),
                a.public_error.mean.to_string(),
                a.public_error.stdev.to_string(),
                a.private_error.mean.to_string(),
                a.private_error.stdev.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Output of a single grid cell, kept for callers that also want the data.
pub struct CellRun {
    pub row: ResultRow,
    pub output: Option<crate::engine::RunOutput>,
}

/// Runs one cell: trains `key.method` on `data` with the cell's public
/// fraction and scores the synthetic data.
pub fn run_cell(grid: &ExperimentGrid, data: &DiscreteDataset, key: CellKey) -> CellRun {
    let start = Instant::now();
    let result = (|| {
        let schema = data.schema().with_public_fraction(key.public_fraction)?;
        let data = data.with_schema(schema)?;
        let budget = PrivacyBudget::from_dp(key.epsilon, grid.delta)?;
        let mut config = EngineConfig::new(budget, key.seed);
        config.rounds = grid.rounds;
        config.pgm = grid.pgm;
        config.gem = grid.gem;
        config.conditional = key.method == Method::VjamPgm && grid.conditional_vjam;
        let workload = method_workload(key.method, &data, grid.k, config.conditional)?;
        let out = run_method(key.method, &data, &workload, &config)?;
        let err = workload_error(&data, &out.data, grid.k)?;
        Ok::<_, Error>((out, err))
    })();
    let runtime_s = start.elapsed().as_secs_f64();
    let mut row = ResultRow {
        method: key.method,
        dataset: grid.dataset.clone(),
        epsilon: key.epsilon,
        delta: grid.delta,
        public_fraction: key.public_fraction,
        seed: key.seed,
        total_error: f64::NAN,
        public_error: f64::NAN,
        private_error: f64::NAN,
        runtime_s,
        rho_spent: f64::NAN,
        status: "ok".into(),
    };
    match result {
        Ok((out, err)) => {
            row.total_error = err.total_error;
            row.public_error = err.public_error;
            row.private_error = err.private_error;
            row.rho_spent = out.report.rho_spent;
            CellRun { row, output: Some(out) }
        }
        Err(e) => {
            if let Error::BudgetAborted { ledger, .. } = &e {
                row.rho_spent = ledger.total();
            }
            row.status = e.class().as_str().to_string();
            CellRun { row, output: None }
        }
    }
}

/// Runs every cell of `grid` not already present in `done`, calling
/// `on_row` as each finishes. Returns the full table in grid order.
pub fn run_grid_resume(
    grid: &ExperimentGrid,
    data: &DiscreteDataset,
    done: &ResultsTable,
    on_row: impl Fn(&ResultRow) + Sync,
) -> Result<ResultsTable> {
    grid.validate()?;
    let finished: HashSet<_> = done.rows.iter().map(|r| r.key().id()).collect();
    let cells = grid.cells();
    let todo: Vec<CellKey> = cells.iter().copied().filter(|c| !finished.contains(&c.id())).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let fresh: Vec<ResultRow> = pool.install(|| {
        todo.par_iter()
            .map(|&key| {
                let row = run_cell(grid, data, key).row;
                on_row(&row);
                row
            })
            .collect()
    });
    let mut by_key: BTreeMap<(Method, u64, u64, u64), ResultRow> = BTreeMap::new();
    for r in done.rows.iter().cloned().chain(fresh) {
        by_key.insert(r.key().id(), r);
    }
    let rows = cells.iter().filter_map(|c| by_key.remove(&c.id())).collect();
    Ok(ResultsTable { rows })
}

pub fn run_grid(grid: &ExperimentGrid, data: &DiscreteDataset) -> Result<ResultsTable> {
    run_grid_resume(grid, data, &ResultsTable::default(), |_| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisColumn {
    Epsilon,
    PublicFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorColumn {
    Total,
    Public,
    Private,
}

/// Which result columns a plot series uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisSpec {
    pub x: AxisColumn,
    pub y: ErrorColumn,
}

impl AxisSpec {
    pub fn parse(x: &str, y: &str) -> Result<Self> {
        let x = match x {
            "epsilon" => AxisColumn::Epsilon,
            "public_fraction" => AxisColumn::PublicFraction,
            other => return Err(Error::Config(format!("unknown x column '{other}'"))),
        };
        let y = match y {
            "total_error" => ErrorColumn::Total,
            "public_error" => ErrorColumn::Public,
            "private_error" => ErrorColumn::Private,
            other => return Err(Error::Config(format!("unknown y column '{other}'"))),
        };
        Ok(Self { x, y })
    }

    fn x_name(&self) -> &'static str {
        match self.x {
            AxisColumn::Epsilon => "epsilon",
            AxisColumn::PublicFraction => "public_fraction",
        }
    }

    fn y_name(&self) -> &'static str {
        match self.y {
            ErrorColumn::Total => "total_error",
            ErrorColumn::Public => "public_error",
            ErrorColumn::Private => "private_error",
        }
    }
}

/// Writes one tab-separated series per method into `dir`; returns the paths.
///
/// Columns: x, the other grid axis, mean, stdev and the number of completed
/// seeds.
pub fn emit_plot_data(table: &ResultsTable, axis: AxisSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::Config("no results to plot".into()));
    }
    let other = match axis.x {
        AxisColumn::Epsilon => "public_fraction",
        AxisColumn::PublicFraction => "epsilon",
    };
    let mut series: BTreeMap<Method, Vec<String>> = BTreeMap::new();
    let mut aggs = table.aggregates();
    aggs.sort_by(|a, b| {
        let (xa, oa, xb, ob) = match axis.x {
            AxisColumn::Epsilon => (a.epsilon, a.public_fraction, b.epsilon, b.public_fraction),
            AxisColumn::PublicFraction => (a.public_fraction, a.epsilon, b.public_fraction, b.epsilon),
        };
        a.method.cmp(&b.method).then(oa.total_cmp(&ob)).then(xa.total_cmp(&xb))
    });
    for a in aggs {
        let (x, o) = match axis.x {
            AxisColumn::Epsilon => (a.epsilon, a.public_fraction),
            AxisColumn::PublicFraction => (a.public_fraction, a.epsilon),
        };
        let y = match axis.y {
            ErrorColumn::Total => a.total_error,
            ErrorColumn::Public => a.public_error,
            ErrorColumn::Private => a.private_error,
        };
        series.entry(a.method).or_default().push(format!("{x}\t{o}\t{}\t{}\t{}", y.mean, y.stdev, a.completed));
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (method, lines) in series {
        let path = dir.join(format!("{}_{}_vs_{}.tsv", method, axis.y_name(), axis.x_name()));
        let mut text = format!("{}\t{other}\tmean_{}\tstdev_{}\tseeds\n", axis.x_name(), axis.y_name(), axis.y_name());
        for l in lines {
            text.push_str(&l);
            text.push('\n');
        }
        fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::Schema;

    fn ds(cards: &[usize], rows: &[Vec<u32>]) -> DiscreteDataset {
        DiscreteDataset::from_rows(Schema::anonymous(cards).unwrap(), rows).unwrap()
    }

    #[test]
    fn identity_and_disjoint_support() {
        let d = ds(&[2, 3], &[vec![0, 1], vec![1, 2], vec![1, 1]]);
        assert_eq!(workload_error(&d, &d, 3).unwrap().total_error, 0.0);
        let a = ds(&[2], &[vec![0], vec![0]]);
        let b = ds(&[2], &[vec![1], vec![1], vec![1]]);
        assert_eq!(workload_error(&a, &b, 1).unwrap().total_error, 2.0);
    }

    #[test]
    fn hand_computed_queries() {
        let schema = Schema::anonymous(&[2, 2]).unwrap().with_public_fraction(0.5).unwrap();
        let a = DiscreteDataset::from_rows(schema.clone(), &[vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 1]]).unwrap();
        let b = DiscreteDataset::from_rows(schema, &[vec![0, 0], vec![0, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let r = workload_error(&a, &b, 2).unwrap();
        // col0: a [.5,.5] b [.75,.25] -> .5 ; col1: a [.25,.75] b [.5,.5] -> .5
        // joint: a [.25,.25,0,.5] b [.5,.25,0,.25] -> .5
        let want = [0.5, 0.5, 0.5];
        for (q, w) in r.per_query.iter().zip(want) {
            assert!((q.l1 - w).abs() < 1e-12);
        }
        assert_eq!(r.per_query[0].label, Source::Public);
        assert!((r.public_error - 0.5).abs() < 1e-12);
        assert!((r.private_error - 0.5).abs() < 1e-12);
        let resum = r.per_query.iter().map(|q| q.l1).sum::<f64>() / r.per_query.len() as f64;
        assert_eq!(r.total_error, resum);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let a = ds(&[2], &[vec![0]]);
        let b = ds(&[3], &[vec![0]]);
        assert!(matches!(workload_error(&a, &b, 1), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[0.3]);
        assert_eq!((m.mean, m.stdev), (0.3, 0.0));
        assert_eq!(MeanStd::of(&[0.2, 0.2, 0.2]).stdev, 0.0);
        let a = MeanStd::of(&[0.1, 0.7, 0.4]);
        let b = MeanStd::of(&[0.4, 0.1, 0.7]);
        assert_eq!(a, b);
        assert!((a.stdev - 0.3).abs() < 1e-12);
    }

    fn row(method: Method, epsilon: f64, seed: u64, err: f64) -> ResultRow {
        ResultRow {
            method,
            dataset: "toy".into(),
            epsilon,
            delta: 1e-6,
            public_fraction: 0.5,
            seed,
            total_error: err,
            public_error: err,
            private_error: err,
            runtime_s: 0.0,
            rho_spent: 1.0,
            status: "ok".into(),
        }
    }

    #[test]
    fn plot_files_have_one_row_per_x() {
        let mut rows = Vec::new();
        for m in [Method::Aim, Method::VjamPgm] {
            for e in [0.1, 1.0, 10.0] {
                rows.push(row(m, e, 0, 0.5 / e));
            }
        }
        let table = ResultsTable { rows };
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&table, AxisSpec::parse("epsilon", "total_error").unwrap(), dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        for p in &paths {
            let text = fs::read_to_string(p).unwrap();
            assert_eq!(text.lines().count(), 4);
        }
        assert!(AxisSpec::parse("delta", "total_error").is_err());
        assert!(AxisSpec::parse("epsilon", "runtime").is_err());
        assert!(emit_plot_data(
            &ResultsTable::default(),
            AxisSpec::parse("epsilon", "total_error").unwrap(),
            dir.path()
        )
        .is_err());
    }

    #[test]
    fn csv_round_trip_keeps_failed_rows() {
        let mut bad = row(Method::Vpmw, 1.0, 2, f64::NAN);
        bad.status = "scalability_error".into();
        let table = ResultsTable { rows: vec![row(Method::Aim, 1.0, 0, 0.25), bad] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        table.write_csv(&p).unwrap();
        let back = ResultsTable::read_csv(&p).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0], table.rows[0]);
        assert!(back.rows[1].total_error.is_nan());
        let agg = back.aggregates();
        assert_eq!(agg.iter().find(|a| a.method == Method::Vpmw).unwrap().failed, 1);
    }

    fn toy_grid_data() -> DiscreteDataset {
        let rows: Vec<Vec<u32>> =
            (0..200u32).map(|i| vec![i % 2, (i / 2) % 3, (i % 2) ^ ((i / 7) % 2), (i / 3) % 2]).collect();
        ds(&[2, 3, 2, 2], &rows)
    }

    #[test]
    fn grid_counts_resume_and_determinism() {
        let mut grid = ExperimentGrid::new("toy", vec![Method::ConditionalAim], vec![1.0], vec![0.5]);
        grid.rounds = 4;
        grid.pgm.round_iterations = 20;
        grid.pgm.final_iterations = 100;
        let data = toy_grid_data();
        let t = run_grid(&grid, &data).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.aggregates().len(), 1);
        assert!(t.rows.iter().all(|r| r.is_ok() && r.public_error == 0.0));
        let again = run_grid(&grid, &data).unwrap();
        for (a, b) in t.rows.iter().zip(&again.rows) {
            assert_eq!(a.total_error.to_bits(), b.total_error.to_bits());
            assert_eq!(a.rho_spent.to_bits(), b.rho_spent.to_bits());
        }
        let partial = ResultsTable { rows: t.rows[..1].to_vec() };
        let count = std::sync::atomic::AtomicUsize::new(0);
        let resumed = run_grid_resume(&grid, &data, &partial, |_| {
            count.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        })
        .unwrap();
        assert_eq!(count.into_inner(), 2);
        assert_eq!(resumed.rows.len(), 3);
        grid.epsilons.clear();
        assert!(matches!(run_grid(&grid, &data), Err(Error::Config(_))));
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut grid = ExperimentGrid::new("toy", vec![Method::Vpmw], vec![1.0], vec![0.5]);
        grid.seeds = 1;
        grid.rounds = 2;
        let data = toy_grid_data();
        let mut small = grid.clone();
        small.k = 2;
        let t = run_grid(&small, &data).unwrap();
        assert!(t.rows[0].is_ok());
        // a domain cap below the joint size turns the run into a failure row
        let rows: Vec<Vec<u32>> = (0..50u32).map(|i| vec![i % 10; 8]).collect();
        let wide = ds(&[10; 8], &rows);
        let t = run_grid(&grid, &wide).unwrap();
        assert_eq!(t.rows[0].status, "scalability_error");
        assert!(t.rows[0].total_error.is_nan());
    }
}
