mod config;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vpam::dp::{Ledger, PrivacyBudget};
use vpam::engine::{method_workload, run_method, EngineConfig, Method, RunReport};
use vpam::eval::{emit_plot_data, run_grid_resume, workload_error, AxisSpec, ErrorReport, ResultRow, ResultsTable};
use vpam::tabular::discretize::{read_discrete_csv, write_csv};
use vpam::tabular::{discretize, BinMap, DiscreteDataset, DiscretizeOptions, RawTable, Schema};
use vpam::{Error, Result};

use config::{load, RunConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "vpam", version, about = "Private synthetic data with public columns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize a raw CSV into data.csv, schema.json and bins.json.
    Prepare(PrepareArgs),
    /// Train one method and write synthetic data with its reports.
    Run(RunArgs),
    /// Run an experiment grid; results are appended as cells finish.
    Sweep(SweepArgs),
    /// Summarize a results CSV and emit plot series.
    Report(ReportArgs),
}

#[derive(Args)]
struct PrepareArgs {
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_bins: usize,
    /// Keep only the first N columns.
    #[arg(long)]
    column_limit: Option<usize>,
    /// Token treated as a missing value (repeatable); empty cells always are.
    #[arg(long = "missing")]
    missing: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    bins: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    public_columns: Option<Vec<String>>,
    #[arg(long)]
    public_fraction: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    conditional: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Keep rows already in results.csv and run only the missing cells.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "epsilon")]
    x: String,
    #[arg(long, default_value = "total_error")]
    y: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let raw = RawTable::read_csv(&a.input, &a.missing)?;
    if raw.rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", a.input.display())));
    }
    let (data, bins) = discretize(&raw, DiscretizeOptions { max_bins: a.max_bins, column_limit: a.column_limit })?;
    fs::create_dir_all(&a.out_dir)?;
    write_csv(&a.out_dir.join("data.csv"), &data, None)?;
    data.schema().write_json(&a.out_dir.join("schema.json"))?;
    bins.write_json(&a.out_dir.join("bins.json"))?;
    println!(
        "n={} d={} rows_dropped={} columns_dropped={}",
        data.n(),
        data.d(),
        bins.rows_dropped,
        bins.dropped_columns.len()
    );
    Ok(())
}

/// Reads a prepared dataset, with its schema from `schema`, the sibling
/// `schema.json`, or inferred from the largest index in each column.
fn load_dataset(path: &Path, schema: Option<&Path>) -> Result<DiscreteDataset> {
    let sibling = path.with_file_name("schema.json");
    let schema_path = schema.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let schema = match schema_path {
        Some(p) => Schema::read_json(&p)?,
        None => infer_schema(path)?,
    };
    read_discrete_csv(path, &schema)
}

fn infer_schema(path: &Path) -> Result<Schema> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut cards = vec![1usize; names.len()];
    for rec in rdr.records() {
        for (c, v) in cards.iter_mut().zip(rec?.iter()) {
            let x: usize = v.parse().map_err(|_| Error::SchemaMismatch(format!("non-integer cell '{v}'")))?;
            *c = (*c).max(x + 1);
        }
    }
    Schema::from_cardinalities(names, &cards)
}

fn merge_run_config(a: RunArgs) -> Result<RunConfig> {
    if a.public_columns.is_some() && a.public_fraction.is_some() {
        return Err(Error::Config("pass either --public-columns or --public-fraction, not both".into()));
    }
    let mut cfg = match &a.config {
        Some(p) => load::<RunConfig>(p)?,
        None => RunConfig {
            dataset: a.dataset.clone().ok_or_else(|| Error::Config("--dataset or --config is required".into()))?,
            schema: None,
            bins: None,
            public_columns: None,
            public_fraction: None,
            method: a.method.ok_or_else(|| Error::Config("--method is required".into()))?,
            epsilon: a.epsilon.ok_or_else(|| Error::Config("--epsilon is required".into()))?,
            delta: 1e-6,
            rounds: 100,
            seed: 0,
            output_dir: a.output_dir.clone().ok_or_else(|| Error::Config("--output-dir is required".into()))?,
            k: 3,
            conditional: false,
            pgm: Default::default(),
            gem: Default::default(),
        },
    };
    if let Some(v) = a.dataset {
        cfg.dataset = v;
    }
    if a.schema.is_some() {
        cfg.schema = a.schema;
    }
    if a.bins.is_some() {
        cfg.bins = a.bins;
    }
    if a.public_columns.is_some() {
        cfg.public_columns = a.public_columns;
        cfg.public_fraction = None;
    }
    if a.public_fraction.is_some() {
        cfg.public_fraction = a.public_fraction;
        cfg.public_columns = None;
    }
    if let Some(v) = a.method {
        cfg.method = v;
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if a.conditional {
        cfg.conditional = true;
    }
    if let Some(v) = a.output_dir {
        cfg.output_dir = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunFile<'a> {
    config: &'a RunConfig,
    epsilon: f64,
    delta: f64,
    report: &'a RunReport,
}

#[derive(Serialize)]
struct FailureFile<'a> {
    config: &'a RunConfig,
    error: String,
    ledger: Option<&'a Ledger>,
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = merge_run_config(a)?;
    let data = load_dataset(&cfg.dataset, cfg.schema.as_deref())?;
    let schema = match (&cfg.public_columns, cfg.public_fraction) {
        (Some(cols), _) => data.schema().with_public_columns(cols)?,
        (None, Some(p)) => data.schema().with_public_fraction(p)?,
        (None, None) => unreachable!("validated"),
    };
    let data = data.with_schema(schema)?;
    let bins_path = cfg.bins.clone().or_else(|| {
        let p = cfg.dataset.with_file_name("bins.json");
        p.exists().then_some(p)
    });
    let bins = bins_path.as_deref().map(BinMap::read_json).transpose()?;

    let budget = PrivacyBudget::from_dp(cfg.epsilon, cfg.delta)?;
    let mut engine = EngineConfig::new(budget, cfg.seed);
    engine.rounds = cfg.rounds;
    engine.pgm = cfg.pgm;
    engine.gem = cfg.gem;
    engine.conditional = cfg.conditional;
    let workload = method_workload(cfg.method, &data, cfg.k, cfg.conditional)?;

    fs::create_dir_all(&cfg.output_dir)?;
    let out = match run_method(cfg.method, &data, &workload, &engine) {
        Ok(out) => out,
        Err(e) => {
            let ledger = match &e {
                Error::BudgetAborted { ledger, .. } => Some(ledger),
                _ => None,
            };
            let file = FailureFile { config: &cfg, error: e.to_string(), ledger };
            fs::write(cfg.output_dir.join("run_report.json"), serde_json::to_string_pretty(&file)?)?;
            return Err(e);
        }
    };
    let errors: ErrorReport = workload_error(&data, &out.data, cfg.k)?;
    write_csv(&cfg.output_dir.join("synthetic.csv"), &out.data, bins.as_ref())?;
    let spent = PrivacyBudget::from_rho(out.report.rho_spent, cfg.delta);
    let file = RunFile { config: &cfg, epsilon: spent.epsilon, delta: spent.delta, report: &out.report };
    fs::write(cfg.output_dir.join("run_report.json"), serde_json::to_string_pretty(&file)?)?;
    fs::write(cfg.output_dir.join("error_report.json"), serde_json::to_string_pretty(&errors)?)?;
    println!(
        "method={} total_error={:.6} public_error={:.6} private_error={:.6} rho_spent={:.6e}",
        cfg.method, errors.total_error, errors.public_error, errors.private_error, out.report.rho_spent
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load(&a.config)?;
    if let Ok(w) = std::env::var("VPAM_WORKERS") {
        cfg.grid.workers = w.parse().map_err(|_| Error::Config(format!("VPAM_WORKERS='{w}' is not a count")))?;
    }
    cfg.grid.validate()?;
    AxisSpec::parse(&cfg.plot_x, "total_error")?;
    let data = load_dataset(&cfg.data, cfg.schema.as_deref())?;
    fs::create_dir_all(&cfg.output_dir)?;
    let results_path = cfg.output_dir.join("results.csv");
    let done = if a.resume && results_path.exists() {
        ResultsTable::read_csv(&results_path)?
    } else {
        ResultsTable::default()
    };
    let skipped = done.rows.len();
    // rewrite what is kept, then append rows as cells finish
    done.write_csv(&results_path)?;
    let file = OpenOptions::new().append(true).open(&results_path)?;
    let writer = Mutex::new(csv::WriterBuilder::new().has_headers(done.rows.is_empty()).from_writer(file));
    let ran = Mutex::new(0usize);
    let table = run_grid_resume(&cfg.grid, &data, &done, |row: &ResultRow| {
        let mut w = writer.lock().expect("writer lock");
        // a failed append only loses resumability, the final rewrite below still runs
        let _ = w.serialize(row).and_then(|_| w.flush().map_err(csv::Error::from));
        *ran.lock().expect("counter lock") += 1;
        eprintln!(
            "{} eps={} p={} seed={} status={} total_error={:.6}",
            row.method, row.epsilon, row.public_fraction, row.seed, row.status, row.total_error
        );
    })?;
    drop(writer);
    table.write_csv(&results_path)?;
    write_outputs(&table, &cfg.output_dir, &cfg.plot_x)?;
    println!("cells_run={} cells_skipped={skipped} rows={}", ran.into_inner().expect("counter lock"), table.rows.len());
    Ok(())
}

fn write_outputs(table: &ResultsTable, dir: &Path, x: &str) -> Result<()> {
    table.write_summary_csv(&dir.join("summary.csv"))?;
    let plots = dir.join("plots");
    for y in ["total_error", "public_error", "private_error"] {
        emit_plot_data(table, AxisSpec::parse(x, y)?, &plots)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let table = ResultsTable::read_csv(&a.results)?;
    let axis = AxisSpec::parse(&a.x, &a.y)?;
    fs::create_dir_all(&a.out_dir)?;
    table.write_summary_csv(&a.out_dir.join("summary.csv"))?;
    let paths = emit_plot_data(&table, axis, &a.out_dir.join("plots"))?;
    for agg in table.aggregates() {
        println!(
            "{}\teps={}\tp={}\tok={}\tfailed={}\ttotal={:.6}±{:.6}\tpublic={:.6}\tprivate={:.6}",
            agg.method,
            agg.epsilon,
            agg.public_fraction,
            agg.completed,
            agg.failed,
            agg.total_error.mean,
            agg.total_error.stdev,
            agg.public_error.mean,
            agg.private_error.mean
        );
    }
    println!("wrote {} series", paths.len());
    Ok(())
}
