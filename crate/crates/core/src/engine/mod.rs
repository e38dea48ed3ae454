//! Select-measure-generate engines and the configuration and run report
//! they share.

mod aim;
mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aim::{aim_run, aim_run_with, conditional_aim_run, conditional_aim_run_with, vjam_run, vjam_run_with};
pub use score::{score_private, score_public_horizontal, score_public_vertical};

use crate::dp::{Accountant, Ledger, PrivacyBudget};
use crate::error::{Error, Result};
use crate::gem::{gem_run_with, GemOptions};
use crate::mwem::{vpmw_run_with, DEFAULT_DOMAIN_CAP};
use crate::pgm::{EstimateOptions, DEFAULT_CONDITIONAL_CAP};
use crate::tabular::{build_workload, DiscreteDataset, Source, Workload};

/// Synthesis methods, by their command-line names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "aim")]
    Aim,
    #[serde(rename = "conditional-aim")]
    ConditionalAim,
    #[serde(rename = "vjam-pgm")]
    VjamPgm,
    #[serde(rename = "vpmw")]
    Vpmw,
    #[serde(rename = "gem-lite")]
    GemLite,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Aim, Method::ConditionalAim, Method::VjamPgm, Method::Vpmw, Method::GemLite];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Aim => "aim",
            Method::ConditionalAim => "conditional-aim",
            Method::VjamPgm => "vjam-pgm",
            Method::Vpmw => "vpmw",
            Method::GemLite => "gem-lite",
        }
    }

    /// Whether the method's training workload keeps only cliques that touch
    /// a private column.
    pub fn requires_private_workload(self, conditional: bool) -> bool {
        matches!(self, Method::ConditionalAim) || (self == Method::VjamPgm && conditional)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown method '{s}' (expected one of aim, conditional-aim, vjam-pgm, vpmw, gem-lite)"
            ))
        })
    }
}

/// Settings for the graphical-model engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgmOptions {
    /// Mirror-descent iterations after each new measurement.
    pub round_iterations: usize,
    /// Iterations of the last fit before generation.
    pub final_iterations: usize,
    /// Candidates whose addition would grow the model past this many
    /// parameters are not offered for selection.
    pub max_model_size: usize,
    pub conditional_cap: usize,
}

impl Default for PgmOptions {
    fn default() -> Self {
        Self {
            round_iterations: 50,
            final_iterations: 1000,
            max_model_size: 100_000,
            conditional_cap: DEFAULT_CONDITIONAL_CAP,
        }
    }
}

impl PgmOptions {
    pub(crate) fn estimate_options(&self, iterations: usize) -> EstimateOptions {
        EstimateOptions { iterations, ..EstimateOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub rounds: usize,
    pub budget: PrivacyBudget,
    pub select_fraction: f64,
    /// Share of the budget spent measuring 1-way marginals before the loop.
    pub init_fraction: f64,
    pub seed: u64,
    /// Generate private columns conditioned on the public ones.
    pub conditional: bool,
    #[serde(default)]
    pub pgm: PgmOptions,
    #[serde(default)]
    pub gem: GemOptions,
    #[serde(default = "default_domain_cap")]
    pub domain_cap: usize,
}

fn default_domain_cap() -> usize {
    DEFAULT_DOMAIN_CAP
}

impl EngineConfig {
    pub fn new(budget: PrivacyBudget, seed: u64) -> Self {
        Self {
            rounds: 100,
            budget,
            select_fraction: 0.5,
            init_fraction: 0.1,
            seed,
            conditional: false,
            pgm: PgmOptions::default(),
            gem: GemOptions::default(),
            domain_cap: DEFAULT_DOMAIN_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.init_fraction) {
            return Err(Error::Config(format!("init_fraction {} must lie in [0, 1)", self.init_fraction)));
        }
        if !(self.select_fraction > 0.0 && self.select_fraction < 1.0) {
            return Err(Error::Config(format!("select_fraction {} must lie in (0, 1)", self.select_fraction)));
        }
        if !(self.budget.rho > 0.0) {
            return Err(Error::Config("privacy budget must be positive".into()));
        }
        Ok(())
    }
}

/// What happened in one round of a select-measure loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clique: String,
    pub label: Source,
    pub score: f64,
    pub candidates: usize,
    pub sigma: f64,
    pub rho_select: f64,
    pub rho_measure: f64,
    /// L1 distance between the model and the new measurement after the
    /// update, divided by the row count.
    pub model_error: f64,
    /// Number of model parameters after the update.
    #[serde(default)]
    pub model_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub config: EngineConfig,
    pub rounds: Vec<RoundRecord>,
    pub ledger: Ledger,
    pub rho_spent: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub data: DiscreteDataset,
    pub report: RunReport,
}

/// Training workload of a method: all `k`-way cliques, restricted to those
/// touching a private column when the method generates conditionally.
pub fn method_workload(method: Method, data: &DiscreteDataset, k: usize, conditional: bool) -> Result<Workload> {
    let k = k.min(data.d());
    build_workload(data.schema(), k, method.requires_private_workload(conditional))
}

/// Runs `method` on a dataset whose schema marks the public columns.
pub fn run_method(
    method: Method,
    data: &DiscreteDataset,
    workload: &Workload,
    config: &EngineConfig,
) -> Result<RunOutput> {
    let mut accountant = Accountant::new(config.budget.rho);
    run_method_with(method, data, workload, config, &mut accountant)
}

/// As [`run_method`], charging a caller-supplied accountant.
pub fn run_method_with(
    method: Method,
    data: &DiscreteDataset,
    workload: &Workload,
    config: &EngineConfig,
    accountant: &mut Accountant,
) -> Result<RunOutput> {
    let (public, private) = data.vertical_split();
    match method {
        Method::Aim => aim_run_with(data, workload, config, accountant),
        Method::ConditionalAim => conditional_aim_run_with(&public, &private, workload, config, accountant),
        Method::VjamPgm => vjam_run_with(&public, &private, workload, config, accountant),
        Method::Vpmw => vpmw_run_with(&public, &private, workload, config, accountant),
        Method::GemLite => gem_run_with(&public, &private, workload, config, accountant),
    }
}
