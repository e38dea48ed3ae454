use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{ColumnSource, Schema};

/// Relative slack allowed when the last charge lands on the budget.
const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeKind {
    Select,
    Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub kind: ChargeKind,
    /// `None` for initialization measurements.
    pub round: Option<usize>,
    pub clique: Option<String>,
    pub public: bool,
    pub rho: f64,
}

/// Append-only record of every budget charge made during a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ledger {
    pub budget_rho: f64,
    pub charges: Vec<Charge>,
}

impl Ledger {
    pub fn total(&self) -> f64 {
        self.charges.iter().map(|c| c.rho).sum()
    }

    pub fn count(&self, kind: ChargeKind) -> usize {
        self.charges.iter().filter(|c| c.kind == kind).count()
    }

    pub fn rho_of(&self, kind: ChargeKind) -> f64 {
        self.charges.iter().filter(|c| c.kind == kind).map(|c| c.rho).sum()
    }
}

/// Budget per round of the select-measure loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundAllocation {
    pub rho_select: f64,
    pub rho_measure: f64,
}

/// Splits `rho` uniformly over `rounds`, each divided `select_fraction` to
/// selection and the rest to measurement. The last round takes whatever
/// rounding left over, so the charges add back up to `rho`.
pub fn schedule_rounds(rho: f64, rounds: usize, select_fraction: f64) -> Vec<RoundAllocation> {
    assert!(rounds >= 1, "at least one round required");
    assert!((0.0..=1.0).contains(&select_fraction));
    let per = rho / rounds as f64;
    let mut out = Vec::with_capacity(rounds);
    let mut spent = 0.0;
    for t in 0..rounds {
        let share = if t + 1 == rounds { rho - spent } else { per };
        let rho_select = share * select_fraction;
        let rho_measure = share - rho_select;
        spent += rho_select;
        spent += rho_measure;
        out.push(RoundAllocation { rho_select, rho_measure });
    }
    out
}

/// Single-writer zCDP accountant.
///
/// Every charge is checked against the remaining budget before the caller
/// may touch private data. Once a charge is refused, or the run is closed,
/// the shared tripwire is raised; [`AuditedSource`] uses it to detect reads
/// that happen afterwards.
#[derive(Debug)]
pub struct Accountant {
    ledger: Ledger,
    spent: f64,
    tripwire: Arc<AtomicBool>,
}

impl Accountant {
    pub fn new(rho: f64) -> Self {
        Self {
            ledger: Ledger { budget_rho: rho, charges: Vec::new() },
            spent: 0.0,
            tripwire: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn budget(&self) -> f64 {
        self.ledger.budget_rho
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        (self.ledger.budget_rho - self.spent).max(0.0)
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn tripwire(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.tripwire)
    }

    pub fn is_closed(&self) -> bool {
        self.tripwire.load(Ordering::SeqCst)
    }

    /// Records a charge, refusing it if it would overrun the budget.
    pub fn charge(
        &mut self,
        kind: ChargeKind,
        round: Option<usize>,
        clique: Option<String>,
        public: bool,
        rho: f64,
    ) -> Result<()> {
        if self.is_closed() {
            return Err(Error::BudgetExceeded { requested: rho, remaining: 0.0 });
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Config(format!("invalid charge {rho}")));
        }
        let budget = self.ledger.budget_rho;
        if self.spent + rho > budget + SLACK * budget.max(f64::MIN_POSITIVE) {
            self.tripwire.store(true, Ordering::SeqCst);
            return Err(Error::BudgetExceeded { requested: rho, remaining: self.remaining() });
        }
        self.spent += rho;
        self.ledger.charges.push(Charge { kind, round, clique, public, rho });
        Ok(())
    }

    /// Marks the end of all private-data access for this run.
    pub fn close(&mut self) {
        self.tripwire.store(true, Ordering::SeqCst);
    }

    /// Wraps a failure together with the ledger accumulated so far.
    pub fn abort(&mut self, err: Error) -> Error {
        self.close();
        match err {
            Error::BudgetExceeded { .. } => Error::BudgetAborted { source: Box::new(err), ledger: self.ledger.clone() },
            other => other,
        }
    }
}

/// Column source that counts reads made after the accountant's tripwire.
pub struct AuditedSource<'a, S: ColumnSource + ?Sized> {
    inner: &'a S,
    tripwire: Arc<AtomicBool>,
    reads: AtomicUsize,
    late_reads: AtomicUsize,
}

impl<'a, S: ColumnSource + ?Sized> AuditedSource<'a, S> {
    pub fn new(inner: &'a S, tripwire: Arc<AtomicBool>) -> Self {
        Self { inner, tripwire, reads: AtomicUsize::new(0), late_reads: AtomicUsize::new(0) }
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn late_reads(&self) -> usize {
        self.late_reads.load(Ordering::SeqCst)
    }
}

impl<S: ColumnSource + ?Sized> ColumnSource for AuditedSource<'_, S> {
    fn schema(&self) -> &Schema {
        self.inner.schema()
    }

    fn n(&self) -> usize {
        self.inner.n()
    }

    fn column(&self, idx: usize) -> Option<&[u32]> {
        let col = self.inner.column(idx);
        if col.is_some() {
            self.reads.fetch_add(1, Ordering::SeqCst);
            if self.tripwire.load(Ordering::SeqCst) {
                self.late_reads.fetch_add(1, Ordering::SeqCst);
            }
        }
        col
    }
}
