//! Privacy mechanisms, zCDP accounting and budget scheduling.

mod accountant;
mod conversion;
mod mechanisms;
mod rng;

pub use accountant::{schedule_rounds, Accountant, AuditedSource, Charge, ChargeKind, Ledger, RoundAllocation};
pub use conversion::{dp_epsilon, dp_to_zcdp, log_delta_objective, optimal_alpha, zcdp_to_dp, PrivacyBudget};
pub use mechanisms::{
    exp_select, exponential_epsilon, exponential_probabilities, gaussian_measure, gaussian_rho, gaussian_sigma,
    Measurement,
};
pub use rng::{Purpose, RngStreams};
