//! Schemas, discrete datasets, marginal queries and workloads.

pub mod dataset;
pub mod discretize;
pub mod marginal;
pub mod schema;
pub mod workload;

pub use dataset::{Clique, ColumnSource, DatasetView, DiscreteDataset, Joined};
pub use discretize::{discretize, BinMap, ColumnEncoding, DiscretizeOptions, RawTable};
pub use marginal::{compute_marginal, l1, MarginalVector, Scale};
pub use schema::{Column, Schema, Visibility};
pub use workload::{all_marginals_up_to, build_workload, Source, Workload, WorkloadEntry};
