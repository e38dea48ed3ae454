//! Graphical-model representation of synthetic data: junction-tree
//! structure, calibration, estimation from noisy marginals and sampling.

mod estimate;
mod model;
mod sample;
mod structure;

pub use estimate::{estimate, EstimateOptions, EstimateTrace};
pub use model::GraphicalModel;
pub use sample::{conditional_sample, sample, DEFAULT_CONDITIONAL_CAP};
pub use structure::{build_junction_tree, clique_size, JunctionTree, DEFAULT_PARAM_CAP};
