//! Graph estimation for multi-subject replicate data with serial dependence
//! and unmeasured, piecewise-constant confounding.

pub mod cli;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod family;
pub mod fit;
pub mod fused;
pub mod gaussian;
pub mod glm;
pub mod graph;
pub mod io;
pub mod lasso;
pub mod model;
pub mod simgen;
pub mod tuning;

pub use error::{Error, Result};
pub use model::{Family, NodeFit, PenaltyConfig, ReplicateDataset};
