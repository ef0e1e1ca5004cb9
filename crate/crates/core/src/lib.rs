//! Diversity-interaction models for biodiversity experiments: designs,
//! model matrices, profile-likelihood estimation of the interaction shape
//! parameter theta, model selection procedures and simulation studies.

pub mod cli;
pub mod design;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod profile;
pub mod rng;
pub mod select;
pub mod simulate;
pub mod stats;

pub use design::{Community, Design};
pub use error::{Error, Result};
pub use fit::FitResult;
pub use model::{Family, Grouping, InteractionSpec};
pub use profile::{EstimateOptions, ThetaEstimate};
