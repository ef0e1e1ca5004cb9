use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("proportions sum to {sum}, expected 1 (row {row})")]
    SumNotOne { row: usize, sum: f64 },

    #[error("negative proportion {value} for species {species} (row {row})")]
    NegativeProportion { row: usize, species: usize, value: f64 },

    #[error("community has no species")]
    EmptyCommunity,

    #[error("community has {found} species, design expects {expected}")]
    SpeciesCountMismatch { expected: usize, found: usize },

    #[error("design has no communities")]
    EmptyDesign,

    #[error("richness level {richness} exceeds species count {species}")]
    RichnessExceedsSpecies { richness: usize, species: usize },

    #[error("requested {requested} communities of richness {richness}, only {available} subsets exist")]
    CountExceedsSubsets {
        richness: usize,
        requested: usize,
        available: u128,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("data has no response column `y`")]
    MissingResponse,

    #[error("theta must be at least {min}, got {theta}")]
    NonPositiveTheta { theta: f64, min: f64 },

    #[error("scaling factor needs at least 2 species, got {0}")]
    SpeciesCountTooSmall(usize),

    #[error("functional group model requires a species grouping")]
    MissingGrouping,

    #[error("grouping covers {found} species, design has {expected}")]
    GroupingMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("response contains a non-finite value at row {0}")]
    NonFiniteResponse(usize),

    #[error("perfect fit (rss = 0): information criteria are undefined")]
    PerfectFit,

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("full model has no residual degrees of freedom")]
    ZeroResidualDf,

    #[error("model family {0} has no interaction terms, theta cannot be estimated")]
    NoInteractionTerms(&'static str),

    #[error("invalid theta bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),

    #[error("design has no replicated communities, lack-of-fit test needs pure error")]
    NoReplication,

    #[error("candidate list is empty")]
    NoCandidates,

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
