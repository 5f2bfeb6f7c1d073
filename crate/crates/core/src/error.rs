use thiserror::Error;

/// Errors produced anywhere in the simulation and learning pipeline.
#[derive(Debug, Error)]
pub enum EqlError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("realization {index}: {source}")]
    Realization {
        index: usize,
        #[source]
        source: Box<EqlError>,
    },

    #[error("save times do not match across realizations")]
    MismatchedTimes,

    #[error("rank deficient system: dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("constraint system is infeasible or degenerate: {0}")]
    InfeasibleConstraints(String),

    #[error("pruning removed every row of the {block} block")]
    EmptyBlock { block: String },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<EqlError>,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl EqlError {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        EqlError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, EqlError>;
