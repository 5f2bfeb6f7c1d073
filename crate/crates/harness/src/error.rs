use thiserror::Error;

use stepeql::EqlError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown preset {name:?} (known: {known})")]
    UnknownPreset { name: String, known: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<HarnessError>,
    },

    #[error(transparent)]
    Core(#[from] EqlError),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config syntax: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("config output: {0}")]
    TomlWrite(#[from] toml::ser::Error),

    #[error("fit cache: {0}")]
    Cache(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ HarnessError::Stage { .. } => e,
            e => HarnessError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Whether this is a usage problem rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        match self {
            HarnessError::UnknownPreset { .. } | HarnessError::Config(_) | HarnessError::TomlParse(_) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<HarnessError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}
