use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scene spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Core(#[from] lodtherm::Error),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
}

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 1,
    Data = 2,
    Algorithm = 3,
}

impl PipelineError {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PipelineError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Name of the failing stage, when known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn class(&self) -> ExitClass {
        use lodtherm::Error as E;
        match self {
            PipelineError::Io { .. } | PipelineError::Format { .. } | PipelineError::Spec(_) => ExitClass::Data,
            PipelineError::Config(_) => ExitClass::Usage,
            PipelineError::Core(e) => match e {
                E::InvalidParameter(_) => ExitClass::Usage,
                E::NoCorrespondence | E::NoPlane { .. } | E::Divergence { .. } => ExitClass::Algorithm,
                _ => ExitClass::Data,
            },
            PipelineError::Stage { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class() as i32
    }
}

/// Tags errors of a stage with its name.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<PipelineError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}
