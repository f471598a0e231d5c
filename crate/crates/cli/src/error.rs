use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },

    #[error(transparent)]
    Core(#[from] pkinns::Error),
}

impl CliError {
    /// 2 configuration, 3 data, 4 divergence, 5 I/O.
    pub fn exit_code(&self) -> u8 {
        use pkinns::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 5,
            CliError::Stage { source, .. } => source.exit_code(),
            CliError::Core(e) => match e {
                E::InvalidParameter { .. } | E::InvalidArgument(_) | E::Unsupported(_) | E::InvalidSpec(_) => 2,
                E::Diverged { .. } => 4,
                E::Io { .. } => 5,
                E::InvalidGrid(_)
                | E::Shape(_)
                | E::Graph(_)
                | E::IllConditioned(_)
                | E::InsufficientData(_)
                | E::Parse { .. } => 3,
            },
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ CliError::Stage { .. } => already,
            other => CliError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
