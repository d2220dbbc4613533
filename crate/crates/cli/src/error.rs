use std::fmt;

/// Failure of a command, mapped to the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or unusable input files. Exit status 2.
    Config(String),
    /// A solver or detection run failed, or validation criteria failed. Exit status 3.
    Numerical(String),
    /// Output could not be written. Exit status 1.
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Output(_) => 1,
        }
    }

    pub fn config(e: impl fmt::Display) -> Self {
        Self::Config(e.to_string())
    }

    /// Classifies an error raised while computing.
    pub fn run(e: kld_core::Error) -> Self {
        match e {
            kld_core::Error::Io(_) => Self::Output(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
