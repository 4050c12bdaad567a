use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or schema-invalid input; exit status 2.
    #[error("config error: {0}")]
    Config(String),

    /// The experiment itself failed; exit status 1.
    #[error("experiment failed: {0}")]
    Experiment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Experiment(_) => 1,
        }
    }
}

impl From<grok_core::Error> for CliError {
    fn from(e: grok_core::Error) -> Self {
        Self::Experiment(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Experiment(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Experiment(format!("csv: {e}"))
    }
}
