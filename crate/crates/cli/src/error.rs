use std::fmt;

/// Exit code 1: the operator can fix the input. Exit code 2: something
/// broke underneath.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn user(e: impl fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

pub fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

impl From<lhs_store::StoreError> for CliError {
    fn from(e: lhs_store::StoreError) -> Self {
        internal(e)
    }
}

impl From<lhs_pipeline::OrchestratorError> for CliError {
    fn from(e: lhs_pipeline::OrchestratorError) -> Self {
        internal(e)
    }
}

impl From<lhs_relay::KeyStoreError> for CliError {
    fn from(e: lhs_relay::KeyStoreError) -> Self {
        match e {
            lhs_relay::KeyStoreError::MissingEnv(var) => {
                CliError::User(format!("set {var} to the path of the key file"))
            }
            other => user(other),
        }
    }
}
