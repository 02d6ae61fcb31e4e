use serde::{Deserialize, Serialize};

use crate::ApiError;

pub const DEFAULT_TOKEN_ENV: &str = "LHS_API_TOKEN";

/// Service settings. The bearer token itself never appears here, only the
/// name of the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub bind: String,
    pub token_env: String,
    pub default_page_size: usize,
    pub max_page_size: usize,
    /// Largest accepted request body; wrist recordings run to several MB.
    pub max_body_bytes: usize,
    pub read_only: bool,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            bind: "127.0.0.1:8080".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            default_page_size: 100,
            max_page_size: 1000,
            max_body_bytes: 64 << 20,
            read_only: false,
        }
    }
}

impl ApiConfig {
    pub fn validate(&self) -> Result<(), ApiError> {
        let bad = |m: &str| Err(ApiError::Config(m.to_string()));
        if self.default_page_size == 0 || self.max_page_size == 0 {
            return bad("page sizes must be positive");
        }
        if self.default_page_size > self.max_page_size {
            return bad("default_page_size exceeds max_page_size");
        }
        if self.token_env.is_empty() {
            return bad("token_env must name an environment variable");
        }
        Ok(())
    }

    /// Reads the token from the configured variable. A writable service
    /// without a token refuses to start.
    pub fn resolve_token(&self) -> Result<Option<String>, ApiError> {
        self.resolve_token_with(|k| std::env::var(k).ok())
    }

    pub fn resolve_token_with(&self, lookup: impl Fn(&str) -> Option<String>) -> Result<Option<String>, ApiError> {
        self.validate()?;
        match lookup(&self.token_env).filter(|t| !t.trim().is_empty()) {
            Some(t) => Ok(Some(t)),
            None if self.read_only => Ok(None),
            None => Err(ApiError::MissingToken(self.token_env.clone())),
        }
    }
}
