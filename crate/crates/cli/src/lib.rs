//! Command-line surface for the sculpt pipeline: configuration parsing,
//! command dispatch, and artifact export.
//!
//! A run is configured by a single JSON document (see [`config::RunConfig`])
//! optionally combined with command-line overrides; flags take precedence
//! over file values, which take precedence over the documented defaults.
//! Every successful run writes exactly four artifacts into its output
//! directory — `manifest.json`, `losses.csv`, `grid.png`, `latent.json` —
//! and the manifest records the sha256 of each sibling file.
//!
//! Exit codes: `0` success, `2` configuration error, `3` pipeline error.
//! Failures print a single-line machine-readable JSON record to stderr.

pub mod config;
pub mod grid;
pub mod runner;

use serde_json::json;

/// Everything that can go wrong, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Static configuration problems: unreadable or malformed config,
    /// unknown keys, constraint violations, missing files. Exit code 2.
    Config {
        /// The offending field, when one can be named.
        field: Option<String>,
        message: String,
    },
    /// Failures while executing a validated run. Exit code 3.
    Pipeline {
        /// The failing loss term, when one can be named.
        term: Option<String>,
        message: String,
    },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn config_general(message: impl Into<String>) -> Self {
        CliError::Config {
            field: None,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Pipeline { .. } => 3,
        }
    }

    /// The machine-readable error record printed to stderr on failure.
    pub fn record(&self) -> serde_json::Value {
        match self {
            CliError::Config { field, message } => json!({
                "error": "config",
                "field": field,
                "message": message,
            }),
            CliError::Pipeline { term, message } => json!({
                "error": "pipeline",
                "term": term,
                "message": message,
            }),
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config { message, .. } | CliError::Pipeline { message, .. } => message,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config {
                field: Some(field),
                message,
            } => write!(f, "configuration error ({field}): {message}"),
            CliError::Config { field: None, message } => {
                write!(f, "configuration error: {message}")
            }
            CliError::Pipeline {
                term: Some(term),
                message,
            } => write!(f, "pipeline error ({term}): {message}"),
            CliError::Pipeline { term: None, message } => write!(f, "pipeline error: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Pipeline-phase wrapper: core errors after validation are execution
/// failures, with the failing loss term surfaced when the error names one.
pub fn pipeline_error(err: sculpt_core::Error) -> CliError {
    let term = match &err {
        sculpt_core::Error::NonFiniteLoss { term, .. } => Some(term.clone()),
        sculpt_core::Error::NonFinite(what) => Some((*what).to_string()),
        _ => None,
    };
    CliError::Pipeline {
        term,
        message: err.to_string(),
    }
}

/// Parse-phase wrapper: core errors during validation are configuration
/// errors.
pub fn config_error(err: sculpt_core::Error) -> CliError {
    let field = match &err {
        sculpt_core::Error::SpecViolation { field, .. } => Some(field.clone()),
        sculpt_core::Error::UnknownPrompt(_) => Some("prompt".to_string()),
        _ => None,
    };
    CliError::Config {
        field,
        message: err.to_string(),
    }
}
