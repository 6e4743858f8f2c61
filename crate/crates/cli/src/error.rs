use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid command line: {0}")]
    Usage(String),

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] tcpconf::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        CliError::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Parse { .. } => "parse",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "core",
        }
    }

    /// Process exit status: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { field, .. } => body["field"] = json!(field),
            CliError::MissingArtifact { path, .. } | CliError::Io { path, .. } => {
                body["path"] = json!(path.display().to_string())
            }
            _ => {}
        }
        json!({ "error": body })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_name_the_field() {
        let e = CliError::config("dataset.dir", "required");
        let v = e.to_json();
        assert_eq!(v["error"]["kind"], "config");
        assert_eq!(v["error"]["field"], "dataset.dir");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn core_errors_pass_through() {
        let e: CliError = tcpconf::Error::NonFinite {
            context: "x".into(),
        }
        .into();
        assert_eq!(e.kind(), "core");
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_json()["error"]["message"]
            .as_str()
            .unwrap()
            .contains("non-finite"));
    }
}
