use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use discval::ErrorClass;

#[derive(Debug, Error)]
pub enum CliError {
    /// A required argument is missing from both flags and config file.
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] discval::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.class() == ErrorClass::Numeric => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> String {
        match self {
            CliError::Usage(_) => "Usage".into(),
            CliError::Config(_) => "Config".into(),
            CliError::Read { .. } => "Read".into(),
            CliError::Write { .. } => "Write".into(),
            CliError::Core(e) => e.kind(),
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: String,
            class: &'a str,
            exit_code: i32,
            message: String,
        }
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: Body<'a>,
        }
        let code = self.exit_code();
        serde_json::to_string(&Envelope {
            error: Body {
                kind: self.kind(),
                class: if code == 1 { "numeric" } else { "input" },
                exit_code: code,
                message: self.to_string(),
            },
        })
        .expect("error serializes")
    }
}

/// Lifts any core error into [`CliError`].
pub fn core<E: Into<discval::Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use discval::stats::StatError;

    #[test]
    fn numeric_errors_exit_one() {
        let e = core(discval::falsify::FalsifyError::Stat(StatError::AllZeroDifferences));
        assert_eq!(e.exit_code(), 1);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["kind"], "AllZeroDifferences");
        assert_eq!(v["error"]["class"], "numeric");
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }
}
