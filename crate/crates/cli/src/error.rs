use std::fmt;

use egg_core::EggError;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Check,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 1,
            Kind::Data => 2,
            Kind::Check => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self { kind: Kind::Check, message: message.into() }
    }

    pub fn io(what: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::data(format!("{}: {e}", what.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Engine errors raised once a run is under way count as data errors:
/// the configuration already validated, so the input is what failed.
impl From<EggError> for CliError {
    fn from(e: EggError) -> Self {
        CliError::data(e.to_string())
    }
}
