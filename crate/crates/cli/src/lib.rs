//! Command-line pipeline driver: one subcommand per stage plus `reproduce`,
//! which runs every stage from a config file and skips up-to-date work.

pub mod commands;
pub mod pipeline;
pub mod provenance;

use std::fmt;

/// Exit status for configuration and usage errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Split,
    Augment,
    Describe,
    Train,
    Localize,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Split,
        Stage::Augment,
        Stage::Describe,
        Stage::Train,
        Stage::Localize,
        Stage::Eval,
    ];

    pub fn index(self) -> i32 {
        Stage::ALL.iter().position(|&s| s == self).unwrap_or(0) as i32
    }

    /// `10 + index` in pipeline order.
    pub fn exit_code(self) -> i32 {
        10 + self.index()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Augment => "augment",
            Stage::Describe => "describe",
            Stage::Train => "train",
            Stage::Localize => "localize",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source:#}")]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

impl StageError {
    pub fn new(stage: Stage, source: anyhow::Error) -> Self {
        Self { stage, source }
    }
}
