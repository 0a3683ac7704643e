//! Command-line harness: training, evaluation, learning-rate sweeps and
//! prior inspection, each recorded in a replayable run manifest.

pub mod commands;
pub mod kv;
pub mod manifest;
pub mod output;

use pop_core::PopError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "POP_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ARTIFACT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(err: &PopError) -> i32 {
    match err {
        PopError::Config(_) | PopError::Usage(_) => EXIT_CONFIG,
        PopError::Artifact(_) | PopError::Io(_) | PopError::Json(_) => EXIT_ARTIFACT,
        PopError::Numerical(_) | PopError::Shape { .. } => EXIT_NUMERICAL,
    }
}
