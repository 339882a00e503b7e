//! File-based orchestration of a full calibration study.
//!
//! A run lives in one directory: a manifest with an immutable config
//! snapshot and an append-only audit trail, a content-addressed cache of
//! simulator runs, and the artifacts each command produces. The command
//! sequence is synthesize-target, one wave per configured entry, emulate,
//! calibrate, optionally reweight per discrepancy scenario, then report.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;
pub mod runs;

pub use commands::{
    cmd_calibrate, cmd_emulate, cmd_reweight, cmd_synthesize_target, cmd_wave, paths,
};
pub use config::PipelineConfig;
pub use manifest::{RunManifest, Workspace};
pub use report::cmd_report;
pub use runs::{RunStore, ScaledEmulator, SimOracle};

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
