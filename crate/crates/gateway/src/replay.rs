//! Rebuilding engine state from a log.

use std::path::Path;

use thiserror::Error;
use vitaldx_core::adapter::Adapter;
use vitaldx_core::canonical;
use vitaldx_core::config::EngineConfig;
use vitaldx_core::engine::Engine;

use crate::chain::{verify_chain, ChainError, Head, LogRecord};
use crate::store::{read_log, StoreError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Store(#[from] StoreError),
    /// A logged input was refused on replay: the log and the engine
    /// disagree about what happened.
    #[error("record {seq} was refused on replay: {code}: {message}")]
    Diverged { seq: u64, code: String, message: String },
}

/// Applies already-verified records, in order, to `engine`.
pub fn apply_records(engine: &mut Engine, records: &[LogRecord]) -> Result<(), ReplayError> {
    for record in records {
        let entry = record.entry()?;
        engine.apply(&entry.input, entry.at).map_err(|e| ReplayError::Diverged {
            seq: record.seq,
            code: e.code().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

/// Verifies the chain, then re-runs every record through a fresh engine
/// with the mock adapter.
pub fn replay(records: &[LogRecord], config: &EngineConfig) -> Result<Engine, ReplayError> {
    verify_chain(records)?;
    let mut engine = Engine::new(config.clone(), Adapter::mock());
    apply_records(&mut engine, records)?;
    Ok(engine)
}

pub struct Replayed {
    pub engine: Engine,
    pub head: Head,
}

pub fn replay_file(path: &Path, config: &EngineConfig) -> Result<Replayed, ReplayError> {
    let (records, head) = read_log(path)?;
    let engine = replay(&records, config)?;
    Ok(Replayed { engine, head })
}

/// Every report, one canonical line each, in report-id order. Two runs
/// agree on their reports exactly when these strings are equal.
pub fn render_reports(engine: &Engine) -> String {
    engine.reports().map(|r| canonical::to_canonical_string(r) + "\n").collect()
}
