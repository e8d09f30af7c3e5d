//! The engine plus its durable log: every accepted input is appended to the
//! chain before the caller hears about it.

use std::collections::VecDeque;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;
use vitaldx_core::adapter::Adapter;
use vitaldx_core::config::EngineConfig;
use vitaldx_core::engine::{Applied, Engine, EngineError, Input};
use vitaldx_core::ids::{EventId, PatientId};
use vitaldx_core::memory::EventKind;
use vitaldx_core::simulator::{Pipeline, Refusal};
use vitaldx_core::time::Timestamp;

use crate::chain::{Entry, Head};
use crate::config::ServiceConfig;
use crate::replay::{apply_records, ReplayError};
use crate::store::{LogStore, Outbox, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedEvent {
    pub event_id: EventId,
    pub patient_id: PatientId,
    pub kind: EventKind,
}

/// One accepted input as announced on the server-pushed feed. Carries
/// identifiers and kinds only, never payloads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedItem {
    pub seq: u64,
    pub kind: String,
    pub patient_id: Option<PatientId>,
    pub at: Timestamp,
    pub events: Vec<FeedEvent>,
}

impl FeedItem {
    /// Whether this item concerns `patient` at all.
    pub fn touches(&self, patient: &PatientId) -> bool {
        self.patient_id.as_ref() == Some(patient) || self.events.iter().any(|e| &e.patient_id == patient)
    }

    /// The item narrowed to one patient's events.
    pub fn only_for(&self, patient: &PatientId) -> FeedItem {
        FeedItem {
            events: self.events.iter().filter(|e| &e.patient_id == patient).cloned().collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Refused(#[from] EngineError),
    /// The input was applied but could not be made durable. The service
    /// stops accepting writes; a restart replays the log without it.
    #[error("log append failed: {0}")]
    Store(StoreError),
    #[error("the log is unavailable after an earlier write failure")]
    Unavailable,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Refused(e) => e.code(),
            ServiceError::Store(_) => "LogWriteFailed",
            ServiceError::Unavailable => "LogUnavailable",
        }
    }
}

#[derive(Debug, Error)]
pub enum OpenError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

pub struct Service {
    engine: Engine,
    log: Option<LogStore>,
    memory_head: Head,
    outbox: Option<Outbox>,
    feed: broadcast::Sender<FeedItem>,
    /// The newest feed items, kept so a reconnecting reader can resume.
    backlog: VecDeque<FeedItem>,
    feed_capacity: usize,
    poisoned: bool,
}

impl Service {
    /// A service without files: the chain is kept in memory only.
    pub fn in_memory(config: EngineConfig, adapter: Adapter) -> Self {
        let (feed, _) = broadcast::channel(1024);
        Self {
            engine: Engine::new(config, adapter),
            log: None,
            memory_head: Head::default(),
            outbox: None,
            feed,
            backlog: VecDeque::new(),
            feed_capacity: 1024,
            poisoned: false,
        }
    }

    /// Opens the configured log and outbox and rebuilds state by replaying
    /// the log.
    pub fn open(config: &ServiceConfig) -> Result<Self, OpenError> {
        let engine_config = config.engine();
        let adapter = Adapter::from_config(&engine_config.adapter);
        let mut service =
            Self::on_log(engine_config, adapter, &config.storage.log_path, config.server.feed_capacity)?;
        service.outbox = Some(Outbox::open(&config.storage.outbox_path)?);
        Ok(service)
    }

    /// A service writing to the log at `path`, with state rebuilt from
    /// whatever the log already holds.
    pub fn on_log(
        config: EngineConfig,
        adapter: Adapter,
        path: &Path,
        feed_capacity: usize,
    ) -> Result<Self, OpenError> {
        let mut engine = Engine::new(config, adapter);
        let (log, records) = LogStore::open(path)?;
        apply_records(&mut engine, &records)?;
        let (feed, _) = broadcast::channel(feed_capacity);
        tracing::info!(records = records.len(), head = %log.head().digest, "log replayed");
        Ok(Self {
            engine,
            log: Some(log),
            memory_head: Head::default(),
            outbox: None,
            feed,
            backlog: VecDeque::new(),
            feed_capacity,
            poisoned: false,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn head(&self) -> &Head {
        self.log.as_ref().map(LogStore::head).unwrap_or(&self.memory_head)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<FeedItem> {
        self.feed.subscribe()
    }

    /// Items after `seq` still held in the backlog, plus a receiver for
    /// everything that follows them. Items from before this process
    /// started are not replayed.
    pub fn resume(&self, seq: u64) -> (Vec<FeedItem>, broadcast::Receiver<FeedItem>) {
        let missed = self.backlog.iter().filter(|i| i.seq > seq).cloned().collect();
        (missed, self.feed.subscribe())
    }

    pub fn submit(&mut self, input: Input, at: Timestamp) -> Result<Applied, ServiceError> {
        if self.poisoned {
            return Err(ServiceError::Unavailable);
        }
        let applied = self.engine.apply(&input, at)?;
        let entry = Entry { at, input };
        let record = match &mut self.log {
            Some(log) => match log.append(&entry) {
                Ok(record) => record,
                Err(e) => {
                    tracing::error!(error = %e, "log append failed; refusing further writes");
                    self.poisoned = true;
                    return Err(ServiceError::Store(e));
                }
            },
            None => self.memory_head.seal(&entry),
        };
        if let Some(outbox) = &mut self.outbox {
            if let Err(e) = outbox.write(&applied.descriptors) {
                // descriptors can be regenerated by replay
                tracing::warn!(error = %e, "outbox write failed");
            }
        }
        let item = FeedItem {
            seq: record.seq,
            kind: record.kind,
            patient_id: record.patient_id,
            at: applied.now,
            events: applied
                .events
                .iter()
                .map(|e| FeedEvent {
                    event_id: e.event_id.clone(),
                    patient_id: e.patient_id.clone(),
                    kind: e.kind,
                })
                .collect(),
        };
        if self.backlog.len() == self.feed_capacity {
            self.backlog.pop_front();
        }
        self.backlog.push_back(item.clone());
        // nobody listening is fine
        let _ = self.feed.send(item);
        Ok(applied)
    }
}

impl Pipeline for Service {
    fn submit(&mut self, input: Input, at: Timestamp) -> Result<Applied, Refusal> {
        Service::submit(self, input, at).map_err(|e| match e {
            ServiceError::Refused(e) => Refusal::from(e),
            other => Refusal { code: other.code().to_string(), message: other.to_string(), fatal: true },
        })
    }

    fn engine(&self) -> &Engine {
        &self.engine
    }
}
