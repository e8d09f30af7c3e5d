//! Engine configuration: every module's tunables in one validated tree.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::coordinator::CoordinatorConfig;
use crate::decision::DecisionConfig;
use crate::inquiry::InquiryConfig;
use crate::memory::MemoryConfig;
use crate::triggers::TriggersConfig;
use crate::vitals::VitalsConfig;

/// A configuration problem, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub vitals: VitalsConfig,
    pub triggers: TriggersConfig,
    pub inquiry: InquiryConfig,
    pub decision: DecisionConfig,
    pub coordinator: CoordinatorConfig,
    pub memory: MemoryConfig,
    pub adapter: AdapterConfig,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.vitals.validate()?;
        self.triggers.validate(&self.vitals)?;
        self.inquiry.validate()?;
        self.decision.validate()?;
        self.coordinator.validate()?;
        self.memory.validate()?;
        self.adapter.validate()?;
        Ok(())
    }
}
