//! The service configuration file (TOML).
//!
//! Every engine module's section sits at the top level next to the
//! service's own `[server]`, `[storage]` and `[auth]` tables. Loading
//! reports the dotted path of the first bad field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vitaldx_core::adapter::AdapterConfig;
use vitaldx_core::config::{ConfigError, EngineConfig};
use vitaldx_core::coordinator::CoordinatorConfig;
use vitaldx_core::decision::DecisionConfig;
use vitaldx_core::inquiry::InquiryConfig;
use vitaldx_core::memory::MemoryConfig;
use vitaldx_core::triggers::TriggersConfig;
use vitaldx_core::vitals::VitalsConfig;

use crate::auth::{Role, TokenSpec};

/// Where request times come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Wall-clock time; the tick task runs on its interval.
    #[default]
    Wall,
    /// Time only moves when a request says so. Used for simulation and
    /// tests; write requests may carry an explicit `at`.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub tick_interval_seconds: f64,
    pub clock: ClockMode,
    /// Capacity of the server-pushed feed before slow readers lag.
    pub feed_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            tick_interval_seconds: 60.0,
            clock: ClockMode::Wall,
            feed_capacity: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub log_path: PathBuf,
    pub outbox_path: PathBuf,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self { log_path: "vitaldx-log.ndjson".into(), outbox_path: "vitaldx-outbox.ndjson".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub tokens: Vec<TokenSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub server: ServerConfig,
    pub storage: StorageConfig,
    pub auth: AuthConfig,
    pub vitals: VitalsConfig,
    pub triggers: TriggersConfig,
    pub inquiry: InquiryConfig,
    pub decision: DecisionConfig,
    pub coordinator: CoordinatorConfig,
    pub memory: MemoryConfig,
    pub adapter: AdapterConfig,
}

#[derive(Debug)]
pub enum LoadError {
    Io { path: PathBuf, source: std::io::Error },
    Syntax(String),
    Field { path: String, message: String },
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            LoadError::Syntax(m) => write!(f, "config syntax: {m}"),
            LoadError::Field { path, message } => write!(f, "config field {path}: {message}"),
        }
    }
}

impl std::error::Error for LoadError {}

impl From<ConfigError> for LoadError {
    fn from(e: ConfigError) -> Self {
        LoadError::Field { path: e.path, message: e.message }
    }
}

impl ServiceConfig {
    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            vitals: self.vitals.clone(),
            triggers: self.triggers.clone(),
            inquiry: self.inquiry.clone(),
            decision: self.decision.clone(),
            coordinator: self.coordinator.clone(),
            memory: self.memory.clone(),
            adapter: self.adapter.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.server.tick_interval_seconds > 0.0) {
            return Err(ConfigError::new("server.tick_interval_seconds", "must be positive"));
        }
        if self.server.feed_capacity == 0 {
            return Err(ConfigError::new("server.feed_capacity", "must be at least 1"));
        }
        for (i, t) in self.auth.tokens.iter().enumerate() {
            let path = format!("auth.tokens[{i}]");
            if t.token.trim().is_empty() {
                return Err(ConfigError::new(format!("{path}.token"), "must not be empty"));
            }
            if self.auth.tokens[..i].iter().any(|o| o.token == t.token) {
                return Err(ConfigError::new(format!("{path}.token"), "duplicate token"));
            }
            t.role.parse::<Role>().map_err(|m| ConfigError::new(format!("{path}.role"), m))?;
        }
        self.engine().validate()
    }

    pub fn parse(text: &str) -> Result<Self, LoadError> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| LoadError::Syntax(e.to_string()))?;
        let config: ServiceConfig = serde_path_to_error::deserialize(de).map_err(|e| LoadError::Field {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses and validates a config file. Relative storage paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.storage.log_path, &mut config.storage.outbox_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ServiceConfig::parse("").unwrap(), ServiceConfig::default());
    }

    #[test]
    fn nested_override() {
        let c = ServiceConfig::parse(
            "[server]\nclock = \"manual\"\n[decision]\ndeferral_hours = 2.5\n[triggers.baseline]\newma_alpha = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.server.clock, ClockMode::Manual);
        assert_eq!(c.engine().decision.deferral_hours, 2.5);
        assert_eq!(c.engine().triggers.baseline.ewma_alpha, 0.5);
    }

    #[test]
    fn type_error_names_the_field() {
        let err = ServiceConfig::parse("[triggers.baseline]\nwindow_days = \"week\"\n").unwrap_err();
        match err {
            LoadError::Field { path, .. } => assert_eq!(path, "triggers.baseline.window_days"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ServiceConfig::parse("[server]\nlisten_on = \"x\"\n").unwrap_err();
        assert!(matches!(err, LoadError::Field { ref path, .. } if path.starts_with("server")), "{err}");
    }

    #[test]
    fn semantic_error_names_the_field() {
        let err = ServiceConfig::parse("[triggers.baseline]\newma_alpha = 1.5\n").unwrap_err();
        assert!(
            matches!(err, LoadError::Field { ref path, .. } if path == "triggers.baseline.ewma_alpha"),
            "{err}"
        );
        let err = ServiceConfig::parse("[[auth.tokens]]\ntoken = \"t\"\nrole = \"nurse\"\n").unwrap_err();
        assert!(matches!(err, LoadError::Field { ref path, .. } if path == "auth.tokens[0].role"), "{err}");
    }
}
