//! Static bearer tokens mapped to roles.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vitaldx_core::decision::ActorRole;
use vitaldx_core::ids::{ActorId, PatientId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSpec {
    pub token: String,
    /// `clinician`, `service`, or `patient:<id>`.
    pub role: String,
    /// Actor id recorded on verdicts; defaults to the role text.
    #[serde(default)]
    pub actor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Clinician,
    Service,
    Patient(PatientId),
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clinician" => Ok(Role::Clinician),
            "service" => Ok(Role::Service),
            _ => match s.strip_prefix("patient:") {
                Some(id) if !id.is_empty() => Ok(Role::Patient(PatientId::from(id))),
                _ => Err(format!("unknown role {s:?}; expected clinician, service or patient:<id>")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub actor: ActorId,
    pub role: Role,
}

impl Principal {
    pub fn actor_role(&self) -> ActorRole {
        match self.role {
            Role::Clinician => ActorRole::Clinician,
            Role::Service => ActorRole::Service,
            Role::Patient(_) => ActorRole::Patient,
        }
    }

    pub fn is_clinician(&self) -> bool {
        self.role == Role::Clinician
    }

    pub fn is_service(&self) -> bool {
        self.role == Role::Service
    }

    /// Clinicians and the service see every patient; a patient sees only
    /// themself.
    pub fn may_see(&self, patient: &PatientId) -> bool {
        match &self.role {
            Role::Patient(own) => own == patient,
            Role::Clinician | Role::Service => true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    tokens: BTreeMap<String, Principal>,
}

impl TokenTable {
    /// Builds the table from validated specs.
    pub fn new(specs: &[TokenSpec]) -> Self {
        let tokens = specs
            .iter()
            .map(|s| {
                let role: Role = s.role.parse().expect("roles validated with the config");
                let actor = ActorId::from(s.actor.clone().unwrap_or_else(|| s.role.clone()).as_str());
                (s.token.clone(), Principal { actor, role })
            })
            .collect();
        Self { tokens }
    }

    /// Resolves an `Authorization` header value.
    pub fn resolve(&self, header: &str) -> Option<&Principal> {
        let token = header.strip_prefix("Bearer ")?.trim();
        self.tokens.get(token)
    }
}
