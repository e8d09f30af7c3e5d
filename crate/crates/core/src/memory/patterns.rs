use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FactCategory, MemoryStore};
use crate::ids::{FactId, JobId, PatientId};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobScope {
    Patient { patient_id: PatientId },
    Shared,
}

/// An abstract request to refresh parametric memory; emitted, never executed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainJobDescriptor {
    pub job_id: JobId,
    pub scope: JobScope,
    pub category: FactCategory,
    pub fact_ids: Vec<FactId>,
    pub emitted_at: Timestamp,
}

impl MemoryStore {
    /// Emits one descriptor per (patient, category) whose facts created in
    /// `(now - stability window, now]` number at least the configured
    /// minimum, unless that exact fact set was already emitted.
    pub fn flag_stable_patterns(&mut self, now: Timestamp) -> Vec<RetrainJobDescriptor> {
        let from = now - self.config.stability_window();
        let mut groups: BTreeMap<(PatientId, FactCategory), Vec<FactId>> = BTreeMap::new();
        for fact in self.facts.values() {
            if fact.created_at > from && fact.created_at <= now {
                groups
                    .entry((fact.patient_id.clone(), fact.category))
                    .or_default()
                    .push(fact.fact_id.clone());
            }
        }
        let mut out = Vec::new();
        for ((patient, category), mut fact_ids) in groups {
            if fact_ids.len() < self.config.stability_min_facts {
                continue;
            }
            fact_ids.sort();
            if !self.emitted_sets.insert(fact_ids.clone()) {
                continue;
            }
            let descriptor = RetrainJobDescriptor {
                job_id: self.next_job_id(&patient),
                scope: JobScope::Patient { patient_id: patient },
                category,
                fact_ids,
                emitted_at: now,
            };
            self.descriptors.push(descriptor.clone());
            out.push(descriptor);
        }
        out
    }
}
