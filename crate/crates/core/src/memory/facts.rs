use serde::{Deserialize, Serialize};

use super::{EventKind, MemoryError, MemoryEvent, MemoryStore, Statement};
use crate::ids::{EventId, FactId, PatientId};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Confirmation {
    ClinicianConfirmed { verdict: EventId },
    Recurrence { count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTermFact {
    pub fact_id: FactId,
    pub patient_id: PatientId,
    pub category: super::FactCategory,
    pub statement: Statement,
    pub provenance: Vec<EventId>,
    pub confirmation: Confirmation,
    pub created_at: Timestamp,
}

/// A statement seen too few times to promote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCandidate {
    pub patient_id: PatientId,
    pub statement: Statement,
    pub sources: Vec<EventId>,
}

/// True for a verdict event recording a clinician's approval.
pub(crate) fn is_clinician_approval(event: &MemoryEvent) -> bool {
    event.kind == EventKind::Verdict
        && event.payload.get("verdict").and_then(|v| v.as_str()) == Some("approve")
        && event.payload.get("role").and_then(|v| v.as_str()) == Some("clinician")
}

impl MemoryStore {
    /// Promotes `statement` to a long-term fact when a clinician approval
    /// confirms it or it was observed in at least `recurrence_k` distinct
    /// source events. Otherwise the sources are staged and
    /// `InsufficientEvidence` is returned.
    pub fn promote_fact(
        &mut self,
        patient: &PatientId,
        statement: Statement,
        sources: &[EventId],
        verdict: Option<&EventId>,
        now: Timestamp,
    ) -> Result<FactId, MemoryError> {
        for id in sources.iter().chain(verdict) {
            if self.event(id).is_none() {
                return Err(MemoryError::UnresolvableProvenance(id.clone()));
            }
        }
        let mut provenance: Vec<EventId> = Vec::new();
        for id in sources {
            if !provenance.contains(id) {
                provenance.push(id.clone());
            }
        }
        let approved = verdict.filter(|v| self.event(v).is_some_and(is_clinician_approval));
        let confirmation = if let Some(v) = approved {
            if !provenance.contains(v) {
                provenance.push(v.clone());
            }
            Confirmation::ClinicianConfirmed { verdict: v.clone() }
        } else {
            let count = provenance
                .iter()
                .filter(|id| self.event(id).is_some_and(|e| e.observed().contains(&statement)))
                .count();
            let needed = self.config.recurrence_k;
            if count < needed {
                let entry = self.staging.entry((patient.clone(), statement.clone())).or_insert_with(|| {
                    PendingCandidate {
                        patient_id: patient.clone(),
                        statement: statement.clone(),
                        sources: Vec::new(),
                    }
                });
                for id in &provenance {
                    if !entry.sources.contains(id) {
                        entry.sources.push(id.clone());
                    }
                }
                return Err(MemoryError::InsufficientEvidence { count, needed });
            }
            Confirmation::Recurrence { count }
        };
        if provenance.is_empty() {
            return Err(MemoryError::InsufficientEvidence { count: 0, needed: self.config.recurrence_k });
        }
        let fact_id = self.next_fact_id(patient);
        self.facts.insert(
            fact_id.clone(),
            LongTermFact {
                fact_id: fact_id.clone(),
                patient_id: patient.clone(),
                category: statement.category,
                statement,
                provenance,
                confirmation,
                created_at: now,
            },
        );
        Ok(fact_id)
    }

    /// Stages one observation; promotes and clears the candidate once it
    /// reaches the recurrence threshold.
    pub(super) fn stage(
        &mut self,
        patient: &PatientId,
        statement: Statement,
        source: &EventId,
        at: Timestamp,
    ) {
        let key = (patient.clone(), statement.clone());
        let entry = self.staging.entry(key.clone()).or_insert_with(|| PendingCandidate {
            patient_id: patient.clone(),
            statement: statement.clone(),
            sources: Vec::new(),
        });
        if !entry.sources.contains(source) {
            entry.sources.push(source.clone());
        }
        if entry.sources.len() >= self.config.recurrence_k {
            let sources = entry.sources.clone();
            if self.promote_fact(patient, statement, &sources, None, at).is_ok() {
                self.staging.remove(&key);
            }
        }
    }

    /// Promotes every assertion carried by `response_event`, confirmed by
    /// `verdict_event`. Returns the new fact ids.
    pub fn confirm_assertions(
        &mut self,
        response_event: &EventId,
        verdict_event: &EventId,
        now: Timestamp,
    ) -> Vec<FactId> {
        let Some(response) = self.event(response_event) else {
            return Vec::new();
        };
        let patient = response.patient_id.clone();
        let mut out = Vec::new();
        for statement in response.asserted() {
            if let Ok(id) = self.promote_fact(
                &patient,
                statement,
                std::slice::from_ref(response_event),
                Some(verdict_event),
                now,
            ) {
                out.push(id);
            }
        }
        out
    }

    /// Walks every fact's provenance and re-derives its promotion condition
    /// from the cited events. Returns the first violation found.
    pub fn audit(&self) -> Result<(), String> {
        for fact in self.facts.values() {
            if fact.provenance.is_empty() {
                return Err(format!("{}: empty provenance", fact.fact_id));
            }
            let mut cited = Vec::new();
            for id in &fact.provenance {
                match self.event(id) {
                    Some(e) if e.patient_id == fact.patient_id => cited.push(e),
                    Some(_) => return Err(format!("{}: {id} belongs to another patient", fact.fact_id)),
                    None => return Err(format!("{}: dangling provenance {id}", fact.fact_id)),
                }
            }
            match &fact.confirmation {
                Confirmation::ClinicianConfirmed { verdict } => {
                    let Some(v) = cited.iter().find(|e| &e.event_id == verdict) else {
                        return Err(format!("{}: verdict not in provenance", fact.fact_id));
                    };
                    if !is_clinician_approval(v) {
                        return Err(format!("{}: {verdict} is not a clinician approval", fact.fact_id));
                    }
                    if !cited.iter().any(|e| e.asserted().contains(&fact.statement)) {
                        return Err(format!("{}: no cited event asserts the statement", fact.fact_id));
                    }
                }
                Confirmation::Recurrence { count } => {
                    let observed = cited.iter().filter(|e| e.observed().contains(&fact.statement)).count();
                    if *count < self.config.recurrence_k || observed < *count {
                        return Err(format!(
                            "{}: recurrence {count} not supported ({observed} observations)",
                            fact.fact_id
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
