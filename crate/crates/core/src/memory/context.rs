use serde::{Deserialize, Serialize};

use super::{EventKind, FactCategory, LongTermFact, MemoryStore};
use crate::ids::{EventId, PatientId};
use crate::time::Timestamp;
use crate::triggers::Track;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicEntry {
    pub event_id: EventId,
    pub kind: EventKind,
    pub occurred_at: Timestamp,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub patient_id: PatientId,
    pub episodic: Vec<EpisodicEntry>,
    pub structured: Vec<LongTermFact>,
    pub built_at: Timestamp,
}

impl ContextBundle {
    pub fn empty(patient_id: PatientId, built_at: Timestamp) -> Self {
        Self { patient_id, episodic: Vec::new(), structured: Vec::new(), built_at }
    }

    pub fn facts_in(&self, category: FactCategory) -> impl Iterator<Item = &LongTermFact> {
        self.structured.iter().filter(move |f| f.category == category)
    }
}

/// Fact categories relevant to each track.
pub fn relevant_categories(track: Track) -> &'static [FactCategory] {
    match track {
        Track::Outlier => &[FactCategory::Condition, FactCategory::Medication, FactCategory::BaselinePattern],
        Track::Routine => {
            &[FactCategory::Medication, FactCategory::AdherencePattern, FactCategory::Preference]
        }
    }
}

impl MemoryStore {
    /// The latest `episodic_m` snapshot events plus the long-term facts
    /// relevant to `track`, in fact-id order.
    pub fn build_context(&self, patient: &PatientId, track: Track, now: Timestamp) -> ContextBundle {
        let snapshot = self.read_snapshot(patient, now);
        let skip = snapshot.events.len().saturating_sub(self.config.episodic_m);
        let episodic = snapshot.events[skip..]
            .iter()
            .map(|e| EpisodicEntry {
                event_id: e.event_id.clone(),
                kind: e.kind,
                occurred_at: e.occurred_at,
                summary: e.summary(),
            })
            .collect();
        let categories = relevant_categories(track);
        let structured = self
            .facts_for(patient)
            .filter(|f| categories.contains(&f.category) && f.created_at <= now)
            .cloned()
            .collect();
        ContextBundle { patient_id: patient.clone(), episodic, structured, built_at: now }
    }
}
