use std::fmt;
use std::str::FromStr;

use chrono::{NaiveTime, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ids::{PatientId, PlanId};
use crate::time::{LocalZone, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Medication,
    Diet,
    Exercise,
    SymptomDiary,
}

impl Topic {
    pub fn name(self) -> &'static str {
        match self {
            Topic::Medication => "medication",
            Topic::Diet => "diet",
            Topic::Exercise => "exercise",
            Topic::SymptomDiary => "symptom_diary",
        }
    }

    pub fn plain_name(self) -> &'static str {
        match self {
            Topic::Medication => "medication",
            Topic::Diet => "diet",
            Topic::Exercise => "exercise",
            Topic::SymptomDiary => "symptom diary",
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Local wall-clock time of day, written `HH:MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalTime(NaiveTime);

impl LocalTime {
    pub fn hm(hour: u32, minute: u32) -> Self {
        Self(NaiveTime::from_hms_opt(hour, minute, 0).expect("valid time of day"))
    }

    pub fn naive(self) -> NaiveTime {
        self.0
    }
}

impl FromStr for LocalTime {
    type Err = chrono::ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveTime::parse_from_str(s, "%H:%M").map(Self)
    }
}

impl fmt::Display for LocalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%H:%M"))
    }
}

impl Serialize for LocalTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LocalTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekDay {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl From<WeekDay> for Weekday {
    fn from(d: WeekDay) -> Weekday {
        match d {
            WeekDay::Mon => Weekday::Mon,
            WeekDay::Tue => Weekday::Tue,
            WeekDay::Wed => Weekday::Wed,
            WeekDay::Thu => Weekday::Thu,
            WeekDay::Fri => Weekday::Fri,
            WeekDay::Sat => Weekday::Sat,
            WeekDay::Sun => Weekday::Sun,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "every", rename_all = "snake_case")]
pub enum Cadence {
    Daily { at: LocalTime },
    Weekly { day: WeekDay, at: LocalTime },
}

impl Cadence {
    /// Most recent cadence instant at or before `now`.
    pub fn last_instant(&self, now: Timestamp, zone: LocalZone) -> Timestamp {
        match *self {
            Cadence::Daily { at } => zone.last_daily_instant(now, at.naive()),
            Cadence::Weekly { day, at } => zone.last_weekly_instant(now, day.into(), at.naive()),
        }
    }
}

/// A plan as configured, before it is bound to a patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub plan_id: PlanId,
    pub cadence: Cadence,
    pub topic: Topic,
}

impl PlanSpec {
    pub fn bind(&self, patient_id: PatientId, active_from: Timestamp) -> RoutinePlan {
        RoutinePlan {
            plan_id: self.plan_id.clone(),
            patient_id,
            cadence: self.cadence,
            topic: self.topic,
            last_fired: None,
            active_from: Some(active_from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutinePlan {
    pub plan_id: PlanId,
    pub patient_id: PatientId,
    pub cadence: Cadence,
    pub topic: Topic,
    #[serde(default)]
    pub last_fired: Option<Timestamp>,
    /// Cadence instants before this are never due; set when the plan is
    /// registered so a new plan does not fire for slots that predate it.
    #[serde(default)]
    pub active_from: Option<Timestamp>,
}

impl RoutinePlan {
    /// The cadence instant this plan owes a check-in for, if any.
    pub fn due_instant(&self, now: Timestamp, zone: LocalZone) -> Option<Timestamp> {
        let instant = self.cadence.last_instant(now, zone);
        if self.active_from.is_some_and(|from| instant < from) {
            return None;
        }
        match self.last_fired {
            Some(last) if last >= instant => None,
            _ => Some(instant),
        }
    }
}

/// Marks every due plan as fired at `now` and returns the plans that fired.
///
/// Turning the returned plans into routine triggers is the router's job.
pub fn poll_routine(plans: &mut [RoutinePlan], now: Timestamp, zone: LocalZone) -> Vec<RoutinePlan> {
    let mut fired = Vec::new();
    for plan in plans.iter_mut() {
        if plan.due_instant(now, zone).is_some() {
            plan.last_fired = Some(now);
            fired.push(plan.clone());
        }
    }
    fired
}
