//! Deterministic slot extraction from free-text answers.

use super::{Choice, SlotDomain, SlotValue};

const YES: &[&str] = &["yes", "yeah", "yep", "y", "yup", "sure", "did", "took", "taken", "always"];
const NO: &[&str] = &["no", "nope", "n", "not", "never", "didn't", "didnt", "none", "missed", "forgot"];
const PARTIAL: &[&str] = &["partial", "partially", "partly", "some", "sometimes", "mostly", "half", "most"];

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'')).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Classifies by the first token that belongs to any keyword list.
fn choice(text: &str, allow_partial: bool) -> Option<Choice> {
    tokens(text).find_map(|t| {
        let t = t.as_str();
        if YES.contains(&t) {
            Some(Choice::Yes)
        } else if NO.contains(&t) {
            Some(Choice::No)
        } else if allow_partial && PARTIAL.contains(&t) {
            Some(Choice::Partial)
        } else {
            None
        }
    })
}

/// First integer in the text that lies in 0..=10.
fn severity(text: &str) -> Option<u8> {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse::<u32>().ok())
        .find(|n| *n <= 10)
        .map(|n| n as u8)
}

/// Extracts a value for `domain` from `answer`; `None` when unparseable.
pub fn extract(domain: SlotDomain, answer: &str) -> Option<SlotValue> {
    match domain {
        SlotDomain::YesNo => choice(answer, false).map(SlotValue::Choice),
        SlotDomain::YesNoPartial => choice(answer, true).map(SlotValue::Choice),
        SlotDomain::Severity => severity(answer).map(SlotValue::Severity),
        SlotDomain::FreeText => {
            let text = answer.trim();
            (!text.is_empty()).then(|| SlotValue::Text(text.to_string()))
        }
    }
}
