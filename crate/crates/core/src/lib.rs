//! Orchestration engine that turns wearable vital-sign streams into a
//! dual-track chronic-care workflow: interactive triage of anomalies and
//! scheduled adherence check-ins, closed by a clinician approval loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod audit;
pub mod canonical;
pub mod config;
pub mod coordinator;
pub mod decision;
pub mod engine;
pub mod ids;
pub mod inquiry;
pub mod memory;
pub mod simulator;
pub mod time;
pub mod triggers;
pub mod vitals;
