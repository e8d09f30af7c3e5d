//! Service shell around the vitaldx engine: the hash-chained input log,
//! replay, configuration, the HTTP API and the simulator bridge.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod auth;
pub mod chain;
pub mod config;
pub mod remote;
pub mod replay;
pub mod service;
pub mod store;
