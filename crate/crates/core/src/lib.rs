//! Call-blocking analysis for relay-assisted OFDMA cellular downlinks.
//!
//! The pipeline runs from cell geometry to interference statistics, from
//! interference to per-link subcarrier-demand classes, and from classes to
//! multi-rate Erlang loss systems at the relays and the base station. A
//! discrete-event simulator cross-checks the analytical results.

pub mod classes;
pub mod erlang;
pub mod geometry;
pub mod interference;
pub mod pipeline;
pub mod registry;
pub mod simulator;
