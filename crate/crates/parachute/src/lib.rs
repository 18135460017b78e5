//! Parachute: precomputed join-aware filter columns for in-memory
//! analytics.
//!
//! Star and snowflake queries spend much of their time carrying fact rows
//! that a later join discards. When a fact table is scanned before the
//! dimension holding the filter, no runtime filter push can save those
//! rows. This crate precomputes, per foreign key, a packed column on the
//! fact side condensing the dimension attribute (an equi-depth histogram
//! bin or a byte-partition fingerprint), statically detects the scans that
//! runtime filtering cannot reach, translates dimension predicates onto
//! the packed columns, and measures what remains against an exact
//! semi-join reducer.
//!
//! Top-level flow: declare a [`catalog::Schema`], load data into a
//! [`db::Database`], attach parachute columns with [`attach`], then plan
//! and run queries through [`planner`] and [`engine`], checking emitted
//! rows with [`oracle`].

pub mod attach;
pub mod bench;
pub mod catalog;
pub mod db;
pub mod engine;
pub mod error;
pub mod fingerprint;
pub mod histogram;
pub mod like;
pub mod oracle;
pub mod planner;
pub mod storage;
pub mod translate;
pub mod value;

pub use db::Database;
pub use error::{Error, Result};
