//! Evaluation apparatus for the verifiable engine: a seeded workload
//! generator, two reference designs to compare against (a journal-plus-
//! materialized-views baseline and a proofless KVS floor), a split-system
//! harness that bolts verification onto a plain store over a socket, and a
//! runner that reports steady-state throughput with hash and node-fetch
//! counters.

pub mod baseline;
pub mod nonintrusive;
pub mod runner;
pub mod systems;
pub mod workload;

pub use runner::{csv_header, csv_row, run_bench, run_measured, BenchResult};
pub use systems::{BenchSystem, PlainKvs, SystemError, SystemKind, Unified};
pub use workload::{generate, Mix, Op, Workload, WorkloadSpec};
