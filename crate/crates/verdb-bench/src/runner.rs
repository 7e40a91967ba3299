//! Executes workloads against systems and reports steady-state throughput
//! with instrumentation counters. The first 10% of operations warm the
//! system; the remainder is timed.

use std::time::Instant;

use verdb::codec::hash_invocations;
use verdb::merkle::node_reads;

use crate::systems::{BenchSystem, SystemError, SystemKind};
use crate::workload::{generate, Mix, Op, WorkloadSpec};

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub system: SystemKind,
    pub mix: Mix,
    pub records: u64,
    pub verify: bool,
    pub ops_per_second: f64,
    pub hash_count: u64,
    pub node_reads: u64,
    pub measured_ops: u64,
}

pub fn csv_header() -> &'static str {
    "system,mix,records,verify,ops_per_sec,hash_count,node_reads"
}

pub fn csv_row(r: &BenchResult) -> String {
    format!(
        "{},{},{},{},{:.2},{},{}",
        r.system.label(),
        r.mix.label(),
        r.records,
        r.verify,
        r.ops_per_second,
        r.hash_count,
        r.node_reads
    )
}

fn execute(sys: &mut dyn BenchSystem, op: &Op, verify: bool) -> Result<(), SystemError> {
    match op {
        Op::Get(key) => {
            std::hint::black_box(sys.get(key, verify)?);
        }
        Op::Put(key, value) => sys.put(key, value)?,
        Op::Range(low, high) => {
            std::hint::black_box(sys.range(low, high, verify)?);
        }
    }
    Ok(())
}

/// Runs the op stream against an already-loaded system: warm 10%, measure
/// the rest.
pub fn run_measured(
    sys: &mut dyn BenchSystem,
    ops: &[Op],
    spec: &WorkloadSpec,
) -> Result<BenchResult, SystemError> {
    let warm = ops.len() / 10;
    for op in &ops[..warm] {
        execute(sys, op, spec.verify)?;
    }

    let hash_start = hash_invocations();
    let node_start = node_reads() + sys.aux_node_reads();
    let t0 = Instant::now();
    for op in &ops[warm..] {
        execute(sys, op, spec.verify)?;
    }
    let elapsed = t0.elapsed();
    let measured = (ops.len() - warm) as u64;

    Ok(BenchResult {
        system: sys.kind(),
        mix: spec.mix,
        records: spec.initial_records,
        verify: spec.verify,
        ops_per_second: measured as f64 / elapsed.as_secs_f64().max(1e-9),
        hash_count: hash_invocations() - hash_start,
        node_reads: node_reads() + sys.aux_node_reads() - node_start,
        measured_ops: measured,
    })
}

/// Full procedure: generate the workload, load the initial records
/// (untimed), then run the measured phase.
pub fn run_bench(
    spec: &WorkloadSpec,
    sys: &mut dyn BenchSystem,
) -> Result<BenchResult, SystemError> {
    let workload = generate(spec)?;
    sys.load(&workload.initial)?;
    run_measured(sys, &workload.ops, spec)
}
