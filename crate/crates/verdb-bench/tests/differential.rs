//! Cross-system differential testing: every system under test must return
//! identical answers for identical seeded workloads — proofs differ in
//! shape and are excluded, results never may.

use verdb_bench::baseline;
use verdb_bench::nonintrusive::SplitSystem;
use verdb_bench::systems::{BenchSystem, PlainKvs, Unified};
use verdb_bench::workload::{generate, Mix, Op, WorkloadSpec, MIN_RECORDS};

/// Runs a workload and returns every observable answer, in op order.
fn observed_answers(
    sys: &mut dyn BenchSystem,
    ops: &[Op],
    verify: bool,
) -> Vec<Vec<(Vec<u8>, Vec<u8>)>> {
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        match op {
            Op::Get(key) => {
                let hit = sys.get(key, verify).unwrap();
                out.push(hit.map(|v| vec![(key.clone(), v)]).unwrap_or_default());
            }
            Op::Put(key, value) => {
                sys.put(key, value).unwrap();
                out.push(Vec::new());
            }
            Op::Range(low, high) => out.push(sys.range(low, high, verify).unwrap()),
        }
    }
    out
}

/// After the ops ran, probe a deterministic sample of final state.
fn final_state_sample(
    sys: &mut dyn BenchSystem,
    keys: &[Vec<u8>],
) -> Vec<Option<Vec<u8>>> {
    keys.iter().map(|k| sys.get(k, false).unwrap()).collect()
}

#[test]
fn all_four_systems_give_identical_answers() {
    // One mixed workload: reads, overwrites, and ranges interleaved by
    // splicing the three pure streams with one shared initial load.
    let base = WorkloadSpec {
        initial_records: MIN_RECORDS,
        ops: 120,
        mix: Mix::ReadOnly,
        verify: false,
        seed: 2024,
    };
    let reads = generate(&base).unwrap();
    let writes = generate(&WorkloadSpec {
        mix: Mix::WriteOnly,
        ..base
    })
    .unwrap();
    let ranges = generate(&WorkloadSpec {
        mix: Mix::RangeOnly(0.001),
        ..base
    })
    .unwrap();
    assert_eq!(reads.initial, writes.initial, "same seed, same load");
    let initial = reads.initial.clone();
    let mut ops = Vec::new();
    for i in 0..120 {
        ops.push(writes.ops[i].clone());
        ops.push(reads.ops[i].clone());
        if i % 4 == 0 {
            ops.push(ranges.ops[i].clone());
        }
    }
    let probe_keys: Vec<Vec<u8>> = initial.iter().step_by(97).map(|(k, _)| k.clone()).collect();

    let dir_unified = tempfile::tempdir().unwrap();
    let mut unified = Unified::open(dir_unified.path()).unwrap();
    unified.load(&initial).unwrap();
    let reference = observed_answers(&mut unified, &ops, true);
    let reference_state = final_state_sample(&mut unified, &probe_keys);

    let mut kvs = PlainKvs::new();
    kvs.load(&initial).unwrap();
    assert_eq!(observed_answers(&mut kvs, &ops, false), reference);
    assert_eq!(final_state_sample(&mut kvs, &probe_keys), reference_state);

    let dir_baseline = tempfile::tempdir().unwrap();
    let mut baseline = verdb_bench::systems::Baseline::open(dir_baseline.path()).unwrap();
    baseline.load(&initial).unwrap();
    assert_eq!(observed_answers(&mut baseline, &ops, true), reference);
    assert_eq!(final_state_sample(&mut baseline, &probe_keys), reference_state);

    let dir_split = tempfile::tempdir().unwrap();
    let mut split = SplitSystem::open(dir_split.path()).unwrap();
    split.load(&initial).unwrap();
    assert_eq!(observed_answers(&mut split, &ops, true), reference);
    assert_eq!(final_state_sample(&mut split, &probe_keys), reference_state);
}

#[test]
fn instrumentation_counts_descents_per_row_for_baseline_and_once_for_unified() {
    let spec = WorkloadSpec {
        initial_records: MIN_RECORDS,
        ops: 0,
        mix: Mix::ReadOnly,
        verify: true,
        seed: 9,
    };
    let w = generate(&spec).unwrap();

    let dir_b = tempfile::tempdir().unwrap();
    let mut baseline = verdb_bench::systems::Baseline::open(dir_b.path()).unwrap();
    baseline.load(&w.initial).unwrap();

    let dir_u = tempfile::tempdir().unwrap();
    let mut unified = Unified::open(dir_u.path()).unwrap();
    unified.load(&w.initial).unwrap();

    // A range that resolves to a known row count.
    let mut keys: Vec<Vec<u8>> = w.initial.iter().map(|(k, _)| k.clone()).collect();
    keys.sort();
    let low = keys[100].clone();
    let high = keys[120].clone();
    let expected_rows = 21;

    let before = baseline.db().ledger_descents;
    let rows = baseline.range(&low, &high, true).unwrap();
    assert_eq!(rows.len(), expected_rows);
    assert_eq!(
        baseline.db().ledger_descents - before,
        expected_rows as u64,
        "baseline pays one authenticated descent per result row"
    );

    let anchor = None;
    let request = verdb::engine::ReadRequest::Range {
        column: "w".into(),
        low: low.clone(),
        high: high.clone(),
    };
    let response = unified.engine().read_query(&request, None, anchor).unwrap();
    assert_eq!(response.rows.len(), expected_rows);
    assert_eq!(
        response.proofs.len(),
        1,
        "unified serves the whole range under one proof"
    );

    let _ = baseline::BaselineClient::new();
}
