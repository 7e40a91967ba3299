//! Seeded workload generation. The same spec and seed always produce the
//! same initial records and the same operation stream, byte for byte, so
//! every system under test answers the exact same questions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;
use thiserror::Error;

pub const MIN_RECORDS: u64 = 10_000;
pub const MAX_RECORDS: u64 = 1_280_000;
pub const KEY_LEN_MIN: usize = 5;
pub const KEY_LEN_MAX: usize = 12;
pub const VALUE_LEN: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("initial_records {0} outside {MIN_RECORDS}..={MAX_RECORDS}")]
    RecordCount(u64),
    #[error("selectivity {0} outside (0, 1]")]
    Selectivity(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mix {
    ReadOnly,
    WriteOnly,
    RangeOnly(f64),
}

impl Mix {
    pub fn label(&self) -> &'static str {
        match self {
            Mix::ReadOnly => "read",
            Mix::WriteOnly => "write",
            Mix::RangeOnly(_) => "range",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub initial_records: u64,
    pub ops: u64,
    pub mix: Mix,
    pub verify: bool,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(MIN_RECORDS..=MAX_RECORDS).contains(&self.initial_records) {
            return Err(WorkloadError::RecordCount(self.initial_records));
        }
        if let Mix::RangeOnly(sel) = self.mix {
            if !(sel > 0.0 && sel <= 1.0) {
                return Err(WorkloadError::Selectivity(sel));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Get(Vec<u8>),
    Put(Vec<u8>, Vec<u8>),
    Range(Vec<u8>, Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    /// Distinct keys with their initial 20-byte values, generation order.
    pub initial: Vec<(Vec<u8>, Vec<u8>)>,
    pub ops: Vec<Op>,
}

fn random_key(rng: &mut ChaCha12Rng) -> Vec<u8> {
    let len = rng.gen_range(KEY_LEN_MIN..=KEY_LEN_MAX);
    (0..len).map(|_| rng.gen()).collect()
}

fn random_value(rng: &mut ChaCha12Rng) -> Vec<u8> {
    (0..VALUE_LEN).map(|_| rng.gen()).collect()
}

/// Expands a spec into concrete records and operations. Deterministic in
/// `(spec.seed, spec.initial_records, spec.ops, spec.mix)`.
pub fn generate(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    let mut seen = HashSet::with_capacity(spec.initial_records as usize);
    let mut initial = Vec::with_capacity(spec.initial_records as usize);
    while initial.len() < spec.initial_records as usize {
        let key = random_key(&mut rng);
        if seen.insert(key.clone()) {
            let value = random_value(&mut rng);
            initial.push((key, value));
        }
    }

    let mut sorted_keys: Vec<&Vec<u8>> = initial.iter().map(|(k, _)| k).collect();
    sorted_keys.sort();

    let mut ops = Vec::with_capacity(spec.ops as usize);
    for _ in 0..spec.ops {
        let op = match spec.mix {
            Mix::ReadOnly => {
                let i = rng.gen_range(0..initial.len());
                Op::Get(initial[i].0.clone())
            }
            Mix::WriteOnly => {
                let i = rng.gen_range(0..initial.len());
                Op::Put(initial[i].0.clone(), random_value(&mut rng))
            }
            Mix::RangeOnly(sel) => {
                let span = ((initial.len() as f64 * sel).ceil() as usize).max(1);
                let start = rng.gen_range(0..sorted_keys.len());
                let end = (start + span - 1).min(sorted_keys.len() - 1);
                Op::Range(sorted_keys[start].clone(), sorted_keys[end].clone())
            }
        };
        ops.push(op);
    }
    Ok(Workload { initial, ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mix: Mix, seed: u64) -> WorkloadSpec {
        WorkloadSpec {
            initial_records: MIN_RECORDS,
            ops: 500,
            mix,
            verify: false,
            seed,
        }
    }

    #[test]
    fn same_seed_same_stream() {
        for mix in [Mix::ReadOnly, Mix::WriteOnly, Mix::RangeOnly(0.001)] {
            let a = generate(&spec(mix, 42)).unwrap();
            let b = generate(&spec(mix, 42)).unwrap();
            assert_eq!(a, b);
            let c = generate(&spec(mix, 43)).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn shapes_match_the_contract() {
        let w = generate(&spec(Mix::RangeOnly(0.001), 7)).unwrap();
        assert_eq!(w.initial.len() as u64, MIN_RECORDS);
        let mut distinct = HashSet::new();
        for (k, v) in &w.initial {
            assert!((KEY_LEN_MIN..=KEY_LEN_MAX).contains(&k.len()));
            assert_eq!(v.len(), VALUE_LEN);
            assert!(distinct.insert(k.clone()), "duplicate initial key");
        }
        for op in &w.ops {
            match op {
                Op::Range(low, high) => assert!(low <= high),
                _ => panic!("range mix produced a non-range op"),
            }
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = spec(Mix::ReadOnly, 1);
        s.initial_records = 9_999;
        assert_eq!(generate(&s), Err(WorkloadError::RecordCount(9_999)));
        let s = spec(Mix::RangeOnly(0.0), 1);
        assert_eq!(generate(&s), Err(WorkloadError::Selectivity(0.0)));
        let s = spec(Mix::RangeOnly(1.5), 1);
        assert_eq!(generate(&s), Err(WorkloadError::Selectivity(1.5)));
    }

    #[test]
    fn range_spans_track_selectivity() {
        let w = generate(&spec(Mix::RangeOnly(0.001), 11)).unwrap();
        let mut keys: Vec<&Vec<u8>> = w.initial.iter().map(|(k, _)| k).collect();
        keys.sort();
        for op in &w.ops {
            let Op::Range(low, high) = op else { unreachable!() };
            let lo = keys.binary_search(&low).unwrap();
            let hi = keys.binary_search(&high).unwrap();
            assert!(hi - lo + 1 <= 10, "span {} too wide", hi - lo + 1);
        }
    }
}
