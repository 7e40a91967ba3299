//! The systems under test, behind one trait so the runner can swap them.
//!
//! * `Unified` — the engine under evaluation: one authenticated index
//!   serves both queries and proofs.
//! * `PlainKvs` — the floor: the same immutable multi-version ordered map
//!   with no ledger and no proofs.
//! * `Baseline` (see [`crate::baseline`]) — the ceiling on proof cost: a
//!   journal plus separately materialized views, with one authenticated
//!   descent per proven result row.
//! * `SplitSystem` (see [`crate::nonintrusive`]) — plain KVS data path plus
//!   a ledger database reached over a real socket.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use verdb::codec::{CellValue, Digest, UniversalKey};
use verdb::engine::{version_interval, Engine, EngineConfig, EngineError, ReadRequest};
use verdb::merkle::Snapshot;
use verdb::store::Durability;
use verdb::verify::{Verifier, VerifyFailure};

use crate::baseline::{BaselineClient, BaselineDb, BaselineError};
use crate::workload::WorkloadError;

pub const BENCH_COLUMN: &str = "w";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Unified,
    Baseline,
    PlainKvs,
    NonIntrusive,
}

impl SystemKind {
    pub fn label(&self) -> &'static str {
        match self {
            SystemKind::Unified => "unified",
            SystemKind::Baseline => "baseline",
            SystemKind::PlainKvs => "kvs",
            SystemKind::NonIntrusive => "nonintrusive",
        }
    }
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("operation unsupported by this system: {0}")]
    Unsupported(&'static str),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
    #[error("wire: {0}")]
    Api(#[from] verdb::api::ApiError),
    #[error("verification rejected an honest response: {0}")]
    Verify(#[from] VerifyFailure),
    #[error("split-system stores disagree: {0}")]
    SplitMismatch(String),
    #[error("workload: {0}")]
    Workload(#[from] WorkloadError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// What every benched system can do. `verify` asks for client-side
/// verification of the result; systems without proofs must refuse it.
pub trait BenchSystem {
    fn kind(&self) -> SystemKind;
    /// Bulk-loads the initial records (load phase, excluded from timing).
    fn load(&mut self, records: &[(Vec<u8>, Vec<u8>)]) -> Result<(), SystemError>;
    fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError>;
    fn get(&mut self, key: &[u8], verify: bool) -> Result<Option<Vec<u8>>, SystemError>;
    fn range(
        &mut self,
        low: &[u8],
        high: &[u8],
        verify: bool,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, SystemError>;
    /// Node fetches performed inside the system's own storage layer, when
    /// it has one outside the shared instrumented index.
    fn aux_node_reads(&self) -> u64 {
        0
    }
}

/// The engine under evaluation, with a client-side verifier when asked.
pub struct Unified {
    engine: Engine,
    verifier: Verifier,
}

impl Unified {
    pub fn open(dir: &Path) -> Result<Unified, SystemError> {
        let engine = Engine::open(
            dir,
            EngineConfig {
                seal_max_ms: 0,
                durability: Durability::Buffered,
                ..EngineConfig::default()
            },
        )?;
        Ok(Unified {
            engine,
            verifier: Verifier::in_memory(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn verified_read(
        &mut self,
        request: ReadRequest,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, SystemError> {
        let anchor = self.verifier.anchor().map(|c| c.height);
        let response = self.engine.read_query(&request, None, anchor)?;
        self.verifier.verify_response(&request, None, &response)?;
        Ok(response
            .rows
            .into_iter()
            .map(|row| (row.key.primary_key, raw_value(&row.value)))
            .collect())
    }
}

fn raw_value(value: &CellValue) -> Vec<u8> {
    match value {
        CellValue::Bytes(b) => b.clone(),
        CellValue::Utf8(s) => s.as_bytes().to_vec(),
        CellValue::Int64(v) => v.to_be_bytes().to_vec(),
        CellValue::Tombstone => Vec::new(),
    }
}

impl BenchSystem for Unified {
    fn kind(&self) -> SystemKind {
        SystemKind::Unified
    }

    fn load(&mut self, records: &[(Vec<u8>, Vec<u8>)]) -> Result<(), SystemError> {
        for batch in records.chunks(1024) {
            let mut txn = self.engine.begin();
            for (key, value) in batch {
                txn.put(BENCH_COLUMN, key, CellValue::Bytes(value.clone()))?;
            }
            txn.commit()?;
        }
        Ok(())
    }

    fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError> {
        self.engine
            .put(BENCH_COLUMN, key, CellValue::Bytes(value.to_vec()))?;
        Ok(())
    }

    fn get(&mut self, key: &[u8], verify: bool) -> Result<Option<Vec<u8>>, SystemError> {
        if !verify {
            return Ok(self
                .engine
                .get_latest(BENCH_COLUMN, key, None)?
                .map(|row| raw_value(&row.value)));
        }
        let rows = self.verified_read(ReadRequest::Point {
            column: BENCH_COLUMN.into(),
            primary_key: key.to_vec(),
        })?;
        Ok(rows.into_iter().next().map(|(_, v)| v))
    }

    fn range(
        &mut self,
        low: &[u8],
        high: &[u8],
        verify: bool,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, SystemError> {
        if !verify {
            return Ok(self
                .engine
                .scan_latest(BENCH_COLUMN, low, high, None)?
                .into_iter()
                .map(|row| (row.key.primary_key, raw_value(&row.value)))
                .collect());
        }
        self.verified_read(ReadRequest::Range {
            column: BENCH_COLUMN.into(),
            low: low.to_vec(),
            high: high.to_vec(),
        })
    }
}

/// Immutable multi-version ordered map: the shared authenticated tree used
/// as a plain index, plus a content-addressed value heap. No ledger, no
/// proofs, no transactions — the throughput floor.
pub struct PlainKvs {
    tip: Snapshot,
    values: HashMap<Digest, Vec<u8>>,
    clock: u64,
}

impl PlainKvs {
    pub fn new() -> PlainKvs {
        PlainKvs {
            tip: Snapshot::empty(),
            values: HashMap::new(),
            clock: 0,
        }
    }

    fn write(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError> {
        self.clock += 1;
        let digest = verdb::codec::hash_bytes(value);
        self.values.insert(digest, value.to_vec());
        let ukey = UniversalKey::new(BENCH_COLUMN, key, self.clock, digest)
            .map_err(EngineError::from)?;
        self.tip = self.tip.insert(&ukey.encode(), digest).map_err(EngineError::from)?;
        Ok(())
    }

    fn latest_in(&self, versions: &[(Vec<u8>, Digest)]) -> Option<Vec<u8>> {
        versions
            .last()
            .map(|(_, digest)| self.values[digest].clone())
    }
}

impl Default for PlainKvs {
    fn default() -> PlainKvs {
        PlainKvs::new()
    }
}

impl BenchSystem for PlainKvs {
    fn kind(&self) -> SystemKind {
        SystemKind::PlainKvs
    }

    fn load(&mut self, records: &[(Vec<u8>, Vec<u8>)]) -> Result<(), SystemError> {
        for (key, value) in records {
            self.write(key, value)?;
        }
        Ok(())
    }

    fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError> {
        self.write(key, value)
    }

    fn get(&mut self, key: &[u8], verify: bool) -> Result<Option<Vec<u8>>, SystemError> {
        if verify {
            return Err(SystemError::Unsupported("plain KVS has no proofs"));
        }
        let (low, high) = version_interval(BENCH_COLUMN, key, 0, u64::MAX);
        let versions = self.tip.scan(&low, &high).map_err(EngineError::from)?;
        Ok(self.latest_in(&versions))
    }

    fn range(
        &mut self,
        low: &[u8],
        high: &[u8],
        verify: bool,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, SystemError> {
        if verify {
            return Err(SystemError::Unsupported("plain KVS has no proofs"));
        }
        let (lo, _) = version_interval(BENCH_COLUMN, low, 0, 0);
        let (_, hi) = version_interval(BENCH_COLUMN, high, 0, u64::MAX);
        let all = self.tip.scan(&lo, &hi).map_err(EngineError::from)?;
        let mut out: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
        let mut group: Vec<(Vec<u8>, Digest)> = Vec::new();
        let mut group_pk: Option<Vec<u8>> = None;
        for (k, d) in all {
            let pk = UniversalKey::decode(&k)
                .map_err(EngineError::from)?
                .primary_key;
            if group_pk.as_ref() != Some(&pk) {
                if let (Some(prev), Some(v)) = (group_pk.take(), self.latest_in(&group)) {
                    out.push((prev, v));
                }
                group.clear();
                group_pk = Some(pk);
            }
            group.push((k, d));
        }
        if let (Some(prev), Some(v)) = (group_pk, self.latest_in(&group)) {
            out.push((prev, v));
        }
        Ok(out)
    }
}

/// The journal-plus-materialized-views reference design with client-side
/// verification of its per-row descent proofs.
pub struct Baseline {
    db: BaselineDb,
    client: BaselineClient,
}

impl Baseline {
    pub fn open(dir: &Path) -> Result<Baseline, SystemError> {
        Ok(Baseline {
            db: BaselineDb::open(dir)?,
            client: BaselineClient::new(),
        })
    }

    pub fn db(&self) -> &BaselineDb {
        &self.db
    }
}

impl BenchSystem for Baseline {
    fn kind(&self) -> SystemKind {
        SystemKind::Baseline
    }

    fn load(&mut self, records: &[(Vec<u8>, Vec<u8>)]) -> Result<(), SystemError> {
        Ok(self.db.load(records)?)
    }

    fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError> {
        Ok(self.db.put(key, value)?)
    }

    fn get(&mut self, key: &[u8], verify: bool) -> Result<Option<Vec<u8>>, SystemError> {
        if !verify {
            return Ok(self.db.get(key)?);
        }
        let anchor = self.client.anchor().map(|c| c.height);
        let response = self.db.get_verifiable(key, anchor)?;
        self.client.verify(&response)?;
        Ok(response.docs.into_iter().next().map(|d| d.doc))
    }

    fn range(
        &mut self,
        low: &[u8],
        high: &[u8],
        verify: bool,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, SystemError> {
        if !verify {
            return Ok(self.db.range(low, high)?);
        }
        let anchor = self.client.anchor().map(|c| c.height);
        let response = self.db.range_verifiable(low, high, anchor)?;
        self.client.verify(&response)?;
        Ok(response
            .docs
            .into_iter()
            .map(|d| (d.key, d.doc))
            .collect())
    }

    fn aux_node_reads(&self) -> u64 {
        self.db.nodes.fetch_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kvs_refuses_verification() {
        let mut kvs = PlainKvs::new();
        kvs.put(b"k", b"v").unwrap();
        assert!(matches!(
            kvs.get(b"k", true),
            Err(SystemError::Unsupported(_))
        ));
        assert!(matches!(
            kvs.range(b"a", b"z", true),
            Err(SystemError::Unsupported(_))
        ));
    }

    #[test]
    fn kvs_latest_version_semantics() {
        let mut kvs = PlainKvs::new();
        kvs.put(b"a", b"1").unwrap();
        kvs.put(b"b", b"2").unwrap();
        kvs.put(b"a", b"3").unwrap();
        assert_eq!(kvs.get(b"a", false).unwrap(), Some(b"3".to_vec()));
        assert_eq!(kvs.get(b"missing", false).unwrap(), None);
        assert_eq!(
            kvs.range(b"a", b"b", false).unwrap(),
            vec![(b"a".to_vec(), b"3".to_vec()), (b"b".to_vec(), b"2".to_vec())]
        );
    }

    #[test]
    fn unified_and_kvs_agree_on_a_small_history() {
        let dir = tempfile::tempdir().unwrap();
        let mut unified = Unified::open(dir.path()).unwrap();
        let mut kvs = PlainKvs::new();
        let records: Vec<(Vec<u8>, Vec<u8>)> = (0..50)
            .map(|i| (format!("k{i:02}").into_bytes(), vec![i as u8; 20]))
            .collect();
        unified.load(&records).unwrap();
        kvs.load(&records).unwrap();
        unified.put(b"k07", b"new").unwrap();
        kvs.put(b"k07", b"new").unwrap();

        for verify in [false, true] {
            for (k, _) in &records {
                let expected = kvs.get(k, false).unwrap();
                assert_eq!(unified.get(k, verify).unwrap(), expected);
            }
            assert_eq!(
                unified.range(b"k00", b"k20", verify).unwrap(),
                kvs.range(b"k00", b"k20", false).unwrap()
            );
        }
    }
}
