//! The split-system design: verifiability bolted onto an existing store by
//! running *two* systems — a plain KVS on the data path and a full ledger
//! database reached over a real socket for proofs. Writes must commit to
//! both; reads fetch results locally and proofs remotely; every verified
//! operation pays the wire. The ledger database is authoritative: crash
//! recovery reconciles the KVS from it.

use std::sync::Arc;

use verdb::api::{Client, WireBytes, WireRequest, WireValue};
use verdb::codec::CellValue;
use verdb::engine::{Engine, EngineConfig, ReadRequest};
use verdb::server::Service;
use verdb::store::Durability;
use verdb::verify::Verifier;

use crate::systems::{BenchSystem, PlainKvs, SystemError, SystemKind, BENCH_COLUMN};

pub struct SplitSystem {
    kvs: PlainKvs,
    ledger_engine: Arc<Engine>,
    _service: Service,
    client: Client,
    verifier: Verifier,
    /// Test hook: simulate dying after the ledger commit and before the
    /// KVS update on the next write.
    crash_after_ledger: bool,
}

impl SplitSystem {
    pub fn open(dir: &std::path::Path) -> Result<SplitSystem, SystemError> {
        let ledger_engine = Arc::new(Engine::open(
            dir,
            EngineConfig {
                seal_max_ms: 0,
                durability: Durability::Buffered,
                ..EngineConfig::default()
            },
        )?);
        let service = Service::spawn(ledger_engine.clone(), ("127.0.0.1", 0))?;
        let client = Client::connect(service.addr())?;
        Ok(SplitSystem {
            kvs: PlainKvs::new(),
            ledger_engine,
            _service: service,
            client,
            verifier: Verifier::in_memory(),
            crash_after_ledger: false,
        })
    }

    pub fn inject_crash_on_next_put(&mut self) {
        self.crash_after_ledger = true;
    }

    /// Reconciles the KVS from the authoritative ledger database: replays
    /// the ledger's latest state over the wire and reapplies anything the
    /// KVS is missing. Run after a crash.
    pub fn recover(&mut self) -> Result<u64, SystemError> {
        let result = self.client.read(&WireRequest::Scan {
            column: BENCH_COLUMN.into(),
            low: WireBytes::B64 {
                b64: base64_encode(&[0u8]),
            },
            high: WireBytes::B64 {
                b64: base64_encode(&[0xffu8; 16]),
            },
            as_of: None,
            anchor_height: None,
        })?;
        let mut repaired = 0u64;
        for row in &result.rows {
            let ledger_value = raw(&row.value);
            if self.kvs.get(&row.key.primary_key, false)?.as_deref() != Some(&ledger_value[..]) {
                self.kvs.put(&row.key.primary_key, &ledger_value)?;
                repaired += 1;
            }
        }
        Ok(repaired)
    }

    fn wire_put(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError> {
        self.client.request(&WireRequest::Put {
            column: BENCH_COLUMN.into(),
            key: WireBytes::from_bytes(key),
            value: WireValue::B64(base64_encode(value)),
        })?;
        Ok(())
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn raw(value: &CellValue) -> Vec<u8> {
    match value {
        CellValue::Bytes(b) => b.clone(),
        CellValue::Utf8(s) => s.as_bytes().to_vec(),
        CellValue::Int64(v) => v.to_be_bytes().to_vec(),
        CellValue::Tombstone => Vec::new(),
    }
}

impl BenchSystem for SplitSystem {
    fn kind(&self) -> SystemKind {
        SystemKind::NonIntrusive
    }

    /// Load phase (excluded from timing) fills both stores directly; the
    /// measured phase pays the wire.
    fn load(&mut self, records: &[(Vec<u8>, Vec<u8>)]) -> Result<(), SystemError> {
        for batch in records.chunks(1024) {
            let mut txn = self.ledger_engine.begin();
            for (key, value) in batch {
                txn.put(BENCH_COLUMN, key, CellValue::Bytes(value.clone()))?;
            }
            txn.commit()?;
        }
        self.kvs.load(records)
    }

    /// Ledger first (authoritative), then the KVS. A crash between the two
    /// leaves the ledger ahead; [`SplitSystem::recover`] reconciles.
    fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), SystemError> {
        self.wire_put(key, value)?;
        if self.crash_after_ledger {
            self.crash_after_ledger = false;
            return Ok(()); // the "process" died before the KVS write
        }
        self.kvs.put(key, value)
    }

    fn get(&mut self, key: &[u8], verify: bool) -> Result<Option<Vec<u8>>, SystemError> {
        let local = self.kvs.get(key, false)?;
        if !verify {
            return Ok(local);
        }
        // Proofs come from the other system, across the wire.
        let request = ReadRequest::Point {
            column: BENCH_COLUMN.into(),
            primary_key: key.to_vec(),
        };
        let anchor = self.verifier.anchor().map(|c| c.height);
        let response = self.client.read(&WireRequest::Get {
            column: BENCH_COLUMN.into(),
            key: WireBytes::from_bytes(key),
            as_of: None,
            anchor_height: anchor,
        })?;
        self.verifier.verify_response(&request, None, &response)?;
        let proven = response.rows.first().map(|r| raw(&r.value));
        if proven != local {
            return Err(SystemError::SplitMismatch(format!(
                "key {:02x?}: KVS and ledger disagree",
                key
            )));
        }
        Ok(local)
    }

    fn range(
        &mut self,
        low: &[u8],
        high: &[u8],
        verify: bool,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, SystemError> {
        let local = self.kvs.range(low, high, false)?;
        if !verify {
            return Ok(local);
        }
        let request = ReadRequest::Range {
            column: BENCH_COLUMN.into(),
            low: low.to_vec(),
            high: high.to_vec(),
        };
        let anchor = self.verifier.anchor().map(|c| c.height);
        let response = self.client.read(&WireRequest::Scan {
            column: BENCH_COLUMN.into(),
            low: WireBytes::from_bytes(low),
            high: WireBytes::from_bytes(high),
            as_of: None,
            anchor_height: anchor,
        })?;
        self.verifier.verify_response(&request, None, &response)?;
        let proven: Vec<(Vec<u8>, Vec<u8>)> = response
            .rows
            .iter()
            .map(|r| (r.key.primary_key.clone(), raw(&r.value)))
            .collect();
        if proven != local {
            return Err(SystemError::SplitMismatch(
                "range: KVS and ledger disagree".into(),
            ));
        }
        Ok(local)
    }
}
