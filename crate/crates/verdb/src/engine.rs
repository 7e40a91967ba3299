//! The transaction engine: MVCC over immutable versions, timestamp-ordering
//! validation, and a serialized commit pipeline that applies writes and seals
//! them into ledger blocks.
//!
//! Every write creates a new cell version keyed by `(column, primary_key,
//! commit_ts, value_hash)`; nothing is updated in place, deletes append
//! tombstones. Reads are snapshot reads as of a timestamp. Commits validate
//! under timestamp ordering — if any key a transaction read or wrote has a
//! committed version newer than the transaction's begin timestamp, the
//! transaction aborts and can be retried.
//!
//! The commit pipeline is the paper's auditor role collapsed into the
//! engine: validate, stamp, apply to cell store + authenticated index +
//! inverted index, then seal a block whose header binds the new index root
//! into the hash chain. Commit acknowledgements carry membership proofs for
//! each write, generated against the sealed root, so a committer only
//! returns once its block is durable — sealing batches concurrent commits
//! (up to `seal_max_txns`, or `seal_max_ms` after the first pending one).
//!
//! Reads at `latest` first seal whatever is pending, so each answer is
//! provable against a block. Reads `as_of` an older timestamp are served
//! from the current sealed snapshot: versions are immutable, so filtering
//! the version interval `[0, as_of]` under the newest root reproduces
//! exactly the historical state, proof included.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::chunk::ChunkerParams;
use crate::codec::{CellValue, CodecError, Digest, UniversalKey, ValueKind};
use crate::inverted::{InvertedError, InvertedIndex};
use crate::ledger::{
    BlockHeader, ChainCommitment, Ledger, LedgerBlock, LedgerError, OpKind, TxnOp, TxnRecord,
};
use crate::merkle::{IndexError, MerkleProof, Snapshot};
use crate::store::{CellStore, Durability, StoreError, StoreStats};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("transaction is no longer active")]
    TxnNotActive,
    #[error("conflict: {key} was committed at ts {committed_ts}, after this transaction began at ts {begin_ts}")]
    ConflictAbort {
        key: String,
        committed_ts: u64,
        begin_ts: u64,
    },
    #[error("column {column} holds {expected} values, got {got}")]
    KindMismatch {
        column: String,
        expected: ValueKind,
        got: ValueKind,
    },
    #[error("column {0} is not indexed for value queries")]
    UnknownColumn(String),
    #[error("invalid range: {0}")]
    InvalidRange(&'static str),
    #[error("timestamp {requested} is beyond the last sealed commit {sealed_through}")]
    FutureTimestamp { requested: u64, sealed_through: u64 },
    #[error("recovery failed at block {height}: {detail}")]
    Recovery { height: u64, detail: &'static str },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl From<InvertedError> for EngineError {
    fn from(e: InvertedError) -> EngineError {
        match e {
            InvertedError::KindMismatch {
                column,
                expected,
                got,
            } => EngineError::KindMismatch {
                column,
                expected,
                got,
            },
            InvertedError::UnknownColumn(c) => EngineError::UnknownColumn(c),
            InvertedError::InvalidRange(d) => EngineError::InvalidRange(d),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Seal the pending block once this many transactions are batched…
    pub seal_max_txns: usize,
    /// …or this many milliseconds after the first of them, whichever first.
    /// Zero makes every commit seal immediately.
    pub seal_max_ms: u64,
    pub durability: Durability,
    pub chunker: ChunkerParams,
}

impl Default for EngineConfig {
    fn default() -> EngineConfig {
        EngineConfig {
            seal_max_txns: 64,
            seal_max_ms: 50,
            durability: Durability::Strict,
            chunker: ChunkerParams::default(),
        }
    }
}

/// One read request. Point, range, and history queries address rows by
/// primary key through the authenticated index; value queries route through
/// the inverted index and bridge each hit back to a membership proof.
#[derive(Clone, Debug)]
pub enum ReadRequest {
    Point {
        column: String,
        primary_key: Vec<u8>,
    },
    Range {
        column: String,
        low: Vec<u8>,
        high: Vec<u8>,
    },
    ValueEq {
        column: String,
        value: CellValue,
    },
    ValueRange {
        column: String,
        low: CellValue,
        high: CellValue,
    },
    History {
        column: String,
        primary_key: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRow {
    pub key: UniversalKey,
    pub value: CellValue,
}

/// A verifiable answer: rows, the proofs tying them to an index root, the
/// block header that root is sealed in, the chain commitment, and the header
/// segment a client needs to extend its trust anchor up to that commitment.
#[derive(Clone, Debug)]
pub struct QueryResponse {
    pub rows: Vec<QueryRow>,
    /// One proof for point/range/history; one per row for value queries.
    pub proofs: Vec<MerkleProof>,
    /// The block whose `index_root` every proof replays to.
    pub block: BlockHeader,
    pub commitment: ChainCommitment,
    /// Headers `(anchor, tip]`, oldest first, for anchor extension.
    pub chain: Vec<BlockHeader>,
}

/// Acknowledgement of a committed transaction, returned once its block is
/// sealed: each written key with a membership proof against the sealed root.
#[derive(Clone, Debug)]
pub struct CommitReceipt {
    pub commit_ts: u64,
    pub block_height: u64,
    pub block_hash: Digest,
    pub proofs: Vec<(UniversalKey, MerkleProof)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TxnState {
    Active,
    Committed,
    Aborted,
}

/// A client transaction: reads are MVCC snapshot reads at `begin_ts`, writes
/// buffer locally until [`Transaction::commit`].
pub struct Transaction {
    engine: Arc<Inner>,
    begin_ts: u64,
    state: TxnState,
    reads: Vec<(String, Vec<u8>, Option<u64>)>,
    writes: Vec<(String, Vec<u8>, CellValue)>,
    statements: Vec<String>,
}

struct SealedTip {
    height: u64,
    header: BlockHeader,
    snapshot: Snapshot,
}

struct State {
    /// The working index: all sealed writes plus applied-but-unsealed ones.
    tip: Snapshot,
    inverted: InvertedIndex,
    /// Newest committed timestamp per (column, primary key); the

    /// timestamp-ordering validator.
    latest_committed: HashMap<(String, Vec<u8>), u64>,
    pending: Vec<TxnRecord>,
    pending_statements: Vec<String>,
    pending_first: Option<Instant>,
    /// txn id → height, for committers parked while another sealed.
    sealed_heights: HashMap<u64, u64>,
    /// Recently sealed roots, newest last; commit and read proofs come from
    /// these.
    recent: VecDeque<Arc<SealedTip>>,
    /// Highest commit timestamp inside any sealed block.
    sealed_through: u64,
}

struct Inner {
    clock: AtomicU64,
    state: Mutex<State>,
    sealed_cv: Condvar,
    store: CellStore,
    ledger: Ledger,
    config: EngineConfig,
}

/// Handle to an open database; cheap to clone and share across threads.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

const RECENT_SEALS: usize = 1024;

impl Engine {
    /// Opens (or creates) a database under `dir` and recovers it: the
    /// journal is replayed from genesis, rebuilding the authenticated index,
    /// the inverted index, and the validation map, and every block's sealed
    /// `index_root` is cross-checked against the replayed root. A fresh
    /// database seals an empty genesis block so there is always a
    /// commitment to anchor to.
    pub fn open(dir: &Path, config: EngineConfig) -> Result<Engine, EngineError> {
        let store = CellStore::open(dir, config.chunker, config.durability)?;
        let ledger = Ledger::open(dir, config.durability)?;

        let mut tip = Snapshot::empty();
        let mut inverted = InvertedIndex::new();
        let mut latest_committed = HashMap::new();
        let mut clock = 1u64;
        let mut sealed_through = 0u64;
        let mut recent = VecDeque::new();

        if ledger.is_empty() {
            ledger.seal_block(Vec::new(), Vec::new(), tip.root_hash(), true)?;
        }
        let tip_height = ledger.tip()?.height;
        for height in 0..=tip_height {
            let block = ledger.block(height)?;
            for record in &block.records {
                for op in &record.ops {
                    let key = &op.key;
                    let value = store.get_value(key.value_hash).map_err(|_| {
                        EngineError::Recovery {
                            height,
                            detail: "block references a value missing from the cell store",
                        }
                    })?;
                    tip = tip
                        .insert(&key.encode(), key.value_hash)
                        .map_err(|_| EngineError::Recovery {
                            height,
                            detail: "duplicate cell version in journal",
                        })?;
                    inverted
                        .index_put(&value, key.clone())
                        .map_err(|_| EngineError::Recovery {
                            height,
                            detail: "inconsistent value kinds in journal",
                        })?;
                    latest_committed
                        .entry((key.column.clone(), key.primary_key.clone()))
                        .and_modify(|ts: &mut u64| *ts = (*ts).max(key.timestamp))
                        .or_insert(key.timestamp);
                }
                clock = clock.max(record.txn_id + 1);
                sealed_through = sealed_through.max(record.txn_id);
            }
            if tip.root_hash() != block.header.index_root {
                return Err(EngineError::Recovery {
                    height,
                    detail: "replayed index root differs from the sealed root",
                });
            }
        }
        let tip_header = ledger.header(tip_height)?;
        recent.push_back(Arc::new(SealedTip {
            height: tip_height,
            header: tip_header,
            snapshot: tip.clone(),
        }));

        Ok(Engine {
            inner: Arc::new(Inner {
                clock: AtomicU64::new(clock),
                state: Mutex::new(State {
                    tip,
                    inverted,
                    latest_committed,
                    pending: Vec::new(),
                    pending_statements: Vec::new(),
                    pending_first: None,
                    sealed_heights: HashMap::new(),
                    recent,
                    sealed_through,
                }),
                sealed_cv: Condvar::new(),
                store,
                ledger,
                config,
            }),
        })
    }

    /// Starts a transaction reading as of now.
    pub fn begin(&self) -> Transaction {
        Transaction {
            engine: Arc::clone(&self.inner),
            begin_ts: self.inner.clock.fetch_add(1, Ordering::SeqCst),
            state: TxnState::Active,
            reads: Vec::new(),
            writes: Vec::new(),
            statements: Vec::new(),
        }
    }

    /// One-shot helpers for callers that don't need multi-op transactions.
    pub fn put(
        &self,
        column: &str,
        primary_key: &[u8],
        value: CellValue,
    ) -> Result<CommitReceipt, EngineError> {
        let mut txn = self.begin();
        txn.put(column, primary_key, value)?;
        txn.commit()
    }

    pub fn delete(&self, column: &str, primary_key: &[u8]) -> Result<CommitReceipt, EngineError> {
        let mut txn = self.begin();
        txn.delete(column, primary_key)?;
        txn.commit()
    }

    /// Answers a read verifiably. `as_of` of `None` means latest — pending
    /// commits are sealed first so the answer is provable. `anchor_height`
    /// is the client's current trust height; the response carries the
    /// headers above it.
    pub fn read_query(
        &self,
        request: &ReadRequest,
        as_of: Option<u64>,
        anchor_height: Option<u64>,
    ) -> Result<QueryResponse, EngineError> {
        let inner = &*self.inner;
        let (sealed, bridged) = {
            let mut st = inner.state.lock().unwrap();
            // Latest reads always cover everything committed; as-of reads
            // only need a seal when they point into the pending window.
            let needs_seal = !st.pending.is_empty()
                && as_of.map_or(true, |t| t > st.sealed_through);
            if needs_seal {
                seal_locked(inner, &mut st)?;
            }
            if let Some(t) = as_of {
                if t > st.sealed_through {
                    return Err(EngineError::FutureTimestamp {
                        requested: t,
                        sealed_through: st.sealed_through,
                    });
                }
            }
            let sealed = Arc::clone(st.recent.back().expect("genesis guarantees a seal"));
            // Value queries consult the inverted index under the lock; the
            // proofs are built outside it.
            let bridged = match request {
                ReadRequest::ValueEq { column, value } => {
                    Some(st.inverted.lookup_eq(column, value, as_of)?)
                }
                ReadRequest::ValueRange { column, low, high } => Some(
                    st.inverted
                        .lookup_range(column, low, high, as_of)?
                        .into_iter()
                        .map(|(_, k)| k)
                        .collect(),
                ),
                _ => None,
            };
            (sealed, bridged)
        };

        let cutoff = as_of.unwrap_or(u64::MAX);
        let mut rows = Vec::new();
        let mut proofs = Vec::new();
        match request {
            ReadRequest::Point {
                column,
                primary_key,
            } => {
                let (low, high) = version_interval(column, primary_key, 0, cutoff);
                proofs.push(sealed.snapshot.prove_range(&low, &high)?);
                let versions = sealed.snapshot.scan(&low, &high)?;
                if let Some(row) = newest_visible(inner, &versions)? {
                    rows.push(row);
                }
            }
            ReadRequest::Range { column, low, high } => {
                if low > high {
                    return Err(EngineError::InvalidRange("low bound above high bound"));
                }
                let (lo, _) = version_interval(column, low, 0, 0);
                let (_, hi) = version_interval(column, high, 0, u64::MAX);
                proofs.push(sealed.snapshot.prove_range(&lo, &hi)?);
                let all = sealed.snapshot.scan(&lo, &hi)?;
                // Group the interval's versions per primary key, in order.
                let mut group_start = 0usize;
                let mut parsed: Vec<(UniversalKey, Digest)> = Vec::with_capacity(all.len());
                for (k, d) in &all {
                    parsed.push((UniversalKey::decode(k)?, *d));
                }
                for i in 0..parsed.len() {
                    let last_of_key = i + 1 == parsed.len()
                        || parsed[i + 1].0.primary_key != parsed[i].0.primary_key;
                    if last_of_key {
                        let group = &all[group_start..=i];
                        if let Some(row) = newest_visible_at(inner, group, cutoff)? {
                            rows.push(row);
                        }
                        group_start = i + 1;
                    }
                }
            }
            ReadRequest::ValueEq { .. } | ReadRequest::ValueRange { .. } => {
                for key in bridged.expect("value path computed above") {
                    proofs.push(sealed.snapshot.prove_point(&key.encode()));
                    let value = inner.store.get_value(key.value_hash)?;
                    rows.push(QueryRow { key, value });
                }
            }
            ReadRequest::History {
                column,
                primary_key,
            } => {
                let (low, high) = version_interval(column, primary_key, 0, u64::MAX);
                proofs.push(sealed.snapshot.prove_range(&low, &high)?);
                for (k, d) in sealed.snapshot.scan(&low, &high)? {
                    let key = UniversalKey::decode(&k)?;
                    if key.timestamp > cutoff {
                        break;
                    }
                    let value = inner.store.get_value(d)?;
                    rows.push(QueryRow { key, value });
                }
            }
        }

        let commitment = ChainCommitment {
            height: sealed.height,
            tip_hash: sealed.header.block_hash(),
        };
        let from = anchor_height.map(|h| h + 1).unwrap_or(0);
        let chain = if from > sealed.height {
            Vec::new()
        } else {
            inner.ledger.headers_from(from)?
                .into_iter()
                .filter(|h| h.height <= sealed.height)
                .collect()
        };
        Ok(QueryResponse {
            rows,
            proofs,
            block: sealed.header,
            commitment,
            chain,
        })
    }

    /// Point read without proofs: the latest visible value, straight off the
    /// newest sealed snapshot. Same visibility rules as [`Engine::read_query`],
    /// none of the proof construction.
    pub fn get_latest(
        &self,
        column: &str,
        primary_key: &[u8],
        as_of: Option<u64>,
    ) -> Result<Option<QueryRow>, EngineError> {
        let sealed = self.sealed_for(as_of)?;
        let cutoff = as_of.unwrap_or(u64::MAX);
        let (low, high) = version_interval(column, primary_key, 0, cutoff);
        let versions = sealed.snapshot.scan(&low, &high)?;
        newest_visible(&self.inner, &versions)
    }

    /// Range read without proofs: latest visible row per primary key.
    pub fn scan_latest(
        &self,
        column: &str,
        low: &[u8],
        high: &[u8],
        as_of: Option<u64>,
    ) -> Result<Vec<QueryRow>, EngineError> {
        if low > high {
            return Err(EngineError::InvalidRange("low bound above high bound"));
        }
        let sealed = self.sealed_for(as_of)?;
        let cutoff = as_of.unwrap_or(u64::MAX);
        let (lo, _) = version_interval(column, low, 0, 0);
        let (_, hi) = version_interval(column, high, 0, u64::MAX);
        let all = sealed.snapshot.scan(&lo, &hi)?;
        let mut rows = Vec::new();
        let mut group_start = 0usize;
        let mut parsed: Vec<UniversalKey> = Vec::with_capacity(all.len());
        for (k, _) in &all {
            parsed.push(UniversalKey::decode(k)?);
        }
        for i in 0..parsed.len() {
            let last_of_key =
                i + 1 == parsed.len() || parsed[i + 1].primary_key != parsed[i].primary_key;
            if last_of_key {
                if let Some(row) = newest_visible_at(&self.inner, &all[group_start..=i], cutoff)? {
                    rows.push(row);
                }
                group_start = i + 1;
            }
        }
        Ok(rows)
    }

    /// The sealed snapshot a read at `as_of` must use, sealing pending
    /// commits when the read needs them.
    fn sealed_for(&self, as_of: Option<u64>) -> Result<Arc<SealedTip>, EngineError> {
        let inner = &*self.inner;
        let mut st = inner.state.lock().unwrap();
        let needs_seal =
            !st.pending.is_empty() && as_of.map_or(true, |t| t > st.sealed_through);
        if needs_seal {
            seal_locked(inner, &mut st)?;
        }
        if let Some(t) = as_of {
            if t > st.sealed_through {
                return Err(EngineError::FutureTimestamp {
                    requested: t,
                    sealed_through: st.sealed_through,
                });
            }
        }
        Ok(Arc::clone(st.recent.back().expect("genesis guarantees a seal")))
    }

    /// Re-reads the whole cell store from disk and checks every record
    /// against its digest (operator integrity sweep).
    pub fn verify_store(&self) -> Result<(), EngineError> {
        Ok(self.inner.store.verify_all()?)
    }

    /// Byte extent of the journal frame holding block `height`; lets
    /// corruption harnesses aim their byte flips.
    #[doc(hidden)]
    pub fn frame_extent(&self, height: u64) -> Result<std::ops::Range<u64>, EngineError> {
        Ok(self.inner.ledger.frame_extent(height)?)
    }

    /// Current chain commitment (seals pending commits first, like a read).
    pub fn commitment(&self) -> Result<ChainCommitment, EngineError> {
        let inner = &*self.inner;
        let mut st = inner.state.lock().unwrap();
        if !st.pending.is_empty() {
            seal_locked(inner, &mut st)?;
        }
        drop(st);
        Ok(inner.ledger.tip()?)
    }

    pub fn audit(&self, from: u64, to: u64) -> Result<crate::ledger::AuditReport, EngineError> {
        Ok(self.inner.ledger.audit_chain(from, to)?)
    }

    pub fn block_proof(
        &self,
        height: u64,
    ) -> Result<(LedgerBlock, Vec<BlockHeader>), EngineError> {
        Ok(self.inner.ledger.block_proof(height)?)
    }

    pub fn header(&self, height: u64) -> Result<BlockHeader, EngineError> {
        Ok(self.inner.ledger.header(height)?)
    }

    pub fn headers_from(&self, from: u64) -> Result<Vec<BlockHeader>, EngineError> {
        Ok(self.inner.ledger.headers_from(from)?)
    }

    pub fn store_stats(&self) -> StoreStats {
        self.inner.store.stats()
    }

    /// Drops and rebuilds the inverted index from the authenticated index
    /// and cell store; returns the number of versions reindexed. The
    /// inverted index is a cache, so this is always safe.
    pub fn rebuild_secondary_index(&self) -> Result<u64, EngineError> {
        let inner = &*self.inner;
        let mut st = inner.state.lock().unwrap();
        let everything = st.tip.scan(&[], &[0xFF; 8])?;
        let mut fresh = InvertedIndex::new();
        let mut count = 0u64;
        for (k, d) in everything {
            let key = UniversalKey::decode(&k)?;
            let value = inner.store.get_value(d)?;
            fresh.index_put(&value, key)?;
            count += 1;
        }
        st.inverted = fresh;
        Ok(count)
    }

    /// Flushes the cell store (sync under strict durability, plus the
    /// sidecar index cache). The journal is synced at every seal already.
    pub fn flush(&self) -> Result<(), EngineError> {
        Ok(self.inner.store.flush()?)
    }
}

impl Transaction {
    pub fn begin_ts(&self) -> u64 {
        self.begin_ts
    }

    /// What this transaction has read so far: `(column, primary key,
    /// version timestamp seen)`.
    pub fn read_set(&self) -> &[(String, Vec<u8>, Option<u64>)] {
        &self.reads
    }

    /// Snapshot read at `begin_ts`, after this transaction's own buffered
    /// writes. Returns `None` for never-written or deleted keys.
    pub fn get(
        &mut self,
        column: &str,
        primary_key: &[u8],
    ) -> Result<Option<CellValue>, EngineError> {
        self.check_active()?;
        for (c, pk, value) in self.writes.iter().rev() {
            if c == column && pk == primary_key {
                return Ok(match value {
                    CellValue::Tombstone => None,
                    v => Some(v.clone()),
                });
            }
        }
        let tip = {
            let st = self.engine.state.lock().unwrap();
            st.tip.clone()
        };
        let (low, high) = version_interval(column, primary_key, 0, self.begin_ts);
        let versions = tip.scan(&low, &high)?;
        let newest = versions.last();
        let seen_ts = match newest {
            Some((k, _)) => Some(UniversalKey::decode(k)?.timestamp),
            None => None,
        };
        self.reads
            .push((column.to_string(), primary_key.to_vec(), seen_ts));
        match newest {
            Some((_, digest)) => {
                let value = self.engine.store.get_value(*digest)?;
                Ok(match value {
                    CellValue::Tombstone => None,
                    v => Some(v),
                })
            }
            None => Ok(None),
        }
    }

    /// Buffers a write; nothing is visible outside this transaction until
    /// commit. The value's kind must agree with what the column already
    /// holds.
    pub fn put(
        &mut self,
        column: &str,
        primary_key: &[u8],
        value: CellValue,
    ) -> Result<(), EngineError> {
        self.check_active()?;
        // Validate key limits eagerly so commit cannot fail on shape.
        UniversalKey::new(column, primary_key, 1, value.value_hash())?;
        if !value.is_tombstone() {
            let declared = {
                let st = self.engine.state.lock().unwrap();
                st.inverted.column_kind(column)
            };
            let effective = self
                .writes
                .iter()
                .rev()
                .find(|(c, _, v)| c == column && !v.is_tombstone())
                .map(|(_, _, v)| v.kind())
                .or(declared);
            if let Some(expected) = effective {
                if expected != value.kind() && expected != ValueKind::Tombstone {
                    return Err(EngineError::KindMismatch {
                        column: column.to_string(),
                        expected,
                        got: value.kind(),
                    });
                }
            }
        }
        self.statements.push(format!(
            "{} {}/{}",
            if value.is_tombstone() { "delete" } else { "put" },
            column,
            String::from_utf8_lossy(primary_key),
        ));
        self.writes
            .push((column.to_string(), primary_key.to_vec(), value));
        Ok(())
    }

    pub fn delete(&mut self, column: &str, primary_key: &[u8]) -> Result<(), EngineError> {
        self.put(column, primary_key, CellValue::Tombstone)
    }

    pub fn abort(&mut self) {
        self.state = TxnState::Aborted;
        self.writes.clear();
    }

    /// Validates, applies, and seals. On success the receipt carries the
    /// commit timestamp, the sealed block, and one membership proof per
    /// write. On conflict the transaction is aborted and the error is
    /// retryable with a fresh transaction.
    pub fn commit(&mut self) -> Result<CommitReceipt, EngineError> {
        self.check_active()?;
        let inner = Arc::clone(&self.engine);
        let mut st = inner.state.lock().unwrap();

        // Timestamp-ordering validation over everything touched.
        for (column, pk) in self
            .reads
            .iter()
            .map(|(c, p, _)| (c, p))
            .chain(self.writes.iter().map(|(c, p, _)| (c, p)))
        {
            if let Some(&ts) = st.latest_committed.get(&(column.clone(), pk.clone())) {
                if ts > self.begin_ts {
                    self.state = TxnState::Aborted;
                    return Err(EngineError::ConflictAbort {
                        key: format!("{column}/{}", String::from_utf8_lossy(pk)),
                        committed_ts: ts,
                        begin_ts: self.begin_ts,
                    });
                }
            }
        }
        // Re-check value kinds against the live index: a concurrent commit
        // may have fixed a column's kind since txn_put ran.
        for (column, _, value) in &self.writes {
            if value.is_tombstone() {
                continue;
            }
            if let Some(expected) = st.inverted.column_kind(column) {
                if expected != value.kind() && expected != ValueKind::Tombstone {
                    self.state = TxnState::Aborted;
                    return Err(EngineError::ConflictAbort {
                        key: format!("{column} (kind changed concurrently)"),
                        committed_ts: 0,
                        begin_ts: self.begin_ts,
                    });
                }
            }
        }

        let commit_ts = inner.clock.fetch_add(1, Ordering::SeqCst);
        let mut ops = Vec::with_capacity(self.writes.len());
        for (column, pk, value) in self.writes.drain(..) {
            let value_hash = inner.store.put_value(&value)?;
            let key = UniversalKey::new(column.as_str(), pk.as_slice(), commit_ts, value_hash)?;
            st.tip = st.tip.insert(&key.encode(), value_hash)?;
            st.inverted.index_put(&value, key.clone())?;
            st.latest_committed.insert((column, pk), commit_ts);
            ops.push(TxnOp {
                kind: if value.is_tombstone() {
                    OpKind::Delete
                } else {
                    OpKind::Put
                },
                key,
            });
        }
        let written: Vec<UniversalKey> = ops.iter().map(|op| op.key.clone()).collect();
        st.pending.push(TxnRecord {
            txn_id: commit_ts,
            ops,
        });
        st.pending_statements.append(&mut self.statements);
        if st.pending_first.is_none() {
            st.pending_first = Some(Instant::now());
        }

        // Group commit: seal if the batch is full or the window has passed,
        // otherwise park until another committer (or a reader) seals for us.
        let height = loop {
            if let Some(h) = st.sealed_heights.remove(&commit_ts) {
                break h;
            }
            let deadline = st.pending_first.expect("pending while parked")
                + Duration::from_millis(inner.config.seal_max_ms);
            let now = Instant::now();
            if st.pending.len() >= inner.config.seal_max_txns || now >= deadline {
                seal_locked(&inner, &mut st)?;
                break st
                    .sealed_heights
                    .remove(&commit_ts)
                    .expect("sealing assigns every pending txn a height");
            }
            let (guard, _) = inner
                .sealed_cv
                .wait_timeout(st, deadline - now)
                .unwrap();
            st = guard;
        };
        let sealed = st
            .recent
            .iter()
            .rev()
            .find(|s| s.height == height)
            .cloned()
            .expect("sealed tip retained for recent blocks");
        drop(st);

        self.state = TxnState::Committed;
        let proofs = written
            .into_iter()
            .map(|key| {
                let proof = sealed.snapshot.prove_point(&key.encode());
                (key, proof)
            })
            .collect();
        Ok(CommitReceipt {
            commit_ts,
            block_height: height,
            block_hash: sealed.header.block_hash(),
            proofs,
        })
    }

    fn check_active(&self) -> Result<(), EngineError> {
        if self.state == TxnState::Active {
            Ok(())
        } else {
            Err(EngineError::TxnNotActive)
        }
    }
}

/// Seals the pending batch into a block: cell-store data is synced first
/// (the block is the durability point, so its data must already be stable),
/// then the block is appended and every parked committer learns its height.
fn seal_locked(inner: &Inner, st: &mut MutexGuard<'_, State>) -> Result<(), EngineError> {
    let records = std::mem::take(&mut st.pending);
    let statements = std::mem::take(&mut st.pending_statements);
    st.pending_first = None;
    inner.store.sync_log()?;
    let block = inner
        .ledger
        .seal_block(records, statements, st.tip.root_hash(), false)?;
    let height = block.header.height;
    for record in &block.records {
        st.sealed_heights.insert(record.txn_id, height);
        st.sealed_through = st.sealed_through.max(record.txn_id);
    }
    let sealed_tip = Arc::new(SealedTip {
        height,
        header: block.header,
        snapshot: st.tip.clone(),
    });
    st.recent.push_back(sealed_tip);
    if st.recent.len() > RECENT_SEALS {
        st.recent.pop_front();
    }
    inner.sealed_cv.notify_all();
    Ok(())
}

/// Key-space interval holding every version of `(column, primary_key)` with
/// timestamp in `[lo, hi]`, inclusive. The upper bound appends a sentinel
/// longer than any value hash so keys at exactly `hi` are included.
pub fn version_interval(
    column: &str,
    primary_key: &[u8],
    lo: u64,
    hi: u64,
) -> (Vec<u8>, Vec<u8>) {
    let low = UniversalKey::encode_bound(column, primary_key, lo);
    let mut high = UniversalKey::encode_bound(column, primary_key, hi);
    high.extend_from_slice(&[0xFF; 33]);
    (low, high)
}

/// Latest-version resolution over one key's scanned versions (ascending):
/// the newest is the current one; tombstones mean "no row".
fn newest_visible(
    inner: &Inner,
    versions: &[(Vec<u8>, Digest)],
) -> Result<Option<QueryRow>, EngineError> {
    match versions.last() {
        None => Ok(None),
        Some((k, d)) => {
            let value = inner.store.get_value(*d)?;
            if value.is_tombstone() {
                Ok(None)
            } else {
                Ok(Some(QueryRow {
                    key: UniversalKey::decode(k)?,
                    value,
                }))
            }
        }
    }
}

/// Same, but the scan may include versions past the cutoff (range queries
/// scan whole key groups): pick the newest at or below it.
fn newest_visible_at(
    inner: &Inner,
    versions: &[(Vec<u8>, Digest)],
    cutoff: u64,
) -> Result<Option<QueryRow>, EngineError> {
    let mut newest: Option<&(Vec<u8>, Digest)> = None;
    for entry in versions {
        let ts = UniversalKey::decode(&entry.0)?.timestamp;
        if ts <= cutoff {
            newest = Some(entry);
        }
    }
    match newest {
        None => Ok(None),
        Some((k, d)) => {
            let value = inner.store.get_value(*d)?;
            if value.is_tombstone() {
                Ok(None)
            } else {
                Ok(Some(QueryRow {
                    key: UniversalKey::decode(k)?,
                    value,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merkle::ProofClaim;

    fn test_config() -> EngineConfig {
        EngineConfig {
            seal_max_ms: 0, // seal every commit immediately: deterministic
            durability: Durability::Buffered,
            ..EngineConfig::default()
        }
    }

    fn open_engine(dir: &Path) -> Engine {
        Engine::open(dir, test_config()).unwrap()
    }

    fn int(v: i64) -> CellValue {
        CellValue::Int64(v)
    }

    #[test]
    fn fresh_engine_starts_its_clock_at_one() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let t1 = engine.begin();
        let t2 = engine.begin();
        assert_eq!(t1.begin_ts(), 1);
        assert!(t2.begin_ts() > t1.begin_ts());
        // Genesis exists before any commit.
        assert_eq!(engine.commitment().unwrap().height, 0);
    }

    #[test]
    fn reads_see_own_writes_and_deletes() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut txn = engine.begin();
        assert_eq!(txn.get("acct", b"a").unwrap(), None);
        txn.put("acct", b"a", int(5)).unwrap();
        assert_eq!(txn.get("acct", b"a").unwrap(), Some(int(5)));
        txn.put("acct", b"a", int(6)).unwrap();
        assert_eq!(txn.get("acct", b"a").unwrap(), Some(int(6)));
        txn.delete("acct", b"a").unwrap();
        assert_eq!(txn.get("acct", b"a").unwrap(), None);
    }

    #[test]
    fn snapshot_isolation_hides_later_commits() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("acct", b"x", int(1)).unwrap();

        let mut t1 = engine.begin();
        // A newer commit lands after t1 began.
        engine.put("acct", b"x", int(2)).unwrap();
        assert_eq!(t1.get("acct", b"x").unwrap(), Some(int(1)));
    }

    #[test]
    fn read_write_conflicts_abort() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("acct", b"x", int(1)).unwrap();

        let mut t1 = engine.begin();
        t1.get("acct", b"x").unwrap();
        engine.put("acct", b"x", int(2)).unwrap(); // concurrent writer wins
        t1.put("acct", b"y", int(9)).unwrap();
        let err = t1.commit().unwrap_err();
        assert!(matches!(err, EngineError::ConflictAbort { .. }), "{err}");
        // The aborted write never became visible.
        let mut probe = engine.begin();
        assert_eq!(probe.get("acct", b"y").unwrap(), None);
    }

    #[test]
    fn write_write_conflicts_abort_first_committer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut t1 = engine.begin();
        let mut t2 = engine.begin();
        t1.put("acct", b"x", int(1)).unwrap();
        t2.put("acct", b"x", int(2)).unwrap();
        t2.commit().unwrap();
        assert!(matches!(
            t1.commit().unwrap_err(),
            EngineError::ConflictAbort { .. }
        ));
        let mut probe = engine.begin();
        assert_eq!(probe.get("acct", b"x").unwrap(), Some(int(2)));
    }

    #[test]
    fn disjoint_writers_both_commit() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut t1 = engine.begin();
        let mut t2 = engine.begin();
        t1.put("acct", b"a", int(1)).unwrap();
        t2.put("acct", b"b", int(2)).unwrap();
        let r1 = t1.commit().unwrap();
        let r2 = t2.commit().unwrap();
        assert!(r2.commit_ts > r1.commit_ts);
    }

    #[test]
    fn finished_transactions_reject_further_use() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut txn = engine.begin();
        txn.put("acct", b"a", int(1)).unwrap();
        txn.commit().unwrap();
        assert!(matches!(
            txn.put("acct", b"b", int(2)),
            Err(EngineError::TxnNotActive)
        ));
        assert!(matches!(txn.commit(), Err(EngineError::TxnNotActive)));

        let mut aborted = engine.begin();
        aborted.abort();
        assert!(matches!(
            aborted.get("acct", b"a"),
            Err(EngineError::TxnNotActive)
        ));
    }

    #[test]
    fn aborted_transactions_touch_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("acct", b"x", int(1)).unwrap();
        let before = engine.store_stats();
        let tip_before = engine.commitment().unwrap();

        let mut txn = engine.begin();
        txn.put("blob", b"ghost", CellValue::Bytes(vec![7u8; 50_000])).unwrap();
        txn.abort();

        assert_eq!(engine.store_stats().physical_size, before.physical_size);
        assert_eq!(engine.commitment().unwrap(), tip_before);
        let mut probe = engine.begin();
        assert_eq!(probe.get("blob", b"ghost").unwrap(), None);
    }

    #[test]
    fn empty_transactions_commit_with_zero_ops() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut txn = engine.begin();
        let receipt = txn.commit().unwrap();
        assert!(receipt.proofs.is_empty());
        let (block, _) = engine.block_proof(receipt.block_height).unwrap();
        let record = block
            .records
            .iter()
            .find(|r| r.txn_id == receipt.commit_ts)
            .unwrap();
        assert!(record.ops.is_empty());
    }

    #[test]
    fn commit_receipts_prove_each_write_against_the_sealed_block() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut txn = engine.begin();
        txn.put("acct", b"a", int(10)).unwrap();
        txn.put("note", b"b", CellValue::Utf8("hi".into())).unwrap();
        let receipt = txn.commit().unwrap();

        let header = engine.header(receipt.block_height).unwrap();
        assert_eq!(header.block_hash(), receipt.block_hash);
        assert_eq!(receipt.proofs.len(), 2);
        for (key, proof) in &receipt.proofs {
            assert_eq!(proof.root, header.index_root);
            match proof.check().unwrap() {
                ProofClaim::Membership { key: k, value_hash } => {
                    assert_eq!(k, key.encode());
                    assert_eq!(value_hash, key.value_hash);
                }
                other => panic!("expected membership, got {other:?}"),
            }
        }
        // The block's ts_range brackets the commit.
        assert!(header.ts_range.0 <= receipt.commit_ts);
        assert!(receipt.commit_ts <= header.ts_range.1);
    }

    #[test]
    fn kind_mismatch_is_caught_at_put_time() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("age", b"alice", int(30)).unwrap();
        let mut txn = engine.begin();
        assert!(matches!(
            txn.put("age", b"bob", CellValue::Utf8("x".into())),
            Err(EngineError::KindMismatch { .. })
        ));
        // Within one transaction too.
        let mut txn = engine.begin();
        txn.put("fresh", b"a", int(1)).unwrap();
        assert!(matches!(
            txn.put("fresh", b"b", CellValue::Utf8("x".into())),
            Err(EngineError::KindMismatch { .. })
        ));
        // Deletes are exempt.
        let mut txn = engine.begin();
        txn.delete("age", b"alice").unwrap();
        txn.commit().unwrap();
    }

    fn point(column: &str, pk: &[u8]) -> ReadRequest {
        ReadRequest::Point {
            column: column.into(),
            primary_key: pk.into(),
        }
    }

    #[test]
    fn point_reads_return_verifying_proofs() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("acct", b"alice", int(100)).unwrap();
        engine.put("acct", b"bob", int(200)).unwrap();

        let resp = engine.read_query(&point("acct", b"alice"), None, None).unwrap();
        assert_eq!(resp.rows.len(), 1);
        assert_eq!(resp.rows[0].value, int(100));
        assert_eq!(resp.proofs.len(), 1);
        let proof = &resp.proofs[0];
        assert_eq!(proof.root, resp.block.index_root);
        let claim = proof.check().unwrap();
        match claim {
            ProofClaim::Range { entries, .. } => {
                assert_eq!(entries.len(), 1);
                assert_eq!(entries[0].0, resp.rows[0].key.encode());
            }
            other => panic!("expected range claim, got {other:?}"),
        }
        // Chain update from scratch covers genesis to tip.
        assert_eq!(resp.chain.len() as u64, resp.commitment.height + 1);

        // Absent key: empty rows, and the proof proves the absence.
        let resp = engine.read_query(&point("acct", b"carol"), None, None).unwrap();
        assert!(resp.rows.is_empty());
        match resp.proofs[0].check().unwrap() {
            ProofClaim::Range { entries, .. } => assert!(entries.is_empty()),
            other => panic!("expected empty range claim, got {other:?}"),
        }
    }

    #[test]
    fn deleted_rows_read_as_absent_but_history_keeps_them() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("doc", b"d1", CellValue::Utf8("v1".into())).unwrap();
        engine.put("doc", b"d1", CellValue::Utf8("v2".into())).unwrap();
        engine.put("doc", b"d1", CellValue::Utf8("v3".into())).unwrap();
        engine.delete("doc", b"d1").unwrap();

        let resp = engine.read_query(&point("doc", b"d1"), None, None).unwrap();
        assert!(resp.rows.is_empty());

        let hist = engine
            .read_query(
                &ReadRequest::History {
                    column: "doc".into(),
                    primary_key: b"d1".to_vec(),
                },
                None,
                None,
            )
            .unwrap();
        assert_eq!(hist.rows.len(), 4);
        let timestamps: Vec<u64> = hist.rows.iter().map(|r| r.key.timestamp).collect();
        assert!(timestamps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(hist.rows.last().unwrap().value, CellValue::Tombstone);
    }

    #[test]
    fn as_of_reads_replay_the_past() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let r1 = engine.put("acct", b"x", int(1)).unwrap();
        let r2 = engine.put("acct", b"x", int(2)).unwrap();

        let old = engine
            .read_query(&point("acct", b"x"), Some(r1.commit_ts), None)
            .unwrap();
        assert_eq!(old.rows[0].value, int(1));
        let mid = engine
            .read_query(&point("acct", b"x"), Some(r2.commit_ts - 1), None)
            .unwrap();
        assert_eq!(mid.rows[0].value, int(1));
        let new = engine
            .read_query(&point("acct", b"x"), Some(r2.commit_ts), None)
            .unwrap();
        assert_eq!(new.rows[0].value, int(2));

        let before = engine
            .read_query(&point("acct", b"x"), Some(r1.commit_ts - 1), None)
            .unwrap();
        assert!(before.rows.is_empty());

        let err = engine
            .read_query(&point("acct", b"x"), Some(r2.commit_ts + 1000), None)
            .unwrap_err();
        assert!(matches!(err, EngineError::FutureTimestamp { .. }));
    }

    #[test]
    fn range_reads_resolve_latest_per_key() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        for (pk, v) in [(b"k1", 1i64), (b"k2", 2), (b"k3", 3), (b"k5", 5)] {
            engine.put("m", pk, int(v)).unwrap();
        }
        let overwrite = engine.put("m", b"k2", int(22)).unwrap();
        engine.delete("m", b"k3").unwrap();

        let resp = engine
            .read_query(
                &ReadRequest::Range {
                    column: "m".into(),
                    low: b"k1".to_vec(),
                    high: b"k4".to_vec(),
                },
                None,
                None,
            )
            .unwrap();
        let got: Vec<(Vec<u8>, CellValue)> = resp
            .rows
            .iter()
            .map(|r| (r.key.primary_key.clone(), r.value.clone()))
            .collect();
        assert_eq!(
            got,
            vec![(b"k1".to_vec(), int(1)), (b"k2".to_vec(), int(22))]
        );

        // As of just before the overwrite, k2 is still 2 and k3 alive.
        let resp = engine
            .read_query(
                &ReadRequest::Range {
                    column: "m".into(),
                    low: b"k1".to_vec(),
                    high: b"k4".to_vec(),
                },
                Some(overwrite.commit_ts - 1),
                None,
            )
            .unwrap();
        let got: Vec<(Vec<u8>, CellValue)> = resp
            .rows
            .iter()
            .map(|r| (r.key.primary_key.clone(), r.value.clone()))
            .collect();
        assert_eq!(
            got,
            vec![
                (b"k1".to_vec(), int(1)),
                (b"k2".to_vec(), int(2)),
                (b"k3".to_vec(), int(3)),
            ]
        );

        // The proof-free paths must agree with the proving ones, at latest
        // and at historical cutoffs.
        for as_of in [None, Some(overwrite.commit_ts - 1)] {
            let proving = engine
                .read_query(
                    &ReadRequest::Range {
                        column: "m".into(),
                        low: b"k1".to_vec(),
                        high: b"k4".to_vec(),
                    },
                    as_of,
                    None,
                )
                .unwrap();
            let plain = engine.scan_latest("m", b"k1", b"k4", as_of).unwrap();
            assert_eq!(plain, proving.rows);
            for row in &proving.rows {
                let got = engine
                    .get_latest("m", &row.key.primary_key, as_of)
                    .unwrap()
                    .unwrap();
                assert_eq!(&got, row);
            }
        }
        assert!(engine.get_latest("m", b"k3", None).unwrap().is_none());
        assert!(engine.get_latest("m", b"zzz", None).unwrap().is_none());

        assert!(matches!(
            engine.read_query(
                &ReadRequest::Range {
                    column: "m".into(),
                    low: b"z".to_vec(),
                    high: b"a".to_vec(),
                },
                None,
                None,
            ),
            Err(EngineError::InvalidRange(_))
        ));
    }

    #[test]
    fn value_queries_bridge_to_membership_proofs() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        engine.put("age", b"alice", int(30)).unwrap();
        engine.put("age", b"bob", int(30)).unwrap();
        engine.put("age", b"carol", int(40)).unwrap();
        engine.put("age", b"bob", int(31)).unwrap(); // bob moves on

        let resp = engine
            .read_query(
                &ReadRequest::ValueEq {
                    column: "age".into(),
                    value: int(30),
                },
                None,
                None,
            )
            .unwrap();
        assert_eq!(resp.rows.len(), 1);
        assert_eq!(resp.rows[0].key.primary_key, b"alice");
        assert_eq!(resp.proofs.len(), 1);
        for (row, proof) in resp.rows.iter().zip(&resp.proofs) {
            assert_eq!(proof.root, resp.block.index_root);
            match proof.check().unwrap() {
                ProofClaim::Membership { key, value_hash } => {
                    assert_eq!(key, row.key.encode());
                    assert_eq!(value_hash, row.value.value_hash());
                }
                other => panic!("expected membership, got {other:?}"),
            }
        }

        let resp = engine
            .read_query(
                &ReadRequest::ValueRange {
                    column: "age".into(),
                    low: int(30),
                    high: int(40),
                },
                None,
                None,
            )
            .unwrap();
        let pks: Vec<&[u8]> = resp.rows.iter().map(|r| r.key.primary_key.as_slice()).collect();
        assert_eq!(pks, vec![b"alice".as_slice(), b"bob", b"carol"]);
        assert_eq!(resp.proofs.len(), 3);

        assert!(matches!(
            engine.read_query(
                &ReadRequest::ValueEq {
                    column: "salary".into(),
                    value: int(1),
                },
                None,
                None,
            ),
            Err(EngineError::UnknownColumn(_))
        ));
    }

    #[test]
    fn restart_recovers_state_and_resumes_the_clock() {
        let dir = tempfile::tempdir().unwrap();
        let (tip, last_ts) = {
            let engine = open_engine(dir.path());
            engine.put("acct", b"a", int(1)).unwrap();
            engine.put("name", b"b", CellValue::Utf8("two".into())).unwrap();
            engine.delete("acct", b"a").unwrap();
            let r = engine.put("acct", b"c", int(3)).unwrap();
            engine.flush().unwrap();
            (engine.commitment().unwrap(), r.commit_ts)
        };

        let engine = open_engine(dir.path());
        assert_eq!(engine.commitment().unwrap(), tip);
        let mut probe = engine.begin();
        assert!(probe.begin_ts() > last_ts, "clock must resume above {last_ts}");
        assert_eq!(probe.get("acct", b"a").unwrap(), None);
        assert_eq!(
            probe.get("name", b"b").unwrap(),
            Some(CellValue::Utf8("two".into()))
        );
        assert_eq!(probe.get("acct", b"c").unwrap(), Some(int(3)));

        // The inverted index was rebuilt during replay.
        let resp = engine
            .read_query(
                &ReadRequest::ValueEq {
                    column: "acct".into(),
                    value: int(3),
                },
                None,
                None,
            )
            .unwrap();
        assert_eq!(resp.rows.len(), 1);

        // New commits keep extending the same chain.
        let r = engine.put("acct", b"d", int(4)).unwrap();
        assert_eq!(r.block_height, tip.height + 1);
    }

    #[test]
    fn recovery_rejects_a_journal_whose_roots_do_not_replay() {
        let dir = tempfile::tempdir().unwrap();
        {
            // Build a journal by hand whose sealed root is bogus: the blocks
            // chain correctly, but replay cannot reproduce the claimed root.
            let store = CellStore::open(dir.path(), ChunkerParams::default(), Durability::Buffered)
                .unwrap();
            let value = int(1);
            let vh = store.put_value(&value).unwrap();
            store.flush().unwrap();
            let ledger = Ledger::open(dir.path(), Durability::Buffered).unwrap();
            ledger
                .seal_block(Vec::new(), Vec::new(), Snapshot::empty().root_hash(), true)
                .unwrap();
            let key = UniversalKey::new("acct", b"a", 2, vh).unwrap();
            ledger
                .seal_block(
                    vec![TxnRecord {
                        txn_id: 2,
                        ops: vec![TxnOp {
                            kind: OpKind::Put,
                            key,
                        }],
                    }],
                    vec!["put acct/a".into()],
                    crate::codec::hash_bytes(b"not the real root"),
                    false,
                )
                .unwrap();
        }
        let err = match Engine::open(dir.path(), test_config()) {
            Ok(_) => panic!("replay should reject the bogus root"),
            Err(e) => e,
        };
        assert!(
            matches!(err, EngineError::Recovery { height: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn rebuilding_the_secondary_index_preserves_answers() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        for i in 0..40i64 {
            engine
                .put("n", format!("k{i:02}").as_bytes(), int(i % 5))
                .unwrap();
        }
        let before = engine
            .read_query(
                &ReadRequest::ValueEq {
                    column: "n".into(),
                    value: int(3),
                },
                None,
                None,
            )
            .unwrap();
        let count = engine.rebuild_secondary_index().unwrap();
        assert_eq!(count, 40);
        let after = engine
            .read_query(
                &ReadRequest::ValueEq {
                    column: "n".into(),
                    value: int(3),
                },
                None,
                None,
            )
            .unwrap();
        assert_eq!(before.rows, after.rows);
    }

    #[test]
    fn concurrent_begins_are_unique() {
        let dir = tempfile::tempdir().unwrap();
        let engine = open_engine(dir.path());
        let mut handles = Vec::new();
        for _ in 0..8 {
            let engine = engine.clone();
            handles.push(std::thread::spawn(move || {
                (0..125).map(|_| engine.begin().begin_ts()).collect::<Vec<u64>>()
            }));
        }
        let mut all: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort_unstable();
        let len = all.len();
        all.dedup();
        assert_eq!(all.len(), len, "all 1000 begin timestamps are distinct");
    }

    #[test]
    fn concurrent_commits_share_blocks_under_the_seal_window() {
        let dir = tempfile::tempdir().unwrap();
        let engine = Engine::open(
            dir.path(),
            EngineConfig {
                seal_max_ms: 40,
                durability: Durability::Buffered,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        let mut handles = Vec::new();
        for i in 0..4u64 {
            let engine = engine.clone();
            handles.push(std::thread::spawn(move || {
                let mut txn = engine.begin();
                txn.put("c", format!("k{i}").as_bytes(), int(i as i64)).unwrap();
                txn.commit().unwrap()
            }));
        }
        let receipts: Vec<CommitReceipt> =
            handles.into_iter().map(|h| h.join().unwrap()).collect();
        // All four committed; whatever the block assignment, each receipt's
        // proof verifies and total records across their blocks cover all 4.
        let mut heights: Vec<u64> = receipts.iter().map(|r| r.block_height).collect();
        heights.sort_unstable();
        heights.dedup();
        let total: usize = heights
            .iter()
            .map(|&h| engine.block_proof(h).unwrap().0.records.len())
            .sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn a_read_seals_parked_commits_promptly() {
        let dir = tempfile::tempdir().unwrap();
        let engine = Engine::open(
            dir.path(),
            EngineConfig {
                seal_max_ms: 10_000, // would park for 10s without a reader
                durability: Durability::Buffered,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        let started = Instant::now();
        let committer = {
            let engine = engine.clone();
            std::thread::spawn(move || {
                let mut txn = engine.begin();
                txn.put("c", b"k", int(1)).unwrap();
                txn.commit().unwrap()
            })
        };
        std::thread::sleep(Duration::from_millis(50));
        let resp = engine.read_query(&point("c", b"k"), None, None).unwrap();
        assert_eq!(resp.rows.len(), 1);
        let receipt = committer.join().unwrap();
        assert!(
            started.elapsed() < Duration::from_secs(5),
            "reader must have sealed the parked commit"
        );
        assert_eq!(receipt.block_height, resp.commitment.height);
    }
}
