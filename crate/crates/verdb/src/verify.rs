//! Client-side verification: proofs are replayed, roots are checked against
//! block headers, headers against the hash chain, the chain against the
//! locally persisted trust anchor, and returned values against their proven
//! hashes. Nothing the server sends is taken on faith; the only trusted
//! state is the anchor.
//!
//! Verification of one response runs five layers, each with its own failure
//! reason so tests (and operators) can tell which link was tampered with:
//!
//! 1. every Merkle proof must replay to its claimed root, and the claim must
//!    be the one the original request implies ([`VerifyFailure::ProofMismatch`]);
//! 2. that root must be the `index_root` sealed in the referenced block
//!    ([`VerifyFailure::RootNotInBlock`]);
//! 3. the block must hash to the chain commitment, and the commitment must
//!    be reachable from the anchor through a valid header segment
//!    ([`VerifyFailure::ChainBreak`]);
//! 4. the commitment must not sit below the anchor — a lower height is a
//!    rollback ([`VerifyFailure::AnchorRegression`]);
//! 5. every returned value must hash to the digest the proof vouches for
//!    ([`VerifyFailure::ValueHashMismatch`]).
//!
//! On success the anchor advances and is persisted. Deferred mode batches
//! jobs and verifies them together, memoizing header hashes so a segment
//! shared by many responses is hashed once per batch instead of once per
//! job.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::{hash_bytes, CellValue, Digest, UniversalKey};
use crate::engine::{version_interval, QueryResponse, ReadRequest};
use crate::ledger::{BlockHeader, ChainCommitment};
use crate::merkle::{ProofClaim, ProofKind};

/// Why a response was rejected. Closed set: each reason names the layer
/// where tampering was detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum VerifyFailure {
    #[error("a proof does not replay to its root or does not match the request")]
    ProofMismatch,
    #[error("proof root is not the index root sealed in the referenced block")]
    RootNotInBlock,
    #[error("block headers do not link to the commitment or to the anchor")]
    ChainBreak,
    #[error("commitment height is below the trusted anchor")]
    AnchorRegression,
    #[error("a returned value does not hash to its proven digest")]
    ValueHashMismatch,
}

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("anchor file is corrupt; refusing to verify until re-anchored")]
    Corrupt,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const ANCHOR_MAGIC: &[u8; 4] = b"ANCR";

/// The client's persisted view of the chain: the highest verified
/// commitment, checksummed on disk so silent file damage is detected rather
/// than silently re-trusted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrustAnchor {
    pub commitment: ChainCommitment,
}

impl TrustAnchor {
    fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 + 32 + 32);
        out.extend_from_slice(ANCHOR_MAGIC);
        out.extend_from_slice(&self.commitment.height.to_be_bytes());
        out.extend_from_slice(&self.commitment.tip_hash.0);
        let checksum = hash_bytes(&out);
        out.extend_from_slice(&checksum.0);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<TrustAnchor, AnchorError> {
        if bytes.len() != 4 + 8 + 32 + 32 {
            return Err(AnchorError::Corrupt);
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if hash_bytes(body).0 != checksum || &body[..4] != ANCHOR_MAGIC {
            return Err(AnchorError::Corrupt);
        }
        Ok(TrustAnchor {
            commitment: ChainCommitment {
                height: u64::from_be_bytes(body[4..12].try_into().unwrap()),
                tip_hash: Digest(body[12..44].try_into().unwrap()),
            },
        })
    }
}

/// One deferred verification job: the request as issued, and the response
/// as received.
pub struct VerificationJob {
    pub request: ReadRequest,
    pub as_of: Option<u64>,
    pub response: QueryResponse,
}

/// A client-session verifier. Holds the trust anchor (optionally persisted
/// to a file) and checks responses against it.
pub struct Verifier {
    anchor: Option<TrustAnchor>,
    path: Option<PathBuf>,
}

impl Verifier {
    /// Anchorless in-memory verifier: the first verified response becomes
    /// the anchor (trust on first use).
    pub fn in_memory() -> Verifier {
        Verifier {
            anchor: None,
            path: None,
        }
    }

    /// Loads the anchor from `path` if it exists. A structurally damaged
    /// anchor file is an error — verification must not proceed from silently
    /// reset trust.
    pub fn with_anchor_file(path: &Path) -> Result<Verifier, AnchorError> {
        let anchor = match std::fs::read(path) {
            Ok(bytes) => Some(TrustAnchor::from_bytes(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Verifier {
            anchor,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn anchor(&self) -> Option<ChainCommitment> {
        self.anchor.map(|a| a.commitment)
    }

    /// Explicit operator action: forget the anchor (e.g. after a verified
    /// restore). The next verified response re-anchors.
    pub fn reset_anchor(&mut self) -> Result<(), AnchorError> {
        self.anchor = None;
        if let Some(path) = &self.path {
            match std::fs::remove_file(path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    /// Verifies one response end to end and, on success, advances (and
    /// persists) the anchor.
    pub fn verify_response(
        &mut self,
        request: &ReadRequest,
        as_of: Option<u64>,
        response: &QueryResponse,
    ) -> Result<(), VerifyFailure> {
        let mut memo = HeaderHashMemo::default();
        let outcome = verify_against(self.anchor, request, as_of, response, &mut memo);
        if outcome.is_ok() {
            self.advance(response.commitment);
        }
        outcome
    }

    /// Verifies a batch, sharing header hashing across jobs. Outcomes are
    /// per job, in order; one bad job never blocks the rest. The anchor
    /// advances over the verified jobs exactly as sequential calls would.
    pub fn verify_batch(
        &mut self,
        jobs: &[VerificationJob],
    ) -> Vec<Result<(), VerifyFailure>> {
        let mut memo = HeaderHashMemo::default();
        let mut outcomes = Vec::with_capacity(jobs.len());
        for job in jobs {
            let outcome = verify_against(
                self.anchor,
                &job.request,
                job.as_of,
                &job.response,
                &mut memo,
            );
            if outcome.is_ok() {
                self.advance(job.response.commitment);
            }
            outcomes.push(outcome);
        }
        outcomes
    }

    /// Validates a data-free chain extension — headers `(anchor, tip]`
    /// fetched without attaching a query — and advances the anchor to
    /// `commitment`. An un-anchored verifier demands the full chain from
    /// genesis, exactly as trust-on-first-use response verification does.
    pub fn extend_anchor(
        &mut self,
        commitment: &ChainCommitment,
        chain: &[BlockHeader],
    ) -> Result<(), VerifyFailure> {
        if let Some(anchor) = self.anchor {
            if commitment.height < anchor.commitment.height {
                return Err(VerifyFailure::AnchorRegression);
            }
        }
        let mut memo = HeaderHashMemo::default();
        check_segment(
            self.anchor.as_ref().map(|a| &a.commitment),
            commitment,
            chain,
            &mut memo,
        )?;
        self.advance(*commitment);
        Ok(())
    }

    fn advance(&mut self, commitment: ChainCommitment) {
        let advanced = match self.anchor {
            Some(a) if a.commitment.height >= commitment.height => return,
            _ => TrustAnchor { commitment },
        };
        self.anchor = Some(advanced);
        if let Some(path) = &self.path {
            // Best-effort atomic persist; a failed write keeps the old file,
            // which is safe (the anchor may only lag, never regress).
            let tmp = path.with_extension("anchor.tmp");
            if std::fs::write(&tmp, advanced.to_bytes()).is_ok() {
                let _ = std::fs::rename(&tmp, path);
            }
        }
    }
}

/// Memoized `block_hash` keyed by header content, so a batch hashes each
/// distinct header once no matter how many jobs share it.
#[derive(Default)]
struct HeaderHashMemo {
    by_content: HashMap<Vec<u8>, Digest>,
}

impl HeaderHashMemo {
    fn hash(&mut self, header: &BlockHeader) -> Digest {
        let key = header.to_bytes();
        *self
            .by_content
            .entry(key)
            .or_insert_with(|| header.block_hash())
    }
}

/// Links `chain` from `anchor` (or from genesis when there is none) up to
/// `commitment`: contiguous heights, each header's `prev_hash` naming the
/// running hash, and the walk landing exactly on the committed tip hash.
fn check_segment(
    anchor: Option<&ChainCommitment>,
    commitment: &ChainCommitment,
    chain: &[BlockHeader],
    memo: &mut HeaderHashMemo,
) -> Result<(), VerifyFailure> {
    match anchor {
        Some(a) if a.height == commitment.height => {
            if a.tip_hash != commitment.tip_hash {
                return Err(VerifyFailure::ChainBreak); // same-height fork
            }
        }
        Some(a) => {
            // Headers (anchor, tip] must link from the anchored hash.
            let from = a.height + 1;
            let expected_len = commitment.height - a.height;
            if chain.len() as u64 != expected_len {
                return Err(VerifyFailure::ChainBreak);
            }
            let mut running = a.tip_hash;
            for (i, header) in chain.iter().enumerate() {
                if header.height != from + i as u64 || header.prev_hash != running {
                    return Err(VerifyFailure::ChainBreak);
                }
                running = memo.hash(header);
            }
            if running != commitment.tip_hash {
                return Err(VerifyFailure::ChainBreak);
            }
        }
        None => {
            // Bootstrap: demand the full chain from genesis, so trust on
            // first use at least trusts an internally consistent history.
            if chain.len() as u64 != commitment.height + 1 {
                return Err(VerifyFailure::ChainBreak);
            }
            let mut running = Digest::ZERO;
            for (i, header) in chain.iter().enumerate() {
                if header.height != i as u64 || header.prev_hash != running {
                    return Err(VerifyFailure::ChainBreak);
                }
                running = memo.hash(header);
            }
            if running != commitment.tip_hash {
                return Err(VerifyFailure::ChainBreak);
            }
        }
    }
    Ok(())
}

fn verify_against(
    anchor: Option<TrustAnchor>,
    request: &ReadRequest,
    as_of: Option<u64>,
    response: &QueryResponse,
    memo: &mut HeaderHashMemo,
) -> Result<(), VerifyFailure> {
    // Layer 4 first: a rolled-back commitment fails fast, before any
    // expensive recomputation.
    if let Some(anchor) = anchor {
        if response.commitment.height < anchor.commitment.height {
            return Err(VerifyFailure::AnchorRegression);
        }
    }

    // Layer 3: the referenced block must hash to the commitment, and the
    // commitment must extend the anchor through a linked header segment.
    if response.block.height != response.commitment.height
        || memo.hash(&response.block) != response.commitment.tip_hash
    {
        return Err(VerifyFailure::ChainBreak);
    }
    check_segment(
        anchor.as_ref().map(|a| &a.commitment),
        &response.commitment,
        &response.chain,
        memo,
    )?;

    // Layer 2: every proof must target the root sealed in that block.
    for proof in &response.proofs {
        if proof.root != response.block.index_root {
            return Err(VerifyFailure::RootNotInBlock);
        }
    }

    // Layers 1 and 5: replay the proofs, bind the claims to the request,
    // derive the rows the claims imply, and hash-check the returned values.
    let cutoff = as_of.unwrap_or(u64::MAX);
    match request {
        ReadRequest::Point {
            column,
            primary_key,
        } => {
            let (low, high) = version_interval(column, primary_key, 0, cutoff);
            let entries = checked_range_claim(response, &low, &high)?;
            let expected = visible_versions(&entries, cutoff, false)
                .last()
                .cloned()
                .into_iter()
                .collect::<Vec<_>>();
            check_rows(response, &expected)
        }
        ReadRequest::Range { column, low, high } => {
            let (lo, _) = version_interval(column, low, 0, 0);
            let (_, hi) = version_interval(column, high, 0, u64::MAX);
            let entries = checked_range_claim(response, &lo, &hi)?;
            let mut expected = Vec::new();
            let mut group: Vec<(Vec<u8>, Digest)> = Vec::new();
            let mut group_pk: Option<Vec<u8>> = None;
            for (k, d) in &entries {
                let pk = UniversalKey::decode(k)
                    .map_err(|_| VerifyFailure::ProofMismatch)?
                    .primary_key;
                if group_pk.as_ref() != Some(&pk) {
                    expected.extend(visible_versions(&group, cutoff, false).last().cloned());
                    group.clear();
                    group_pk = Some(pk);
                }
                group.push((k.clone(), *d));
            }
            expected.extend(visible_versions(&group, cutoff, false).last().cloned());
            check_rows(response, &expected)
        }
        ReadRequest::History {
            column,
            primary_key,
        } => {
            let (low, high) = version_interval(column, primary_key, 0, u64::MAX);
            let entries = checked_range_claim(response, &low, &high)?;
            let expected = visible_versions(&entries, cutoff, true);
            check_rows(response, &expected)
        }
        ReadRequest::ValueEq { .. } | ReadRequest::ValueRange { .. } => {
            if response.proofs.len() != response.rows.len() {
                return Err(VerifyFailure::ProofMismatch);
            }
            for (row, proof) in response.rows.iter().zip(&response.proofs) {
                if proof.kind != ProofKind::Membership {
                    return Err(VerifyFailure::ProofMismatch);
                }
                let claim = proof.check().map_err(|_| VerifyFailure::ProofMismatch)?;
                let (key, value_hash) = match claim {
                    ProofClaim::Membership { key, value_hash } => (key, value_hash),
                    _ => return Err(VerifyFailure::ProofMismatch),
                };
                if key != row.key.encode() || row.key.timestamp > cutoff {
                    return Err(VerifyFailure::ProofMismatch);
                }
                if row.value.value_hash() != value_hash {
                    return Err(VerifyFailure::ValueHashMismatch);
                }
                // The value must actually satisfy the query; latest-version
                // selection itself is the unauthenticated cache's job, but a
                // wrong *value* is always detectable.
                let satisfies = match request {
                    ReadRequest::ValueEq { value, .. } => row.value == *value,
                    ReadRequest::ValueRange { low, high, .. } => {
                        let enc = row.value.canonical_encoding();
                        low.canonical_encoding() <= enc && enc <= high.canonical_encoding()
                    }
                    _ => unreachable!(),
                };
                if !satisfies {
                    return Err(VerifyFailure::ProofMismatch);
                }
            }
            Ok(())
        }
    }
}

/// Replays the single range proof a point/range/history response carries
/// and binds it to the expected interval. Returns the proven entries.
fn checked_range_claim(
    response: &QueryResponse,
    low: &[u8],
    high: &[u8],
) -> Result<Vec<(Vec<u8>, Digest)>, VerifyFailure> {
    if response.proofs.len() != 1 {
        return Err(VerifyFailure::ProofMismatch);
    }
    let claim = response.proofs[0]
        .check()
        .map_err(|_| VerifyFailure::ProofMismatch)?;
    match claim {
        ProofClaim::Range {
            low: l,
            high: h,
            entries,
        } if l == low && h == high => Ok(entries),
        _ => Err(VerifyFailure::ProofMismatch),
    }
}

/// The versions at or below `cutoff`, in proof order. With `keep_all`, every
/// such version (history semantics); otherwise tombstone-headed results are
/// later discarded by taking `.last()` and checking the digest.
fn visible_versions(
    entries: &[(Vec<u8>, Digest)],
    cutoff: u64,
    keep_all: bool,
) -> Vec<(Vec<u8>, Digest)> {
    let tombstone = CellValue::Tombstone.value_hash();
    let mut kept: Vec<(Vec<u8>, Digest)> = Vec::new();
    for (k, d) in entries {
        let ts = match UniversalKey::decode(k) {
            Ok(key) => key.timestamp,
            Err(_) => return Vec::new(), // undecodable keys can't match rows
        };
        if ts <= cutoff {
            kept.push((k.clone(), *d));
        }
    }
    if keep_all {
        return kept;
    }
    // Latest-version semantics: only the newest survives, and not if it is
    // a deletion.
    match kept.last() {
        Some((_, d)) if *d != tombstone => kept.split_off(kept.len() - 1),
        _ => Vec::new(),
    }
}

/// The response's rows must be exactly the derived ones — same keys, same
/// order — and every value must hash to the proven digest.
fn check_rows(
    response: &QueryResponse,
    expected: &[(Vec<u8>, Digest)],
) -> Result<(), VerifyFailure> {
    if response.rows.len() != expected.len() {
        return Err(VerifyFailure::ProofMismatch);
    }
    for (row, (key, digest)) in response.rows.iter().zip(expected) {
        if row.key.encode() != *key {
            return Err(VerifyFailure::ProofMismatch);
        }
        if row.value.value_hash() != *digest {
            return Err(VerifyFailure::ValueHashMismatch);
        }
    }
    Ok(())
}

/// Deferred verification: jobs queue up and flush as one batch once
/// `max_jobs` accumulate or `max_delay` passes since the first queued job.
pub struct DeferredVerifier {
    verifier: Verifier,
    queue: Vec<VerificationJob>,
    first_queued: Option<Instant>,
    pub max_jobs: usize,
    pub max_delay: Duration,
}

impl DeferredVerifier {
    pub fn new(verifier: Verifier) -> DeferredVerifier {
        DeferredVerifier {
            verifier,
            queue: Vec::new(),
            first_queued: None,
            max_jobs: 128,
            max_delay: Duration::from_millis(100),
        }
    }

    /// Queues a job; returns the batch outcomes if this push triggered a
    /// flush.
    pub fn push(&mut self, job: VerificationJob) -> Option<Vec<Result<(), VerifyFailure>>> {
        if self.first_queued.is_none() {
            self.first_queued = Some(Instant::now());
        }
        self.queue.push(job);
        let stale = self
            .first_queued
            .map(|t| t.elapsed() >= self.max_delay)
            .unwrap_or(false);
        if self.queue.len() >= self.max_jobs || stale {
            Some(self.flush())
        } else {
            None
        }
    }

    pub fn flush(&mut self) -> Vec<Result<(), VerifyFailure>> {
        self.first_queued = None;
        let jobs = std::mem::take(&mut self.queue);
        self.verifier.verify_batch(&jobs)
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::hash_invocations;
    use crate::engine::{Engine, EngineConfig, QueryRow};
    use crate::store::Durability;

    fn engine(dir: &Path) -> Engine {
        Engine::open(
            dir,
            EngineConfig {
                seal_max_ms: 0,
                durability: Durability::Buffered,
                ..EngineConfig::default()
            },
        )
        .unwrap()
    }

    fn int(v: i64) -> CellValue {
        CellValue::Int64(v)
    }

    fn point(column: &str, pk: &[u8]) -> ReadRequest {
        ReadRequest::Point {
            column: column.into(),
            primary_key: pk.into(),
        }
    }

    fn ask(
        engine: &Engine,
        verifier: &Verifier,
        request: &ReadRequest,
        as_of: Option<u64>,
    ) -> QueryResponse {
        engine
            .read_query(request, as_of, verifier.anchor().map(|c| c.height))
            .unwrap()
    }

    #[test]
    fn honest_responses_verify_and_advance_the_anchor() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();

        db.put("acct", b"alice", int(10)).unwrap();
        let req = point("acct", b"alice");
        let resp = ask(&db, &v, &req, None);
        v.verify_response(&req, None, &resp).unwrap();
        let h1 = v.anchor().unwrap().height;

        db.put("acct", b"bob", int(20)).unwrap();
        db.put("acct", b"alice", int(11)).unwrap();
        let req2 = ReadRequest::Range {
            column: "acct".into(),
            low: b"a".to_vec(),
            high: b"z".to_vec(),
        };
        let resp2 = ask(&db, &v, &req2, None);
        v.verify_response(&req2, None, &resp2).unwrap();
        assert!(v.anchor().unwrap().height > h1);
        assert_eq!(resp2.rows.len(), 2);

        // History and value queries verify too.
        let req3 = ReadRequest::History {
            column: "acct".into(),
            primary_key: b"alice".to_vec(),
        };
        let resp3 = ask(&db, &v, &req3, None);
        v.verify_response(&req3, None, &resp3).unwrap();

        let req4 = ReadRequest::ValueEq {
            column: "acct".into(),
            value: int(20),
        };
        let resp4 = ask(&db, &v, &req4, None);
        v.verify_response(&req4, None, &resp4).unwrap();

        // Absence proofs verify as well.
        let req5 = point("acct", b"carol");
        let resp5 = ask(&db, &v, &req5, None);
        assert!(resp5.rows.is_empty());
        v.verify_response(&req5, None, &resp5).unwrap();
    }

    #[test]
    fn substituted_values_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        db.put("acct", b"alice", int(10)).unwrap();
        let req = point("acct", b"alice");
        let mut resp = ask(&db, &v, &req, None);
        resp.rows[0].value = int(9_999_999); // the lie
        assert_eq!(
            v.verify_response(&req, None, &resp),
            Err(VerifyFailure::ValueHashMismatch)
        );
    }

    #[test]
    fn dropped_and_injected_rows_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        for (pk, val) in [(b"a1", 1i64), (b"a2", 2), (b"a3", 3)] {
            db.put("acct", pk, int(val)).unwrap();
        }
        let req = ReadRequest::Range {
            column: "acct".into(),
            low: b"a1".to_vec(),
            high: b"a3".to_vec(),
        };
        let honest = ask(&db, &v, &req, None);
        assert_eq!(honest.rows.len(), 3);

        let mut dropped = honest.clone();
        dropped.rows.remove(1);
        assert_eq!(
            v.verify_response(&req, None, &dropped),
            Err(VerifyFailure::ProofMismatch)
        );

        let mut injected = honest.clone();
        let fake = QueryRow {
            key: UniversalKey::new("acct", b"a9", 2, int(9).value_hash()).unwrap(),
            value: int(9),
        };
        injected.rows.push(fake);
        assert_eq!(
            v.verify_response(&req, None, &injected),
            Err(VerifyFailure::ProofMismatch)
        );
    }

    #[test]
    fn tampered_proof_bytes_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        db.put("acct", b"alice", int(10)).unwrap();
        let req = point("acct", b"alice");
        let honest = ask(&db, &v, &req, None);

        let mut bytes = honest.proofs[0].to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        match crate::merkle::MerkleProof::from_bytes(&bytes) {
            Err(_) => {} // structural damage: equivalent to rejection
            Ok(mutated) => {
                let mut resp = honest.clone();
                resp.proofs[0] = mutated;
                let err = v.verify_response(&req, None, &resp).unwrap_err();
                assert!(
                    matches!(
                        err,
                        VerifyFailure::ProofMismatch | VerifyFailure::RootNotInBlock
                    ),
                    "{err}"
                );
            }
        }
    }

    #[test]
    fn stale_proofs_against_a_newer_block_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        db.put("acct", b"alice", int(10)).unwrap();
        let req = point("acct", b"alice");
        let old = ask(&db, &v, &req, None);

        db.put("acct", b"alice", int(11)).unwrap();
        let new = ask(&db, &v, &req, None);

        // Old proof (old root) stapled to the new block/commitment.
        let mut frankenstein = new.clone();
        frankenstein.proofs = old.proofs.clone();
        assert_eq!(
            v.verify_response(&req, None, &frankenstein),
            Err(VerifyFailure::RootNotInBlock)
        );
    }

    #[test]
    fn rollbacks_and_forks_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        db.put("acct", b"alice", int(10)).unwrap();
        let req = point("acct", b"alice");
        let early = ask(&db, &v, &req, None);

        db.put("acct", b"alice", int(11)).unwrap();
        let late = ask(&db, &v, &req, None);
        v.verify_response(&req, None, &late).unwrap();

        // Replaying the earlier (lower) response is a rollback.
        assert_eq!(
            v.verify_response(&req, None, &early),
            Err(VerifyFailure::AnchorRegression)
        );

        // A same-height commitment with a different hash is a fork.
        let mut forked = late.clone();
        forked.commitment.tip_hash = hash_bytes(b"fork");
        forked.block.prev_hash = hash_bytes(b"rewritten");
        let err = v.verify_response(&req, None, &forked).unwrap_err();
        assert!(matches!(err, VerifyFailure::ChainBreak), "{err}");
    }

    #[test]
    fn broken_chain_segments_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        db.put("acct", b"a", int(1)).unwrap();
        let req = point("acct", b"a");
        let first = ask(&db, &v, &req, None);
        v.verify_response(&req, None, &first).unwrap();

        db.put("acct", b"b", int(2)).unwrap();
        db.put("acct", b"c", int(3)).unwrap();
        let update = ask(&db, &v, &req, None);

        // Remove a header from the (anchor, tip] segment.
        let mut gapped = update.clone();
        gapped.chain.remove(0);
        assert_eq!(
            v.verify_response(&req, None, &gapped),
            Err(VerifyFailure::ChainBreak)
        );

        // Corrupt a header in place.
        let mut bent = update.clone();
        bent.chain[0].records_hash = hash_bytes(b"bent");
        assert_eq!(
            v.verify_response(&req, None, &bent),
            Err(VerifyFailure::ChainBreak)
        );

        // The honest segment still verifies afterwards.
        v.verify_response(&req, None, &update).unwrap();
    }

    #[test]
    fn anchor_file_round_trips_and_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let anchor_path = dir.path().join("client.anchor");
        let db = engine(dir.path());
        db.put("acct", b"alice", int(10)).unwrap();

        let committed = {
            let mut v = Verifier::with_anchor_file(&anchor_path).unwrap();
            assert!(v.anchor().is_none());
            let req = point("acct", b"alice");
            let resp = ask(&db, &v, &req, None);
            v.verify_response(&req, None, &resp).unwrap();
            v.anchor().unwrap()
        };

        // Reload: the anchor survived.
        let v = Verifier::with_anchor_file(&anchor_path).unwrap();
        assert_eq!(v.anchor(), Some(committed));

        // Flip one anchor byte: the verifier must refuse to start.
        let mut bytes = std::fs::read(&anchor_path).unwrap();
        bytes[6] ^= 0x01;
        std::fs::write(&anchor_path, &bytes).unwrap();
        assert!(matches!(
            Verifier::with_anchor_file(&anchor_path),
            Err(AnchorError::Corrupt)
        ));

        // Explicit re-anchoring recovers.
        std::fs::remove_file(&anchor_path).unwrap();
        let mut v = Verifier::with_anchor_file(&anchor_path).unwrap();
        let req = point("acct", b"alice");
        let resp = ask(&db, &v, &req, None);
        v.verify_response(&req, None, &resp).unwrap();
    }

    #[test]
    fn batches_match_sequential_verification_and_share_hashing() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        for i in 0..32i64 {
            db.put("n", format!("k{i:02}").as_bytes(), int(i)).unwrap();
        }

        // Two identical verifiers, same anchor state.
        let mut sequential = Verifier::in_memory();
        let mut batched = Verifier::in_memory();
        let bootstrap_req = point("n", b"k00");
        let bootstrap = ask(&db, &sequential, &bootstrap_req, None);
        sequential
            .verify_response(&bootstrap_req, None, &bootstrap)
            .unwrap();
        batched
            .verify_response(&bootstrap_req, None, &bootstrap)
            .unwrap();

        let mut jobs = Vec::new();
        for i in 0..24i64 {
            let req = point("n", format!("k{i:02}").as_bytes());
            let resp = ask(&db, &sequential, &req, None);
            jobs.push(VerificationJob {
                request: req,
                as_of: None,
                response: resp,
            });
        }
        // Tamper with exactly one job.
        jobs[7].response.rows[0].value = int(-1);

        let seq_start = hash_invocations();
        let mut seq_outcomes = Vec::new();
        for job in &jobs {
            seq_outcomes.push(sequential.verify_response(&job.request, job.as_of, &job.response));
        }
        let seq_hashes = hash_invocations() - seq_start;

        let batch_start = hash_invocations();
        let batch_outcomes = batched.verify_batch(&jobs);
        let batch_hashes = hash_invocations() - batch_start;

        assert_eq!(batch_outcomes, seq_outcomes);
        assert_eq!(
            batch_outcomes
                .iter()
                .filter(|o| **o == Err(VerifyFailure::ValueHashMismatch))
                .count(),
            1
        );
        assert_eq!(batch_outcomes.iter().filter(|o| o.is_ok()).count(), 23);
        assert!(
            batch_hashes < seq_hashes,
            "batch {batch_hashes} must beat sequential {seq_hashes}"
        );
        assert_eq!(batched.anchor(), sequential.anchor());
    }

    #[test]
    fn deferred_queue_flushes_on_size_and_on_demand() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        db.put("acct", b"a", int(1)).unwrap();
        let req = point("acct", b"a");
        let v = Verifier::in_memory();
        let mut deferred = DeferredVerifier::new(v);
        deferred.max_jobs = 3;

        let resp = ask(&db, deferred.verifier(), &req, None);
        for _ in 0..2 {
            assert!(deferred
                .push(VerificationJob {
                    request: req.clone(),
                    as_of: None,
                    response: resp.clone(),
                })
                .is_none());
        }
        let outcomes = deferred
            .push(VerificationJob {
                request: req.clone(),
                as_of: None,
                response: resp.clone(),
            })
            .expect("third push reaches max_jobs");
        assert_eq!(outcomes.len(), 3);
        assert!(outcomes.iter().all(|o| o.is_ok()));
        assert!(deferred.flush().is_empty());
    }

    #[test]
    fn empty_batch_is_empty_outcomes() {
        let mut v = Verifier::in_memory();
        assert!(v.verify_batch(&[]).is_empty());
    }

    #[test]
    fn as_of_responses_verify_with_their_cutoff() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        let r1 = db.put("acct", b"x", int(1)).unwrap();
        db.put("acct", b"x", int(2)).unwrap();

        let req = point("acct", b"x");
        let resp = ask(&db, &v, &req, Some(r1.commit_ts));
        assert_eq!(resp.rows[0].value, int(1));
        v.verify_response(&req, Some(r1.commit_ts), &resp).unwrap();

        // The same response presented as "latest" must fail: the proof
        // interval is bound to the cutoff.
        assert_eq!(
            v.verify_response(&req, None, &resp),
            Err(VerifyFailure::ProofMismatch)
        );
    }

    #[test]
    fn anchor_extension_without_data() {
        let dir = tempfile::tempdir().unwrap();
        let db = engine(dir.path());
        let mut v = Verifier::in_memory();
        db.put("acct", b"a", int(1)).unwrap();
        db.put("acct", b"b", int(2)).unwrap();

        // Bootstrap: full chain from genesis.
        let tip = db.commitment().unwrap();
        let chain = db.headers_from(0).unwrap();
        v.extend_anchor(&tip, &chain).unwrap();
        assert_eq!(v.anchor(), Some(tip));

        // Extension: only the headers past the anchor are needed.
        db.put("acct", b"c", int(3)).unwrap();
        db.put("acct", b"d", int(4)).unwrap();
        let tip2 = db.commitment().unwrap();
        let tail = db.headers_from(tip.height + 1).unwrap();
        assert!(tail.len() as u64 == tip2.height - tip.height);
        v.extend_anchor(&tip2, &tail).unwrap();
        assert_eq!(v.anchor(), Some(tip2));

        // Re-presenting the same tip with no headers is a no-op success.
        v.extend_anchor(&tip2, &[]).unwrap();

        // A same-height commitment with a different hash is a fork.
        let fork = ChainCommitment {
            height: tip2.height,
            tip_hash: Digest([0x5a; 32]),
        };
        assert_eq!(
            v.extend_anchor(&fork, &[]),
            Err(VerifyFailure::ChainBreak)
        );

        // An older commitment is a rollback.
        assert_eq!(
            v.extend_anchor(&tip, &[]),
            Err(VerifyFailure::AnchorRegression)
        );

        // A tampered header in the segment breaks the walk.
        db.put("acct", b"e", int(5)).unwrap();
        let tip3 = db.commitment().unwrap();
        let mut bad = db.headers_from(tip2.height + 1).unwrap();
        bad[0].index_root = Digest([0x77; 32]);
        assert_eq!(
            v.extend_anchor(&tip3, &bad),
            Err(VerifyFailure::ChainBreak)
        );
        // ...and the anchor did not move.
        assert_eq!(v.anchor(), Some(tip2));

        // The honest segment still works afterwards.
        let good = db.headers_from(tip2.height + 1).unwrap();
        v.extend_anchor(&tip3, &good).unwrap();
        assert_eq!(v.anchor(), Some(tip3));
    }
}
