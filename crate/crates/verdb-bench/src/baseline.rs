//! The reference ledger-database design this engine is measured against:
//! an append-only journal of hash-chained blocks, revision documents in
//! content-addressed storage, and *separately materialized* B⁺-tree views
//! for query answering. The views and the authenticated revision tree are
//! stored as serialized nodes fetched by digest — the storage-layer shape
//! of a conventional database — so every descent pays a fetch-and-decode
//! cost, and every proof requires its own per-key descent through the
//! revision tree. That independent-descent-per-result-row design is
//! precisely the cost the unified index removes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

use verdb::codec::{hash_bytes, Digest};
use verdb::ledger::{BlockHeader, ChainCommitment, Ledger, LedgerError, OpKind, TxnOp, TxnRecord};
use verdb::store::Durability;
use verdb::UniversalKey;

const FANOUT: usize = 32;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("codec: {0}")]
    Codec(#[from] verdb::CodecError),
    #[error("storage corrupt: {0}")]
    Corrupt(&'static str),
    #[error("proof rejected: {0}")]
    ProofRejected(&'static str),
}

/// Content-addressed node storage with a fetch counter: the stand-in for
/// the baseline's storage layer.
#[derive(Default)]
pub struct NodeStore {
    nodes: HashMap<Digest, Vec<u8>>,
    fetches: u64,
}

impl NodeStore {
    fn insert(&mut self, bytes: Vec<u8>) -> Digest {
        let digest = hash_bytes(&bytes);
        self.nodes.insert(digest, bytes);
        digest
    }

    fn fetch(&mut self, digest: Digest) -> Result<Node, BaselineError> {
        self.fetches += 1;
        let bytes = self
            .nodes
            .get(&digest)
            .ok_or(BaselineError::Corrupt("missing node"))?;
        Node::decode(bytes)
    }

    fn fetch_raw(&mut self, digest: Digest) -> Result<Vec<u8>, BaselineError> {
        self.fetches += 1;
        self.nodes
            .get(&digest)
            .cloned()
            .ok_or(BaselineError::Corrupt("missing node"))
    }

    pub fn fetch_count(&self) -> u64 {
        self.fetches
    }
}

/// One B⁺-tree node, decoded. Leaves map keys to small values; internal
/// nodes map separator keys (subtree maxima) to child digests.
enum Node {
    Leaf(Vec<(Vec<u8>, Vec<u8>)>),
    Internal(Vec<(Vec<u8>, Digest)>),
}

impl Node {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Node::Leaf(entries) => {
                out.push(0u8);
                out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
                for (k, v) in entries {
                    out.extend_from_slice(&(k.len() as u32).to_be_bytes());
                    out.extend_from_slice(k);
                    out.extend_from_slice(&(v.len() as u32).to_be_bytes());
                    out.extend_from_slice(v);
                }
            }
            Node::Internal(entries) => {
                out.push(1u8);
                out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
                for (k, child) in entries {
                    out.extend_from_slice(&(k.len() as u32).to_be_bytes());
                    out.extend_from_slice(k);
                    out.extend_from_slice(&child.0);
                }
            }
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Node, BaselineError> {
        let err = BaselineError::Corrupt("truncated node");
        let take = |bytes: &[u8], pos: &mut usize, n: usize| -> Result<Vec<u8>, BaselineError> {
            if bytes.len() < *pos + n {
                return Err(BaselineError::Corrupt("truncated node"));
            }
            let out = bytes[*pos..*pos + n].to_vec();
            *pos += n;
            Ok(out)
        };
        if bytes.is_empty() {
            return Err(err);
        }
        let tag = bytes[0];
        let mut pos = 1usize;
        let count = u32::from_be_bytes(
            take(bytes, &mut pos, 4)?
                .try_into()
                .map_err(|_| BaselineError::Corrupt("bad count"))?,
        ) as usize;
        match tag {
            0 => {
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let klen = u32::from_be_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
                    let k = take(bytes, &mut pos, klen as usize)?;
                    let vlen = u32::from_be_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
                    let v = take(bytes, &mut pos, vlen as usize)?;
                    entries.push((k, v));
                }
                Ok(Node::Leaf(entries))
            }
            1 => {
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let klen = u32::from_be_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
                    let k = take(bytes, &mut pos, klen as usize)?;
                    let d = take(bytes, &mut pos, 32)?;
                    entries.push((k, Digest(d.try_into().unwrap())));
                }
                Ok(Node::Internal(entries))
            }
            _ => Err(BaselineError::Corrupt("unknown node tag")),
        }
    }
}

/// A B⁺-tree whose nodes live in a [`NodeStore`], addressed by digest. Each
/// mutation rewrites the descent path (immutable nodes, like a page store
/// with copy-on-write), and each read fetches and decodes per level.
pub struct ShadowTree {
    root: Option<Digest>,
}

enum InsertResult {
    One(Digest, Vec<u8>),
    Split((Digest, Vec<u8>), (Digest, Vec<u8>)),
}

impl ShadowTree {
    pub fn empty() -> ShadowTree {
        ShadowTree { root: None }
    }

    pub fn root(&self) -> Option<Digest> {
        self.root
    }

    /// Digest committed into block headers: the root hash, or a fixed
    /// sentinel for an empty tree.
    pub fn commitment(&self) -> Digest {
        self.root.unwrap_or(Digest::ZERO)
    }

    /// Bottom-up construction from strictly ascending `(key, value)` pairs:
    /// the load-phase path, producing no dead intermediate nodes.
    pub fn bulk_build(
        store: &mut NodeStore,
        entries: &[(Vec<u8>, Vec<u8>)],
    ) -> ShadowTree {
        if entries.is_empty() {
            return ShadowTree::empty();
        }
        let mut level: Vec<(Vec<u8>, Digest)> = entries
            .chunks(FANOUT)
            .map(|chunk| {
                let max_key = chunk.last().unwrap().0.clone();
                let digest = store.insert(Node::Leaf(chunk.to_vec()).encode());
                (max_key, digest)
            })
            .collect();
        while level.len() > 1 {
            level = level
                .chunks(FANOUT)
                .map(|chunk| {
                    let max_key = chunk.last().unwrap().0.clone();
                    let digest = store.insert(Node::Internal(chunk.to_vec()).encode());
                    (max_key, digest)
                })
                .collect();
        }
        ShadowTree {
            root: Some(level[0].1),
        }
    }

    pub fn insert(
        &mut self,
        store: &mut NodeStore,
        key: &[u8],
        value: &[u8],
    ) -> Result<(), BaselineError> {
        let result = match self.root {
            None => {
                let digest = store.insert(Node::Leaf(vec![(key.to_vec(), value.to_vec())]).encode());
                InsertResult::One(digest, key.to_vec())
            }
            Some(root) => insert_rec(store, root, key, value)?,
        };
        self.root = Some(match result {
            InsertResult::One(digest, _) => digest,
            InsertResult::Split((left, lmax), (right, rmax)) => {
                store.insert(Node::Internal(vec![(lmax, left), (rmax, right)]).encode())
            }
        });
        Ok(())
    }

    pub fn get(
        &self,
        store: &mut NodeStore,
        key: &[u8],
    ) -> Result<Option<Vec<u8>>, BaselineError> {
        let Some(mut at) = self.root else {
            return Ok(None);
        };
        loop {
            match store.fetch(at)? {
                Node::Leaf(entries) => {
                    return Ok(entries
                        .iter()
                        .find(|(k, _)| k == key)
                        .map(|(_, v)| v.clone()));
                }
                Node::Internal(entries) => {
                    let child = entries
                        .iter()
                        .find(|(sep, _)| key <= sep.as_slice())
                        .or_else(|| entries.last());
                    match child {
                        Some((_, digest)) => at = *digest,
                        None => return Ok(None),
                    }
                }
            }
        }
    }

    /// All entries with `low <= key <= high`, ascending.
    pub fn range(
        &self,
        store: &mut NodeStore,
        low: &[u8],
        high: &[u8],
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, BaselineError> {
        let mut out = Vec::new();
        let Some(root) = self.root else {
            return Ok(out);
        };
        let mut stack = vec![root];
        while let Some(at) = stack.pop() {
            match store.fetch(at)? {
                Node::Leaf(entries) => {
                    for (k, v) in entries {
                        if k.as_slice() >= low && k.as_slice() <= high {
                            out.push((k, v));
                        }
                    }
                }
                Node::Internal(entries) => {
                    // Children are in ascending key order; push in reverse so
                    // the stack pops them ascending. A child can hold keys in
                    // (prev_sep, sep]; overlap test against [low, high].
                    let mut prev: Option<&[u8]> = None;
                    let mut wanted = Vec::new();
                    for (sep, digest) in &entries {
                        let above_low = prev.map_or(true, |p| p < high);
                        let below_high = low <= sep.as_slice();
                        // `prev < high` is loose for inclusive bounds; accept
                        // the extra child rather than miss one.
                        if above_low && below_high {
                            wanted.push(*digest);
                        }
                        prev = Some(sep.as_slice());
                    }
                    // The last child may hold keys above the last separator.
                    if let Some((sep, digest)) = entries.last() {
                        if sep.as_slice() < low {
                            wanted.push(*digest);
                        }
                    }
                    for d in wanted.into_iter().rev() {
                        stack.push(d);
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// The authenticated descent: serialized nodes root→leaf. This is the
    /// per-key "search the digest in the ledger individually" step.
    pub fn prove(
        &self,
        store: &mut NodeStore,
        key: &[u8],
    ) -> Result<DescentProof, BaselineError> {
        let mut path = Vec::new();
        let Some(mut at) = self.root else {
            return Err(BaselineError::Corrupt("empty tree has no proofs"));
        };
        loop {
            let raw = store.fetch_raw(at)?;
            let node = Node::decode(&raw)?;
            path.push(raw);
            match node {
                Node::Leaf(_) => return Ok(DescentProof { path }),
                Node::Internal(entries) => {
                    let child = entries
                        .iter()
                        .find(|(sep, _)| key <= sep.as_slice())
                        .or_else(|| entries.last())
                        .map(|(_, d)| *d)
                        .ok_or(BaselineError::Corrupt("empty internal node"))?;
                    at = child;
                }
            }
        }
    }
}

fn insert_rec(
    store: &mut NodeStore,
    at: Digest,
    key: &[u8],
    value: &[u8],
) -> Result<InsertResult, BaselineError> {
    match store.fetch(at)? {
        Node::Leaf(mut entries) => {
            match entries.binary_search_by(|(k, _)| k.as_slice().cmp(key)) {
                Ok(i) => entries[i].1 = value.to_vec(),
                Err(i) => entries.insert(i, (key.to_vec(), value.to_vec())),
            }
            Ok(finish(store, entries, Node::Leaf))
        }
        Node::Internal(mut entries) => {
            let idx = entries
                .iter()
                .position(|(sep, _)| key <= sep.as_slice())
                .unwrap_or(entries.len() - 1);
            let child = entries[idx].1;
            match insert_rec(store, child, key, value)? {
                InsertResult::One(digest, max) => {
                    entries[idx] = (max, digest);
                }
                InsertResult::Split((l, lmax), (r, rmax)) => {
                    entries[idx] = (lmax, l);
                    entries.insert(idx + 1, (rmax, r));
                }
            }
            Ok(finish(store, entries, Node::Internal))
        }
    }
}

/// Seals `entries` into one node, or splits into two when past the fanout.
fn finish<T: Clone>(
    store: &mut NodeStore,
    entries: Vec<(Vec<u8>, T)>,
    make: impl Fn(Vec<(Vec<u8>, T)>) -> Node,
) -> InsertResult {
    if entries.len() <= FANOUT {
        let max = entries.last().unwrap().0.clone();
        let digest = store.insert(make(entries).encode());
        return InsertResult::One(digest, max);
    }
    let right = entries[entries.len() / 2..].to_vec();
    let left = entries[..entries.len() / 2].to_vec();
    let lmax = left.last().unwrap().0.clone();
    let rmax = right.last().unwrap().0.clone();
    let l = store.insert(make(left).encode());
    let r = store.insert(make(right).encode());
    InsertResult::Split((l, lmax), (r, rmax))
}

/// A per-key authenticated descent: the serialized nodes from the revision
/// tree root down to the leaf holding the key.
#[derive(Clone, Debug)]
pub struct DescentProof {
    pub path: Vec<Vec<u8>>,
}

impl DescentProof {
    /// Replays the descent: each node must hash into its parent, the root
    /// must match `root`, and the leaf must bind `key` to `value`.
    pub fn check(&self, root: Digest, key: &[u8], value: &[u8]) -> Result<(), BaselineError> {
        if self.path.is_empty() {
            return Err(BaselineError::ProofRejected("empty path"));
        }
        if hash_bytes(&self.path[0]) != root {
            return Err(BaselineError::ProofRejected("root mismatch"));
        }
        for i in 0..self.path.len() - 1 {
            let child_digest = hash_bytes(&self.path[i + 1]);
            let Node::Internal(entries) = Node::decode(&self.path[i])? else {
                return Err(BaselineError::ProofRejected("leaf amid the path"));
            };
            if !entries.iter().any(|(_, d)| *d == child_digest) {
                return Err(BaselineError::ProofRejected("broken parent link"));
            }
        }
        let Node::Leaf(entries) = Node::decode(self.path.last().unwrap())? else {
            return Err(BaselineError::ProofRejected("path ends in an internal node"));
        };
        if !entries
            .iter()
            .any(|(k, v)| k.as_slice() == key && v.as_slice() == value)
        {
            return Err(BaselineError::ProofRejected("leaf does not bind key to value"));
        }
        Ok(())
    }
}

/// Revision key: primary key, then big-endian version — orders histories
/// per key, newest last. Length-prefixing keeps distinct keys from
/// aliasing.
fn revision_key(pk: &[u8], version: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + pk.len() + 8);
    out.extend_from_slice(&(pk.len() as u32).to_be_bytes());
    out.extend_from_slice(pk);
    out.extend_from_slice(&version.to_be_bytes());
    out
}

fn latest_value(version: u64, digest: Digest) -> Vec<u8> {
    let mut out = Vec::with_capacity(40);
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&digest.0);
    out
}

fn parse_latest(bytes: &[u8]) -> Result<(u64, Digest), BaselineError> {
    if bytes.len() != 40 {
        return Err(BaselineError::Corrupt("bad latest-view entry"));
    }
    Ok((
        u64::from_be_bytes(bytes[..8].try_into().unwrap()),
        Digest(bytes[8..40].try_into().unwrap()),
    ))
}

/// A read served with its verification material.
pub struct VerifiableDoc {
    pub key: Vec<u8>,
    pub version: u64,
    pub doc: Vec<u8>,
    pub proof: DescentProof,
}

pub struct BaselineResponse {
    pub docs: Vec<VerifiableDoc>,
    pub header: BlockHeader,
    pub commitment: ChainCommitment,
    /// Headers `(anchor, tip]` for anchor extension.
    pub chain: Vec<BlockHeader>,
}

/// The baseline engine: journal + document storage + three serialized-node
/// trees (latest view, history view, authenticated revision tree).
pub struct BaselineDb {
    journal: Ledger,
    pub nodes: NodeStore,
    revisions: ShadowTree,
    latest: ShadowTree,
    history: ShadowTree,
    docs: HashMap<Digest, Vec<u8>>,
    clock: u64,
    /// Authenticated descents performed (one per proven result row).
    pub ledger_descents: u64,
}

const BENCH_COLUMN: &str = "w";

impl BaselineDb {
    pub fn open(dir: &Path) -> Result<BaselineDb, BaselineError> {
        Ok(BaselineDb {
            journal: Ledger::open(dir, Durability::Buffered)?,
            nodes: NodeStore::default(),
            revisions: ShadowTree::empty(),
            latest: ShadowTree::empty(),
            history: ShadowTree::empty(),
            docs: HashMap::new(),
            clock: 0,
            ledger_descents: 0,
        })
    }

    fn record_for(&self, pk: &[u8], version: u64, digest: Digest) -> Result<TxnRecord, BaselineError> {
        Ok(TxnRecord {
            txn_id: version,
            ops: vec![TxnOp {
                kind: OpKind::Put,
                key: UniversalKey::new(BENCH_COLUMN, pk, version, digest)?,
            }],
        })
    }

    /// Load phase: documents enter storage, the trees are built bottom-up,
    /// and the journal records the revisions in batches.
    pub fn load(&mut self, records: &[(Vec<u8>, Vec<u8>)]) -> Result<(), BaselineError> {
        let mut revision_entries = BTreeMap::new();
        let mut latest_entries = BTreeMap::new();
        let mut txn_records = Vec::with_capacity(records.len());
        for (pk, doc) in records {
            self.clock += 1;
            let version = self.clock;
            let digest = hash_bytes(doc);
            self.docs.insert(digest, doc.clone());
            revision_entries.insert(revision_key(pk, version), digest.0.to_vec());
            latest_entries.insert(pk.clone(), latest_value(version, digest));
            txn_records.push(self.record_for(pk, version, digest)?);
        }
        let revision_entries: Vec<(Vec<u8>, Vec<u8>)> = revision_entries.into_iter().collect();
        let latest_entries: Vec<(Vec<u8>, Vec<u8>)> = latest_entries.into_iter().collect();
        self.revisions = ShadowTree::bulk_build(&mut self.nodes, &revision_entries);
        self.history = ShadowTree::bulk_build(&mut self.nodes, &revision_entries);
        self.latest = ShadowTree::bulk_build(&mut self.nodes, &latest_entries);
        let root = self.revisions.commitment();
        for batch in txn_records.chunks(1024) {
            self.journal
                .seal_block(batch.to_vec(), Vec::new(), root, false)?;
        }
        Ok(())
    }

    /// One write: the document enters storage, *every* view updates, the
    /// revision tree updates, and the journal seals a block. Two-plus
    /// structure updates per record, by design.
    pub fn put(&mut self, pk: &[u8], doc: &[u8]) -> Result<(), BaselineError> {
        self.clock += 1;
        let version = self.clock;
        let digest = hash_bytes(doc);
        self.docs.insert(digest, doc.to_vec());
        let rkey = revision_key(pk, version);
        self.revisions.insert(&mut self.nodes, &rkey, &digest.0)?;
        self.history.insert(&mut self.nodes, &rkey, &digest.0)?;
        self.latest
            .insert(&mut self.nodes, pk, &latest_value(version, digest))?;
        let record = self.record_for(pk, version, digest)?;
        self.journal
            .seal_block(vec![record], Vec::new(), self.revisions.commitment(), false)?;
        Ok(())
    }

    fn fetch_doc(&self, digest: Digest) -> Result<Vec<u8>, BaselineError> {
        self.docs
            .get(&digest)
            .cloned()
            .ok_or(BaselineError::Corrupt("missing document"))
    }

    /// Unverified point read: view descent plus document fetch.
    pub fn get(&mut self, pk: &[u8]) -> Result<Option<Vec<u8>>, BaselineError> {
        match self.latest.get(&mut self.nodes, pk)? {
            None => Ok(None),
            Some(enc) => {
                let (_, digest) = parse_latest(&enc)?;
                Ok(Some(self.fetch_doc(digest)?))
            }
        }
    }

    /// Unverified range read over the latest view.
    pub fn range(
        &mut self,
        low: &[u8],
        high: &[u8],
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>, BaselineError> {
        let hits = self.latest.range(&mut self.nodes, low, high)?;
        let mut out = Vec::with_capacity(hits.len());
        for (pk, enc) in hits {
            let (_, digest) = parse_latest(&enc)?;
            out.push((pk, self.fetch_doc(digest)?));
        }
        Ok(out)
    }

    /// Verified point read: view descent for the answer, then an
    /// independent authenticated descent for the proof.
    pub fn get_verifiable(&mut self, pk: &[u8], anchor: Option<u64>) -> Result<BaselineResponse, BaselineError> {
        let docs = match self.latest.get(&mut self.nodes, pk)? {
            None => Vec::new(),
            Some(enc) => {
                let (version, digest) = parse_latest(&enc)?;
                vec![self.prove_revision(pk, version, digest)?]
            }
        };
        self.respond(docs, anchor)
    }

    /// Verified range read: one independent authenticated descent per
    /// result row.
    pub fn range_verifiable(
        &mut self,
        low: &[u8],
        high: &[u8],
        anchor: Option<u64>,
    ) -> Result<BaselineResponse, BaselineError> {
        let hits = self.latest.range(&mut self.nodes, low, high)?;
        let mut docs = Vec::with_capacity(hits.len());
        for (pk, enc) in hits {
            let (version, digest) = parse_latest(&enc)?;
            docs.push(self.prove_revision(&pk, version, digest)?);
        }
        self.respond(docs, anchor)
    }

    fn prove_revision(
        &mut self,
        pk: &[u8],
        version: u64,
        digest: Digest,
    ) -> Result<VerifiableDoc, BaselineError> {
        self.ledger_descents += 1;
        let rkey = revision_key(pk, version);
        let proof = self.revisions.prove(&mut self.nodes, &rkey)?;
        Ok(VerifiableDoc {
            key: pk.to_vec(),
            version,
            doc: self.fetch_doc(digest)?,
            proof,
        })
    }

    fn respond(
        &self,
        docs: Vec<VerifiableDoc>,
        anchor: Option<u64>,
    ) -> Result<BaselineResponse, BaselineError> {
        let commitment = self.journal.tip()?;
        let header = self.journal.header(commitment.height)?;
        let from = anchor.map(|h| h + 1).unwrap_or(0);
        let chain = if from > commitment.height {
            Vec::new()
        } else {
            self.journal.headers_from(from)?
        };
        Ok(BaselineResponse {
            docs,
            header,
            commitment,
            chain,
        })
    }
}

/// Client-side verification for baseline responses: per-row descent
/// replay, root binding to the block, chain extension from the anchor.
pub struct BaselineClient {
    anchor: Option<ChainCommitment>,
}

impl BaselineClient {
    pub fn new() -> BaselineClient {
        BaselineClient { anchor: None }
    }

    pub fn anchor(&self) -> Option<ChainCommitment> {
        self.anchor
    }

    pub fn verify(&mut self, response: &BaselineResponse) -> Result<(), BaselineError> {
        // Chain: block must hash to the commitment, commitment must extend
        // the anchor through linked headers.
        if response.header.height != response.commitment.height
            || response.header.block_hash() != response.commitment.tip_hash
        {
            return Err(BaselineError::ProofRejected("block does not match commitment"));
        }
        match self.anchor {
            Some(a) if a.height > response.commitment.height => {
                return Err(BaselineError::ProofRejected("commitment below anchor"));
            }
            Some(a) if a.height == response.commitment.height => {
                if a.tip_hash != response.commitment.tip_hash {
                    return Err(BaselineError::ProofRejected("same-height fork"));
                }
            }
            Some(a) => {
                let expected = response.commitment.height - a.height;
                if response.chain.len() as u64 != expected {
                    return Err(BaselineError::ProofRejected("chain segment wrong length"));
                }
                let mut running = a.tip_hash;
                for (i, h) in response.chain.iter().enumerate() {
                    if h.height != a.height + 1 + i as u64 || h.prev_hash != running {
                        return Err(BaselineError::ProofRejected("chain segment broken"));
                    }
                    running = h.block_hash();
                }
                if running != response.commitment.tip_hash {
                    return Err(BaselineError::ProofRejected("chain does not reach tip"));
                }
            }
            None => {
                if response.chain.len() as u64 != response.commitment.height + 1 {
                    return Err(BaselineError::ProofRejected("bootstrap chain incomplete"));
                }
                let mut running = Digest::ZERO;
                for (i, h) in response.chain.iter().enumerate() {
                    if h.height != i as u64 || h.prev_hash != running {
                        return Err(BaselineError::ProofRejected("bootstrap chain broken"));
                    }
                    running = h.block_hash();
                }
                if running != response.commitment.tip_hash {
                    return Err(BaselineError::ProofRejected("bootstrap chain does not reach tip"));
                }
            }
        }
        // Rows: every document re-hashes, every descent replays to the root
        // sealed in the block.
        for doc in &response.docs {
            let digest = hash_bytes(&doc.doc);
            let rkey = revision_key(&doc.key, doc.version);
            doc.proof.check(response.header.index_root, &rkey, &digest.0)?;
        }
        self.anchor = Some(response.commitment);
        Ok(())
    }
}

impl Default for BaselineClient {
    fn default() -> BaselineClient {
        BaselineClient::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shadow_tree_insert_get_range() {
        let mut store = NodeStore::default();
        let mut tree = ShadowTree::empty();
        let mut expected = BTreeMap::new();
        // Interleaved inserts and overwrites, enough to force splits.
        for i in 0..500u32 {
            let key = format!("k{:04}", (i * 7919) % 1000).into_bytes();
            let value = i.to_be_bytes().to_vec();
            tree.insert(&mut store, &key, &value).unwrap();
            expected.insert(key, value);
        }
        for (k, v) in &expected {
            assert_eq!(tree.get(&mut store, k).unwrap().as_ref(), Some(v));
        }
        assert_eq!(tree.get(&mut store, b"absent").unwrap(), None);
        let got = tree.range(&mut store, b"k0100", b"k0200").unwrap();
        let want: Vec<(Vec<u8>, Vec<u8>)> = expected
            .range(b"k0100".to_vec()..=b"k0200".to_vec())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn bulk_build_equals_incremental() {
        let mut entries: Vec<(Vec<u8>, Vec<u8>)> = (0..300u32)
            .map(|i| (format!("k{i:04}").into_bytes(), i.to_be_bytes().to_vec()))
            .collect();
        entries.sort();
        let mut store_a = NodeStore::default();
        let bulk = ShadowTree::bulk_build(&mut store_a, &entries);
        let mut store_b = NodeStore::default();
        let mut incr = ShadowTree::empty();
        for (k, v) in &entries {
            incr.insert(&mut store_b, k, v).unwrap();
        }
        // Shapes may differ (split points vs packed leaves); answers must not.
        for (k, v) in &entries {
            assert_eq!(bulk.get(&mut store_a, k).unwrap().as_ref(), Some(v));
            assert_eq!(incr.get(&mut store_b, k).unwrap().as_ref(), Some(v));
        }
        assert_eq!(
            bulk.range(&mut store_a, b"k0050", b"k0100").unwrap(),
            incr.range(&mut store_b, b"k0050", b"k0100").unwrap()
        );
    }

    #[test]
    fn descent_proofs_replay_and_reject_tampering() {
        let mut store = NodeStore::default();
        let mut tree = ShadowTree::empty();
        for i in 0..200u32 {
            tree.insert(
                &mut store,
                format!("k{i:03}").as_bytes(),
                &i.to_be_bytes(),
            )
            .unwrap();
        }
        let root = tree.commitment();
        let proof = tree.prove(&mut store, b"k123").unwrap();
        proof.check(root, b"k123", &123u32.to_be_bytes()).unwrap();
        // Wrong value, wrong key, wrong root, damaged node.
        assert!(proof.check(root, b"k123", &124u32.to_be_bytes()).is_err());
        assert!(proof.check(root, b"k124", &123u32.to_be_bytes()).is_err());
        assert!(proof
            .check(hash_bytes(b"other"), b"k123", &123u32.to_be_bytes())
            .is_err());
        let mut bent = proof.clone();
        let last = bent.path.len() - 1;
        bent.path[last][10] ^= 1;
        assert!(bent.check(root, b"k123", &123u32.to_be_bytes()).is_err());
    }

    #[test]
    fn baseline_end_to_end_with_client_verification() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = BaselineDb::open(dir.path()).unwrap();
        let records: Vec<(Vec<u8>, Vec<u8>)> = (0..100u32)
            .map(|i| (format!("k{i:03}").into_bytes(), vec![i as u8; 20]))
            .collect();
        db.load(&records).unwrap();
        db.put(b"k050", b"updated").unwrap();

        assert_eq!(db.get(b"k050").unwrap(), Some(b"updated".to_vec()));
        assert_eq!(db.get(b"k051").unwrap(), Some(vec![51u8; 20]));
        assert_eq!(db.get(b"missing").unwrap(), None);

        let mut client = BaselineClient::new();
        let resp = db.get_verifiable(b"k050", None).unwrap();
        assert_eq!(resp.docs.len(), 1);
        assert_eq!(resp.docs[0].doc, b"updated");
        client.verify(&resp).unwrap();
        let anchored = client.anchor().unwrap();

        // Range: one descent per row.
        let before = db.ledger_descents;
        let resp = db
            .range_verifiable(b"k010", b"k019", Some(anchored.height))
            .unwrap();
        assert_eq!(resp.docs.len(), 10);
        assert_eq!(db.ledger_descents - before, 10);
        client.verify(&resp).unwrap();

        // Tampered doc fails.
        let mut resp = db.get_verifiable(b"k051", Some(anchored.height)).unwrap();
        resp.docs[0].doc = b"forged".to_vec();
        assert!(client.verify(&resp).is_err());
    }

    #[test]
    fn baseline_updates_multiple_structures_per_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = BaselineDb::open(dir.path()).unwrap();
        let records: Vec<(Vec<u8>, Vec<u8>)> = (0..50u32)
            .map(|i| (format!("k{i:02}").into_bytes(), vec![i as u8; 20]))
            .collect();
        db.load(&records).unwrap();
        let nodes_before = db.nodes.nodes.len();
        let tip_before = db.journal.tip().unwrap().height;
        db.put(b"k25", b"fresh").unwrap();
        // Three trees each rewrote a path, and the journal grew.
        assert!(db.nodes.nodes.len() >= nodes_before + 3);
        assert_eq!(db.journal.tip().unwrap().height, tip_before + 1);
    }
}
