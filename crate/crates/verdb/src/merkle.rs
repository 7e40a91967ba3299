//! The Merkle-augmented B+-tree: one ordered index that answers queries and
//! produces integrity proofs from the same traversal.
//!
//! # Structure
//!
//! Entries `(encoded key, value hash)` live in leaves, sorted by key; internal
//! nodes carry `(max key of child, child hash)` pairs. Every node's hash is
//! [`codec::hash_node`] over its serialized entries, tagged leaf or internal,
//! so the root digest commits to the entire contents.
//!
//! # Deterministic shape
//!
//! Node boundaries are *derived from the keys themselves*: an entry closes a
//! leaf when the hash of `(level, key)` falls under `1/FANOUT` of the hash
//! space, and a node closes its parent by the same rule one level up. Expected
//! node width is [`FANOUT`]; more importantly the tree shape — and therefore
//! the root digest — is a pure function of the key *set*. Two databases that
//! committed the same cell versions in different orders converge on identical
//! roots, which is what makes digests comparable across replicas and replays.
//! A conventional "split the overflowing node in the middle" rule does not
//! have this property: where splits land depends on arrival order.
//!
//! # Snapshots
//!
//! [`Snapshot`] is an immutable handle. [`Snapshot::insert`] returns a new
//! snapshot sharing all untouched nodes with the old one, so keeping a
//! snapshot per sealed block costs one root-to-leaf path per write, not a
//! copy of the tree.
//!
//! # Proofs
//!
//! [`MerkleProof`] carries a bottom-up slice of the tree: the full contents of
//! every node on the path (or, for ranges, the covered window plus its two
//! boundary paths). Replaying the slice reproduces the root digest; sibling
//! subtrees outside the slice appear only as opaque hashes. Range proofs are
//! complete by construction: dropping a row changes a leaf hash and the
//! replay no longer matches.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{self, Digest, TAG_INTERNAL, TAG_LEAF};

/// Target (expected) node width. Boundaries are probabilistic with density
/// `1/FANOUT`, so actual widths are geometric with this mean.
pub const FANOUT: u64 = 32;

const BOUNDARY_THRESHOLD: u64 = u64::MAX / FANOUT;

static NODE_READS: AtomicU64 = AtomicU64::new(0);

/// Number of index nodes visited by lookups, scans, and proof builds since
/// process start. Relaxed instrumentation for the benchmark harness.
pub fn node_reads() -> u64 {
    NODE_READS.load(Ordering::Relaxed)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("key already present in index")]
    DuplicateKey,
    #[error("range low bound sorts after high bound")]
    InvalidRange,
}

/// A structurally invalid or non-replaying proof. The verifier collapses all
/// of these into its proof-mismatch class; the message is for diagnostics.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("proof rejected: {0}")]
pub struct ProofFault(pub &'static str);

/// Decides whether `key` closes a node at `level`. Deterministic in the key
/// bytes only — this is what makes tree shape order-independent.
fn is_boundary(level: u8, key: &[u8]) -> bool {
    let mut h = Sha256::new();
    h.update([level]);
    h.update(key);
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap()) < BOUNDARY_THRESHOLD
}

#[derive(Clone, Debug)]
struct LeafEntry {
    key: Vec<u8>,
    value_hash: Digest,
    /// Cached `is_boundary(0, key)`; derivable, never hashed.
    boundary: bool,
}

#[derive(Clone, Debug)]
struct ChildEntry {
    /// Largest key in the child's subtree; the routing separator.
    max_key: Vec<u8>,
    hash: Digest,
    node: Arc<Node>,
    /// Cached `is_boundary(parent_level, max_key)`.
    boundary: bool,
}

#[derive(Debug)]
enum Node {
    Leaf { entries: Vec<LeafEntry> },
    Internal { level: u8, children: Vec<ChildEntry> },
}

impl Node {
    fn level(&self) -> u8 {
        match self {
            Node::Leaf { .. } => 0,
            Node::Internal { level, .. } => *level,
        }
    }

    fn max_key(&self) -> &[u8] {
        match self {
            Node::Leaf { entries } => &entries.last().expect("leaf never empty").key,
            Node::Internal { children, .. } => {
                &children.last().expect("internal never empty").max_key
            }
        }
    }

    fn hash(&self) -> Digest {
        match self {
            Node::Leaf { entries } => {
                leaf_hash(entries.iter().map(|e| (e.key.as_slice(), e.value_hash)))
            }
            Node::Internal { children, .. } => {
                internal_hash(children.iter().map(|c| (c.max_key.as_slice(), c.hash)))
            }
        }
    }
}

/// `hash_node(leaf, ...)` over `len || key || value_hash` per entry.
fn leaf_hash<'a>(entries: impl Iterator<Item = (&'a [u8], Digest)>) -> Digest {
    let serialized: Vec<Vec<u8>> = entries.map(|(k, vh)| entry_bytes(k, vh)).collect();
    codec::hash_node(TAG_LEAF, &serialized).expect("leaf tag is valid")
}

fn internal_hash<'a>(entries: impl Iterator<Item = (&'a [u8], Digest)>) -> Digest {
    let serialized: Vec<Vec<u8>> = entries.map(|(k, h)| entry_bytes(k, h)).collect();
    codec::hash_node(TAG_INTERNAL, &serialized).expect("internal tag is valid")
}

fn entry_bytes(key: &[u8], digest: Digest) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + key.len() + 32);
    out.extend_from_slice(&(key.len() as u32).to_be_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&digest.0);
    out
}

/// An immutable snapshot of the index. Cloning is cheap (one `Arc`).
#[derive(Clone, Debug)]
pub struct Snapshot {
    root: Option<Arc<Node>>,
    root_hash: Digest,
    len: u64,
}

impl Default for Snapshot {
    fn default() -> Self {
        Snapshot::empty()
    }
}

impl Snapshot {
    pub fn empty() -> Snapshot {
        Snapshot {
            root: None,
            root_hash: codec::empty_root(),
            len: 0,
        }
    }

    pub fn root_hash(&self) -> Digest {
        self.root_hash
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of levels (1 for a single leaf, 0 when empty).
    pub fn height(&self) -> u32 {
        match &self.root {
            None => 0,
            Some(root) => root.level() as u32 + 1,
        }
    }

    /// Inserts a new entry, returning the successor snapshot. The receiver
    /// remains valid and unchanged. Fails on an exactly-equal key.
    pub fn insert(&self, key: &[u8], value_hash: Digest) -> Result<Snapshot, IndexError> {
        self.insert_impl(key, value_hash, false)
    }

    /// Like [`Snapshot::insert`] but replaces the value hash when the key is
    /// already present. Used by structures that model mutable views.
    pub fn upsert(&self, key: &[u8], value_hash: Digest) -> Snapshot {
        self.insert_impl(key, value_hash, true)
            .expect("upsert cannot collide")
    }

    fn insert_impl(
        &self,
        key: &[u8],
        value_hash: Digest,
        replace: bool,
    ) -> Result<Snapshot, IndexError> {
        let root = match &self.root {
            None => {
                let entry = LeafEntry {
                    key: key.to_vec(),
                    value_hash,
                    boundary: is_boundary(0, key),
                };
                Arc::new(Node::Leaf {
                    entries: vec![entry],
                })
            }
            Some(root) => {
                let (pieces, replaced) = insert_rec(root, key, value_hash, replace)?;
                if replaced {
                    return Ok(Snapshot {
                        root_hash: pieces[0].hash(),
                        root: Some(pieces.into_iter().next().unwrap()),
                        len: self.len,
                    });
                }
                build_root(pieces)
            }
        };
        Ok(Snapshot {
            root_hash: root.hash(),
            root: Some(root),
            len: self.len + 1,
        })
    }

    /// Point lookup without proof material.
    pub fn get(&self, key: &[u8]) -> Option<Digest> {
        let mut node = self.root.as_deref()?;
        loop {
            NODE_READS.fetch_add(1, Ordering::Relaxed);
            match node {
                Node::Leaf { entries } => {
                    return entries
                        .binary_search_by(|e| e.key.as_slice().cmp(key))
                        .ok()
                        .map(|i| entries[i].value_hash);
                }
                Node::Internal { children, .. } => {
                    let idx = route(children, key);
                    node = &children[idx].node;
                }
            }
        }
    }

    /// All entries with `low <= key <= high`, in key order, from one subtree
    /// walk (no per-result re-descent).
    pub fn scan(&self, low: &[u8], high: &[u8]) -> Result<Vec<(Vec<u8>, Digest)>, IndexError> {
        if low > high {
            return Err(IndexError::InvalidRange);
        }
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            scan_rec(root, low, high, &mut out);
        }
        Ok(out)
    }

    /// Builds a point proof: membership when the key is present,
    /// non-membership (with bracketing context on the path) when absent.
    pub fn prove_point(&self, key: &[u8]) -> MerkleProof {
        let kind = if self.get(key).is_some() {
            ProofKind::Membership
        } else {
            ProofKind::NonMembership
        };
        self.build_proof(kind, key, key)
    }

    /// Builds a completeness proof for the closed interval `[low, high]`.
    pub fn prove_range(&self, low: &[u8], high: &[u8]) -> Result<MerkleProof, IndexError> {
        if low > high {
            return Err(IndexError::InvalidRange);
        }
        Ok(self.build_proof(ProofKind::Range, low, high))
    }

    /// Builds the bottom-up node slice covering the routing window of
    /// `[low, high]`. For point kinds the window is a single path.
    fn build_proof(&self, kind: ProofKind, low: &[u8], high: &[u8]) -> MerkleProof {
        let mut levels: Vec<Vec<ProofNode>> = Vec::new();
        let Some(root) = &self.root else {
            return MerkleProof {
                kind,
                low: low.to_vec(),
                high: high.to_vec(),
                root: self.root_hash,
                levels,
            };
        };

        // Walk top-down, keeping the expanded window per level, then emit
        // levels bottom-up. `window` holds the nodes expanded at the current
        // level, left to right.
        let mut top_down: Vec<Vec<&Arc<Node>>> = vec![vec![root]];
        loop {
            let current: Vec<&Arc<Node>> = top_down.last().unwrap().clone();
            if matches!(current[0].as_ref(), Node::Leaf { .. }) {
                break;
            }
            // Concatenate the children of the window and pick the sub-window
            // routed by [low, high].
            let mut all: Vec<&ChildEntry> = Vec::new();
            for node in current {
                if let Node::Internal { children, .. } = node.as_ref() {
                    all.extend(children.iter());
                }
            }
            let (from, to) = window_bounds(&all, low, high);
            let next: Vec<&Arc<Node>> = all[from..=to].iter().map(|c| &c.node).collect();
            top_down.push(next);
        }

        // Emit bottom-up. Child indices are global per level.
        for depth in (0..top_down.len()).rev() {
            let window = &top_down[depth];
            let mut level_nodes = Vec::with_capacity(window.len());
            for node in window {
                NODE_READS.fetch_add(1, Ordering::Relaxed);
                match node.as_ref() {
                    Node::Leaf { entries } => level_nodes.push(ProofNode {
                        entries: entries
                            .iter()
                            .map(|e| ProofEntry {
                                key: e.key.clone(),
                                link: ProofLink::Hash(e.value_hash),
                            })
                            .collect(),
                    }),
                    Node::Internal { children, .. } => {
                        // A child is expanded iff it is part of the next
                        // (already emitted) window; expanded children are
                        // exactly `top_down[depth + 1]`, in order.
                        let expanded = &top_down[depth + 1];
                        let mut next_expanded = 0usize;
                        // Count how many expanded children belong to earlier
                        // nodes of this level.
                        for prior in &top_down[depth][..level_nodes.len()] {
                            if let Node::Internal { children, .. } = prior.as_ref() {
                                next_expanded += children
                                    .iter()
                                    .filter(|c| {
                                        expanded.iter().any(|e| Arc::ptr_eq(e, &c.node))
                                    })
                                    .count();
                            }
                        }
                        let mut consumed = 0usize;
                        let entries = children
                            .iter()
                            .map(|c| {
                                let is_expanded =
                                    expanded.iter().any(|e| Arc::ptr_eq(e, &c.node));
                                let link = if is_expanded {
                                    let idx = (next_expanded + consumed) as u32;
                                    consumed += 1;
                                    ProofLink::Node(idx)
                                } else {
                                    ProofLink::Hash(c.hash)
                                };
                                ProofEntry {
                                    key: c.max_key.clone(),
                                    link,
                                }
                            })
                            .collect();
                        level_nodes.push(ProofNode { entries });
                    }
                }
            }
            levels.push(level_nodes);
        }

        MerkleProof {
            kind,
            low: low.to_vec(),
            high: high.to_vec(),
            root: self.root_hash,
            levels,
        }
    }

    /// Entry count and node count actually allocated; test support for the
    /// structural-sharing property.
    #[doc(hidden)]
    pub fn node_addresses(&self) -> Vec<usize> {
        let mut out = Vec::new();
        fn walk(node: &Arc<Node>, out: &mut Vec<usize>) {
            out.push(Arc::as_ptr(node) as usize);
            if let Node::Internal { children, .. } = node.as_ref() {
                for c in children {
                    walk(&c.node, out);
                }
            }
        }
        if let Some(root) = &self.root {
            walk(root, &mut out);
        }
        out
    }
}

/// First child whose `max_key >= key`, or the last child when the key sorts
/// past every separator.
fn route(children: &[ChildEntry], key: &[u8]) -> usize {
    children
        .iter()
        .position(|c| c.max_key.as_slice() >= key)
        .unwrap_or(children.len() - 1)
}

/// Window of a concatenated child sequence covering `[low, high]`:
/// from the child routed by `low` through the child routed by `high`.
fn window_bounds(all: &[&ChildEntry], low: &[u8], high: &[u8]) -> (usize, usize) {
    let from = all
        .iter()
        .position(|c| c.max_key.as_slice() >= low)
        .unwrap_or(all.len() - 1);
    let to = all
        .iter()
        .position(|c| c.max_key.as_slice() >= high)
        .unwrap_or(all.len() - 1);
    (from, to.max(from))
}

fn scan_rec(node: &Arc<Node>, low: &[u8], high: &[u8], out: &mut Vec<(Vec<u8>, Digest)>) {
    NODE_READS.fetch_add(1, Ordering::Relaxed);
    match node.as_ref() {
        Node::Leaf { entries } => {
            for e in entries {
                if e.key.as_slice() >= low && e.key.as_slice() <= high {
                    out.push((e.key.clone(), e.value_hash));
                }
            }
        }
        Node::Internal { children, .. } => {
            let mut prev_max: Option<&[u8]> = None;
            for c in children {
                // Skip subtrees entirely below `low` or entirely above `high`.
                let below = c.max_key.as_slice() < low;
                let above = prev_max.is_some_and(|p| p > high);
                if !below && !above {
                    scan_rec(&c.node, low, high, out);
                }
                prev_max = Some(&c.max_key);
            }
        }
    }
}

/// Inserts into the subtree; returns the replacement node(s) (two when a new
/// boundary key cuts the node) and whether an existing key was replaced.
fn insert_rec(
    node: &Arc<Node>,
    key: &[u8],
    value_hash: Digest,
    replace: bool,
) -> Result<(Vec<Arc<Node>>, bool), IndexError> {
    match node.as_ref() {
        Node::Leaf { entries } => {
            let mut new_entries = entries.clone();
            match new_entries.binary_search_by(|e| e.key.as_slice().cmp(key)) {
                Ok(pos) => {
                    if !replace {
                        return Err(IndexError::DuplicateKey);
                    }
                    new_entries[pos].value_hash = value_hash;
                    return Ok((vec![Arc::new(Node::Leaf { entries: new_entries })], true));
                }
                Err(pos) => new_entries.insert(
                    pos,
                    LeafEntry {
                        key: key.to_vec(),
                        value_hash,
                        boundary: is_boundary(0, key),
                    },
                ),
            }
            Ok((split_leaf(new_entries), false))
        }
        Node::Internal { level, children } => {
            let idx = route(children, key);
            let (pieces, replaced) = insert_rec(&children[idx].node, key, value_hash, replace)?;
            let mut new_children = Vec::with_capacity(children.len() + 1);
            new_children.extend_from_slice(&children[..idx]);
            for piece in pieces {
                new_children.push(child_entry(piece, *level));
            }
            new_children.extend_from_slice(&children[idx + 1..]);
            Ok((split_internal(*level, new_children), replaced))
        }
    }
}

fn child_entry(node: Arc<Node>, parent_level: u8) -> ChildEntry {
    let max_key = node.max_key().to_vec();
    ChildEntry {
        hash: node.hash(),
        boundary: is_boundary(parent_level, &max_key),
        node,
        max_key,
    }
}

/// Cuts a leaf's entry run after every boundary entry (the trailing entry
/// never cuts: a cut after the final element is vacuous).
fn split_leaf(entries: Vec<LeafEntry>) -> Vec<Arc<Node>> {
    let mut nodes = Vec::new();
    let mut current: Vec<LeafEntry> = Vec::new();
    let last = entries.len() - 1;
    for (i, e) in entries.into_iter().enumerate() {
        let cut = e.boundary && i != last;
        current.push(e);
        if cut {
            nodes.push(Arc::new(Node::Leaf {
                entries: std::mem::take(&mut current),
            }));
        }
    }
    if !current.is_empty() {
        nodes.push(Arc::new(Node::Leaf { entries: current }));
    }
    nodes
}

fn split_internal(level: u8, children: Vec<ChildEntry>) -> Vec<Arc<Node>> {
    let mut nodes = Vec::new();
    let mut current: Vec<ChildEntry> = Vec::new();
    let last = children.len() - 1;
    for (i, c) in children.into_iter().enumerate() {
        let cut = c.boundary && i != last;
        current.push(c);
        if cut {
            nodes.push(Arc::new(Node::Internal {
                level,
                children: std::mem::take(&mut current),
            }));
        }
    }
    if !current.is_empty() {
        nodes.push(Arc::new(Node::Internal { level, children: current }));
    }
    nodes
}

/// Wraps sibling pieces in parent levels until a single root remains.
fn build_root(mut pieces: Vec<Arc<Node>>) -> Arc<Node> {
    while pieces.len() > 1 {
        let level = pieces[0].level() + 1;
        let children: Vec<ChildEntry> =
            pieces.into_iter().map(|p| child_entry(p, level)).collect();
        pieces = split_internal(level, children);
    }
    pieces.into_iter().next().expect("at least one piece")
}

// ---------------------------------------------------------------------------
// Proofs
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ProofKind {
    Membership,
    NonMembership,
    Range,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProofLink {
    /// Opaque digest: a leaf entry's value hash, or a child subtree outside
    /// the proof window.
    Hash(Digest),
    /// Reference to the n-th node (left to right) of the level below.
    Node(u32),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProofEntry {
    pub key: Vec<u8>,
    pub link: ProofLink,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProofNode {
    pub entries: Vec<ProofEntry>,
}

/// What a structurally valid proof asserts; produced by
/// [`MerkleProof::check`] after replaying hashes against the claimed root.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProofClaim {
    /// `key` maps to `value_hash` under the proof's root.
    Membership { key: Vec<u8>, value_hash: Digest },
    /// `key` is absent under the proof's root.
    NonMembership { key: Vec<u8> },
    /// These are *exactly* the entries in `[low, high]` under the root.
    Range {
        low: Vec<u8>,
        high: Vec<u8>,
        entries: Vec<(Vec<u8>, Digest)>,
    },
}

/// A bottom-up slice of the index proving one claim against a root digest.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MerkleProof {
    pub kind: ProofKind,
    pub low: Vec<u8>,
    pub high: Vec<u8>,
    /// Root digest the slice replays to. The verifier additionally checks
    /// this digest is the one committed in the referenced block.
    pub root: Digest,
    /// `levels[0]` are leaves; the last level must contain exactly the root.
    pub levels: Vec<Vec<ProofNode>>,
}

impl MerkleProof {
    /// Replays the slice and validates structure, ordering, routing, and
    /// coverage. On success returns the claim this proof establishes.
    ///
    /// The caller still owns two checks: that `self.root` equals the index
    /// root committed in a ledger block, and that returned value hashes match
    /// the actual response payload.
    pub fn check(&self) -> Result<ProofClaim, ProofFault> {
        if self.low > self.high {
            return Err(ProofFault("low bound sorts after high bound"));
        }
        match self.kind {
            ProofKind::Membership | ProofKind::NonMembership => {
                if self.low != self.high {
                    return Err(ProofFault("point proof bounds must be equal"));
                }
            }
            ProofKind::Range => {}
        }

        // Empty tree: no levels, sentinel root.
        if self.levels.is_empty() {
            if self.root != codec::empty_root() {
                return Err(ProofFault("empty proof must carry the empty-tree root"));
            }
            return match self.kind {
                ProofKind::Membership => {
                    Err(ProofFault("membership proof cannot be empty"))
                }
                ProofKind::NonMembership => Ok(ProofClaim::NonMembership {
                    key: self.low.clone(),
                }),
                ProofKind::Range => Ok(ProofClaim::Range {
                    low: self.low.clone(),
                    high: self.high.clone(),
                    entries: Vec::new(),
                }),
            };
        }

        // Pass 1: structural replay, bottom-up.
        let mut below_hashes: Vec<Digest> = Vec::new();
        let mut below_max_keys: Vec<Vec<u8>> = Vec::new();
        for (depth, level) in self.levels.iter().enumerate() {
            if level.is_empty() {
                return Err(ProofFault("level lists no nodes"));
            }
            let mut hashes = Vec::with_capacity(level.len());
            let mut max_keys = Vec::with_capacity(level.len());
            let mut next_child = 0u32;
            let mut prev_key: Option<&[u8]> = None;
            for node in level {
                if node.entries.is_empty() {
                    return Err(ProofFault("node lists no entries"));
                }
                for entry in &node.entries {
                    if prev_key.is_some_and(|p| p >= entry.key.as_slice()) {
                        return Err(ProofFault("entries out of order"));
                    }
                    prev_key = Some(&entry.key);
                    match &entry.link {
                        ProofLink::Hash(_) => {}
                        ProofLink::Node(idx) => {
                            if depth == 0 {
                                return Err(ProofFault("leaf entry links to a node"));
                            }
                            if *idx != next_child {
                                return Err(ProofFault("child links must be sequential"));
                            }
                            let child = below_hashes
                                .get(*idx as usize)
                                .ok_or(ProofFault("child link out of bounds"))?;
                            let _ = child;
                            if below_max_keys[*idx as usize] != entry.key {
                                return Err(ProofFault(
                                    "separator key does not match child max key",
                                ));
                            }
                            next_child += 1;
                        }
                    }
                }
                let resolved: Vec<(&[u8], Digest)> = node
                    .entries
                    .iter()
                    .map(|e| {
                        let digest = match &e.link {
                            ProofLink::Hash(h) => *h,
                            ProofLink::Node(idx) => below_hashes[*idx as usize],
                        };
                        (e.key.as_slice(), digest)
                    })
                    .collect();
                let hash = if depth == 0 {
                    leaf_hash(resolved.into_iter())
                } else {
                    internal_hash(resolved.into_iter())
                };
                hashes.push(hash);
                max_keys.push(node.entries.last().unwrap().key.clone());
            }
            if depth > 0 && next_child as usize != below_hashes.len() {
                return Err(ProofFault("level leaves children unlinked"));
            }
            below_hashes = hashes;
            below_max_keys = max_keys;
        }
        if below_hashes.len() != 1 {
            return Err(ProofFault("top level must contain exactly the root"));
        }
        if below_hashes[0] != self.root {
            return Err(ProofFault("replayed root does not match claimed root"));
        }

        // Pass 2: routing and coverage. Per level, the linked (expanded)
        // entries must form one contiguous block; everything before it must
        // sort below `low`, and the block may only end early if its last
        // separator reaches `high`.
        for (depth, level) in self.levels.iter().enumerate() {
            let entries: Vec<&ProofEntry> =
                level.iter().flat_map(|n| n.entries.iter()).collect();
            let linked: Vec<usize> = entries
                .iter()
                .enumerate()
                .filter(|(_, e)| matches!(e.link, ProofLink::Node(_)))
                .map(|(i, _)| i)
                .collect();
            let (first, last) = if depth == self.levels.len() - 1 && depth > 0 {
                // The root node's window is its linked entries.
                match (linked.first(), linked.last()) {
                    (Some(f), Some(l)) => (*f, *l),
                    _ => return Err(ProofFault("root links no children")),
                }
            } else if depth == 0 {
                // Leaves: the window is every listed entry.
                (0, entries.len() - 1)
            } else {
                match (linked.first(), linked.last()) {
                    (Some(f), Some(l)) => (*f, *l),
                    _ => return Err(ProofFault("internal level links no children")),
                }
            };
            if depth > 0 && linked.len() != last - first + 1 {
                return Err(ProofFault("expanded window must be contiguous"));
            }

            if depth > 0 {
                // Entries before the window exclude subtrees wholly below low.
                for e in &entries[..first] {
                    if e.key.as_slice() >= self.low.as_slice() {
                        return Err(ProofFault("unexpanded child may cover the range"));
                    }
                }
                // The window may only stop before the end if it reached high.
                if last + 1 < entries.len() && entries[last].key.as_slice() < self.high.as_slice()
                {
                    return Err(ProofFault("window ends before reaching the high bound"));
                }
                // Point proofs expand exactly one child per level.
                if self.kind != ProofKind::Range && linked.len() != 1 {
                    return Err(ProofFault("point proof must follow a single path"));
                }
            }
        }
        for level in &self.levels {
            if self.kind != ProofKind::Range && level.len() != 1 {
                return Err(ProofFault("point proof lists one node per level"));
            }
        }

        // Claim extraction from the leaf level.
        let leaf_entries: Vec<(&[u8], Digest)> = self.levels[0]
            .iter()
            .flat_map(|n| n.entries.iter())
            .map(|e| match &e.link {
                ProofLink::Hash(h) => Ok((e.key.as_slice(), *h)),
                ProofLink::Node(_) => Err(ProofFault("leaf entry links to a node")),
            })
            .collect::<Result<_, _>>()?;

        match self.kind {
            ProofKind::Membership => {
                let hit = leaf_entries
                    .iter()
                    .find(|(k, _)| *k == self.low.as_slice())
                    .ok_or(ProofFault("membership proof does not contain the key"))?;
                Ok(ProofClaim::Membership {
                    key: self.low.clone(),
                    value_hash: hit.1,
                })
            }
            ProofKind::NonMembership => {
                if leaf_entries.iter().any(|(k, _)| *k == self.low.as_slice()) {
                    return Err(ProofFault("non-membership proof contains the key"));
                }
                Ok(ProofClaim::NonMembership {
                    key: self.low.clone(),
                })
            }
            ProofKind::Range => {
                let entries: Vec<(Vec<u8>, Digest)> = leaf_entries
                    .iter()
                    .filter(|(k, _)| {
                        *k >= self.low.as_slice() && *k <= self.high.as_slice()
                    })
                    .map(|(k, h)| (k.to_vec(), *h))
                    .collect();
                Ok(ProofClaim::Range {
                    low: self.low.clone(),
                    high: self.high.clone(),
                    entries,
                })
            }
        }
    }

    /// Canonical binary serialization; the wire and storage format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(match self.kind {
            ProofKind::Membership => 0u8,
            ProofKind::NonMembership => 1,
            ProofKind::Range => 2,
        });
        put_len_prefixed(&mut out, &self.low);
        put_len_prefixed(&mut out, &self.high);
        out.extend_from_slice(&self.root.0);
        out.extend_from_slice(&(self.levels.len() as u32).to_be_bytes());
        for level in &self.levels {
            out.extend_from_slice(&(level.len() as u32).to_be_bytes());
            for node in level {
                out.extend_from_slice(&(node.entries.len() as u32).to_be_bytes());
                for entry in &node.entries {
                    put_len_prefixed(&mut out, &entry.key);
                    match &entry.link {
                        ProofLink::Hash(h) => {
                            out.push(0);
                            out.extend_from_slice(&h.0);
                        }
                        ProofLink::Node(idx) => {
                            out.push(1);
                            out.extend_from_slice(&idx.to_be_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    /// Strict parse of [`MerkleProof::to_bytes`]: trailing bytes and
    /// truncations are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<MerkleProof, ProofFault> {
        let mut r = Reader(bytes);
        let kind = match r.u8()? {
            0 => ProofKind::Membership,
            1 => ProofKind::NonMembership,
            2 => ProofKind::Range,
            _ => return Err(ProofFault("unknown proof kind")),
        };
        let low = r.len_prefixed()?.to_vec();
        let high = r.len_prefixed()?.to_vec();
        let root = Digest::from_slice(r.take(32)?)
            .map_err(|_| ProofFault("bad root digest"))?;
        let level_count = r.u32()? as usize;
        let mut levels = Vec::with_capacity(level_count.min(64));
        for _ in 0..level_count {
            let node_count = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(node_count.min(1024));
            for _ in 0..node_count {
                let entry_count = r.u32()? as usize;
                let mut entries = Vec::with_capacity(entry_count.min(4096));
                for _ in 0..entry_count {
                    let key = r.len_prefixed()?.to_vec();
                    let link = match r.u8()? {
                        0 => ProofLink::Hash(
                            Digest::from_slice(r.take(32)?)
                                .map_err(|_| ProofFault("bad link digest"))?,
                        ),
                        1 => ProofLink::Node(r.u32()?),
                        _ => return Err(ProofFault("unknown link marker")),
                    };
                    entries.push(ProofEntry { key, link });
                }
                nodes.push(ProofNode { entries });
            }
            levels.push(nodes);
        }
        if !r.0.is_empty() {
            return Err(ProofFault("trailing bytes after proof"));
        }
        Ok(MerkleProof {
            kind,
            low,
            high,
            root,
            levels,
        })
    }
}

fn put_len_prefixed(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProofFault> {
        if self.0.len() < n {
            return Err(ProofFault("truncated proof"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ProofFault> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProofFault> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len_prefixed(&mut self) -> Result<&'a [u8], ProofFault> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

/// Reference model used by the differential tests: the index must behave as a
/// sorted map from encoded keys to value hashes.
#[cfg(test)]
fn oracle_scan(
    model: &std::collections::BTreeMap<Vec<u8>, Digest>,
    low: &[u8],
    high: &[u8],
) -> Vec<(Vec<u8>, Digest)> {
    model
        .range(low.to_vec()..=high.to_vec())
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}
