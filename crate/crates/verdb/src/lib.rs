//! An embeddable, single-node verifiable database engine.
//!
//! Every write is immutable and multi-versioned: a cell version is named by a
//! universal key `(column, primary_key, timestamp, value_hash)` and its bytes
//! live in a content-addressed, deduplicating chunk store. One Merkle-augmented
//! B+-tree serves both regular queries and integrity proofs, so a lookup and
//! the evidence for it come out of a single traversal. Committed transactions
//! are batched into hash-chained blocks; the block chain is the auditable
//! commitment clients anchor against.
//!
//! The crate is organised bottom-up:
//!
//! - [`codec`]: digests, domain-separated hashing, order-preserving key
//!   encoding, canonical value encoding.
//! - [`merkle`]: the copy-on-write Merkle B+-tree with membership,
//!   non-membership, and range-completeness proofs.
//! - [`chunk`] / [`store`]: content-defined chunking and the append-only,
//!   verify-on-read cell store.
//! - [`ledger`]: hash-chained blocks, the on-disk journal, audits, and
//!   chain-segment inclusion proofs.
//! - [`inverted`]: the secondary value index (value -> universal keys).
//! - [`engine`]: MVCC transactions with timestamp-ordering validation, block
//!   sealing, queries with proofs, and crash recovery by journal replay.
//! - [`verify`]: the client-side verifier — trust anchors, response
//!   verification, and deferred batch verification.
//! - [`api`] / [`server`]: the newline-delimited JSON wire protocol and a
//!   minimal TCP front end.

pub mod api;
pub mod chunk;
pub mod codec;
pub mod engine;
pub mod inverted;
pub mod ledger;
pub mod merkle;
pub mod server;
pub mod store;
pub mod verify;

pub use codec::{CellValue, CodecError, Digest, UniversalKey, ValueKind};
pub use engine::{CommitReceipt, Engine, EngineConfig, EngineError, QueryResponse, QueryRow, ReadRequest, Transaction};
pub use ledger::{BlockHeader, ChainCommitment, LedgerError};
pub use store::{Durability, StoreError};


pub use merkle::{IndexError, MerkleProof, Snapshot};
pub use verify::{AnchorError, DeferredVerifier, TrustAnchor, VerificationJob, Verifier, VerifyFailure};


