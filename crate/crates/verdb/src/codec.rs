//! Canonical encodings and hashing.
//!
//! Everything the engine commits to — index nodes, blocks, stored values —
//! goes through this module, so the rules here are load-bearing for the whole
//! system:
//!
//! - All digests are SHA-256. [`Digest`] renders as lowercase hex.
//! - Structural hashes are domain-separated: [`hash_node`] prefixes a tag byte
//!   (leaf / internal / block) and length-prefixes every child, so no leaf
//!   preimage can collide with an internal node or a block, and child
//!   boundaries cannot be reinterpreted.
//! - [`UniversalKey::encode`] is order-preserving: comparing encodings as raw
//!   bytes gives exactly the `(column, primary_key, timestamp)` tuple order.
//!   The value hash is appended for identity but never decides the order of
//!   two distinct cell versions (a committed version is unique per
//!   `(column, primary_key, timestamp)`).
//! - [`CellValue::canonical_encoding`] fixes one byte string per value, which
//!   is what gets chunked, stored, and hashed into `value_hash`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Domain-separation tag for leaf nodes of the Merkle index.
pub const TAG_LEAF: u8 = 0x00;
/// Domain-separation tag for internal nodes of the Merkle index.
pub const TAG_INTERNAL: u8 = 0x01;
/// Domain-separation tag for ledger block headers.
pub const TAG_BLOCK: u8 = 0x02;

/// Maximum length of a column identifier, in bytes.
pub const MAX_COLUMN_LEN: usize = 64;
/// Maximum length of a primary key, in bytes.
pub const MAX_PRIMARY_KEY_LEN: usize = 1024;

static HASH_INVOCATIONS: AtomicU64 = AtomicU64::new(0);

/// Total number of hash invocations since process start.
///
/// This is a cheap relaxed counter used by the benchmark harness and by the
/// batch-verification amortization checks; it is not synchronization.
pub fn hash_invocations() -> u64 {
    HASH_INVOCATIONS.load(Ordering::Relaxed)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("{field} must not be empty")]
    EmptyField { field: &'static str },
    #[error("{field} is {len} bytes, limit is {max}")]
    FieldTooLong {
        field: &'static str,
        len: usize,
        max: usize,
    },
    #[error("unknown node tag {0:#04x}")]
    UnknownTag(u8),
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
}

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Digest, CodecError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CodecError::Malformed("digest must be exactly 32 bytes"))?;
        Ok(Digest(arr))
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push(char::from_digit((b >> 4) as u32, 16).unwrap());
            s.push(char::from_digit((b & 0xf) as u32, 16).unwrap());
        }
        s
    }

    pub fn from_hex(hex: &str) -> Result<Digest, CodecError> {
        if hex.len() != 64 {
            return Err(CodecError::Malformed("digest hex must be 64 characters"));
        }
        let mut out = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char)
                .to_digit(16)
                .ok_or(CodecError::Malformed("invalid hex digit in digest"))?;
            let lo = (chunk[1] as char)
                .to_digit(16)
                .ok_or(CodecError::Malformed("invalid hex digit in digest"))?;
            out[i] = ((hi << 4) | lo) as u8;
        }
        Ok(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl serde::Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Digest, D::Error> {
        let s = String::deserialize(de)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 of a raw byte string.
pub fn hash_bytes(data: &[u8]) -> Digest {
    HASH_INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    let mut h = Sha256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// Domain-separated structural hash: `SHA-256(tag || len(c_0) || c_0 || ...)`
/// with each child length as a big-endian `u32`.
///
/// The tag must be one of [`TAG_LEAF`], [`TAG_INTERNAL`], [`TAG_BLOCK`].
/// Length prefixes make the encoding injective: the children `["ab", "c"]`
/// and `["a", "bc"]` hash differently even though their concatenations agree.
pub fn hash_node<C: AsRef<[u8]>>(tag: u8, children: &[C]) -> Result<Digest, CodecError> {
    if tag > TAG_BLOCK {
        return Err(CodecError::UnknownTag(tag));
    }
    HASH_INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    let mut h = Sha256::new();
    h.update([tag]);
    for child in children {
        let child = child.as_ref();
        h.update((child.len() as u32).to_be_bytes());
        h.update(child);
    }
    Ok(Digest(h.finalize().into()))
}

/// Root digest of an empty Merkle index: the hash of a leaf with no entries.
pub fn empty_root() -> Digest {
    hash_node(TAG_LEAF, &[] as &[&[u8]]).expect("leaf tag is valid")
}

/// Names one immutable cell version.
///
/// `timestamp` is the commit timestamp of the transaction that wrote the
/// version; `value_hash` is the digest of the value's canonical encoding.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct UniversalKey {
    pub column: String,
    pub primary_key: Vec<u8>,
    pub timestamp: u64,
    pub value_hash: Digest,
}

impl UniversalKey {
    pub fn new(
        column: impl Into<String>,
        primary_key: impl Into<Vec<u8>>,
        timestamp: u64,
        value_hash: Digest,
    ) -> Result<UniversalKey, CodecError> {
        let column = column.into();
        let primary_key = primary_key.into();
        if column.is_empty() {
            return Err(CodecError::EmptyField { field: "column" });
        }
        if column.len() > MAX_COLUMN_LEN {
            return Err(CodecError::FieldTooLong {
                field: "column",
                len: column.len(),
                max: MAX_COLUMN_LEN,
            });
        }
        if primary_key.is_empty() {
            return Err(CodecError::EmptyField {
                field: "primary_key",
            });
        }
        if primary_key.len() > MAX_PRIMARY_KEY_LEN {
            return Err(CodecError::FieldTooLong {
                field: "primary_key",
                len: primary_key.len(),
                max: MAX_PRIMARY_KEY_LEN,
            });
        }
        Ok(UniversalKey {
            column,
            primary_key,
            timestamp,
            value_hash,
        })
    }

    /// Order-preserving binary encoding.
    ///
    /// Variable-length fields use terminator escaping (`0x00` becomes
    /// `0x00 0xFF`, fields end with `0x00 0x00`), which keeps byte-wise
    /// comparison equal to tuple comparison for arbitrary contents. A plain
    /// length-prefixed layout would not be order-preserving: `"b"` sorts
    /// before `"ab"` once a length byte leads. The timestamp is big-endian
    /// and the value hash rides along at the end as an identity tiebreaker.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            self.column.len() + self.primary_key.len() + 4 + 8 + 32,
        );
        escape_into(&mut out, self.column.as_bytes());
        escape_into(&mut out, &self.primary_key);
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.value_hash.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<UniversalKey, CodecError> {
        let (column, rest) = unescape(bytes)?;
        let (primary_key, rest) = unescape(rest)?;
        if rest.len() != 8 + 32 {
            return Err(CodecError::Malformed(
                "key must end with 8-byte timestamp and 32-byte value hash",
            ));
        }
        let timestamp = u64::from_be_bytes(rest[..8].try_into().unwrap());
        let value_hash = Digest::from_slice(&rest[8..])?;
        let column = String::from_utf8(column)
            .map_err(|_| CodecError::Malformed("column is not valid UTF-8"))?;
        UniversalKey::new(column, primary_key, timestamp, value_hash)
    }

    /// Encodes only the `(column, primary_key, timestamp)` prefix, for use as
    /// a scan bound. With `timestamp = 0` this is the smallest possible
    /// encoding for the `(column, primary_key)` pair and with
    /// `timestamp = u64::MAX` it sorts after every version of the pair,
    /// because the value-hash suffix only extends equal prefixes.
    pub fn encode_bound(column: &str, primary_key: &[u8], timestamp: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(column.len() + primary_key.len() + 4 + 8);
        escape_into(&mut out, column.as_bytes());
        escape_into(&mut out, primary_key);
        out.extend_from_slice(&timestamp.to_be_bytes());
        out
    }
}

fn escape_into(out: &mut Vec<u8>, field: &[u8]) {
    for &b in field {
        if b == 0x00 {
            out.extend_from_slice(&[0x00, 0xFF]);
        } else {
            out.push(b);
        }
    }
    out.extend_from_slice(&[0x00, 0x00]);
}

fn unescape(bytes: &[u8]) -> Result<(Vec<u8>, &[u8]), CodecError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b != 0x00 {
            out.push(b);
            i += 1;
            continue;
        }
        match bytes.get(i + 1) {
            Some(0x00) => return Ok((out, &bytes[i + 2..])),
            Some(0xFF) => {
                out.push(0x00);
                i += 2;
            }
            _ => return Err(CodecError::Malformed("bad escape sequence in key field")),
        }
    }
    Err(CodecError::Malformed("unterminated key field"))
}

/// Kind discriminant for [`CellValue`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Int64,
    Utf8,
    Bytes,
    Tombstone,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueKind::Int64 => "int64",
            ValueKind::Utf8 => "utf8",
            ValueKind::Bytes => "bytes",
            ValueKind::Tombstone => "tombstone",
        };
        f.write_str(s)
    }
}

const KIND_INT64: u8 = 0x00;
const KIND_UTF8: u8 = 0x01;
const KIND_BYTES: u8 = 0x02;
const KIND_TOMBSTONE: u8 = 0x03;

/// A cell value. `Tombstone` marks a deletion; deletes are writes like any
/// other and keep the history replayable.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum CellValue {
    Int64(i64),
    Utf8(String),
    Bytes(Vec<u8>),
    Tombstone,
}

impl CellValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            CellValue::Int64(_) => ValueKind::Int64,
            CellValue::Utf8(_) => ValueKind::Utf8,
            CellValue::Bytes(_) => ValueKind::Bytes,
            CellValue::Tombstone => ValueKind::Tombstone,
        }
    }

    /// The one canonical byte string for this value: a kind byte followed by
    /// the payload. `Int64` payloads are big-endian with the sign bit
    /// flipped, so payload byte order equals numeric order.
    pub fn canonical_encoding(&self) -> Vec<u8> {
        match self {
            CellValue::Int64(v) => {
                let mut out = Vec::with_capacity(9);
                out.push(KIND_INT64);
                out.extend_from_slice(&sign_flip(*v).to_be_bytes());
                out
            }
            CellValue::Utf8(s) => {
                let mut out = Vec::with_capacity(1 + s.len());
                out.push(KIND_UTF8);
                out.extend_from_slice(s.as_bytes());
                out
            }
            CellValue::Bytes(b) => {
                let mut out = Vec::with_capacity(1 + b.len());
                out.push(KIND_BYTES);
                out.extend_from_slice(b);
                out
            }
            CellValue::Tombstone => vec![KIND_TOMBSTONE],
        }
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<CellValue, CodecError> {
        let (&kind, payload) = bytes
            .split_first()
            .ok_or(CodecError::Malformed("empty value encoding"))?;
        match kind {
            KIND_INT64 => {
                let arr: [u8; 8] = payload
                    .try_into()
                    .map_err(|_| CodecError::Malformed("int64 payload must be 8 bytes"))?;
                Ok(CellValue::Int64(sign_unflip(u64::from_be_bytes(arr))))
            }
            KIND_UTF8 => String::from_utf8(payload.to_vec())
                .map(CellValue::Utf8)
                .map_err(|_| CodecError::Malformed("utf8 payload is not valid UTF-8")),
            KIND_BYTES => Ok(CellValue::Bytes(payload.to_vec())),
            KIND_TOMBSTONE => {
                if payload.is_empty() {
                    Ok(CellValue::Tombstone)
                } else {
                    Err(CodecError::Malformed("tombstone carries no payload"))
                }
            }
            _ => Err(CodecError::Malformed("unknown value kind byte")),
        }
    }

    /// Digest of the canonical encoding; this is what universal keys carry.
    pub fn value_hash(&self) -> Digest {
        hash_bytes(&self.canonical_encoding())
    }

    pub fn is_tombstone(&self) -> bool {
        matches!(self, CellValue::Tombstone)
    }
}

fn sign_flip(v: i64) -> u64 {
    (v as u64) ^ (1 << 63)
}

fn sign_unflip(v: u64) -> i64 {
    (v ^ (1 << 63)) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sha256_golden_vectors() {
        assert_eq!(
            hash_bytes(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash_bytes(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_node_is_domain_separated_and_injective() {
        let children = [b"ab".as_slice(), b"c".as_slice()];
        let leaf = hash_node(TAG_LEAF, &children).unwrap();
        let internal = hash_node(TAG_INTERNAL, &children).unwrap();
        let block = hash_node(TAG_BLOCK, &children).unwrap();
        assert_ne!(leaf, internal);
        assert_ne!(leaf, block);
        assert_ne!(internal, block);
        // Concatenation-equal child splits must differ thanks to prefixes.
        let shifted = hash_node(TAG_LEAF, &[b"a".as_slice(), b"bc".as_slice()]).unwrap();
        assert_ne!(leaf, shifted);
        // And none of them may collide with a plain hash of the bytes.
        assert_ne!(leaf, hash_bytes(b"abc"));
    }

    #[test]
    fn hash_node_rejects_unknown_tags() {
        let err = hash_node(0x03, &[b"x".as_slice()]).unwrap_err();
        assert_eq!(err, CodecError::UnknownTag(0x03));
    }

    #[test]
    fn empty_root_is_the_empty_leaf() {
        assert_eq!(empty_root(), hash_node(TAG_LEAF, &[] as &[&[u8]]).unwrap());
    }

    #[test]
    fn key_validation() {
        let vh = CellValue::Tombstone.value_hash();
        assert_eq!(
            UniversalKey::new("", b"k".to_vec(), 1, vh).unwrap_err(),
            CodecError::EmptyField { field: "column" }
        );
        assert_eq!(
            UniversalKey::new("c", b"".to_vec(), 1, vh).unwrap_err(),
            CodecError::EmptyField {
                field: "primary_key"
            }
        );
        let long = "x".repeat(MAX_COLUMN_LEN + 1);
        assert!(matches!(
            UniversalKey::new(long, b"k".to_vec(), 1, vh).unwrap_err(),
            CodecError::FieldTooLong { field: "column", .. }
        ));
        let long_pk = vec![7u8; MAX_PRIMARY_KEY_LEN + 1];
        assert!(matches!(
            UniversalKey::new("c", long_pk, 1, vh).unwrap_err(),
            CodecError::FieldTooLong {
                field: "primary_key",
                ..
            }
        ));
    }

    #[test]
    fn key_round_trip_with_embedded_zeros() {
        let key = UniversalKey::new(
            "events",
            vec![0x00, 0xFF, 0x00, 0x00, 0x41],
            42,
            hash_bytes(b"v"),
        )
        .unwrap();
        let encoded = key.encode();
        assert_eq!(UniversalKey::decode(&encoded).unwrap(), key);
    }

    #[test]
    fn decode_rejects_truncation_and_trailing_bytes() {
        let key = UniversalKey::new("c", b"k".to_vec(), 7, hash_bytes(b"v")).unwrap();
        let encoded = key.encode();
        assert!(UniversalKey::decode(&encoded[..encoded.len() - 1]).is_err());
        let mut extended = encoded.clone();
        extended.push(0);
        assert!(UniversalKey::decode(&extended).is_err());
    }

    #[test]
    fn int64_payload_order_matches_numeric_order() {
        let values = [i64::MIN, -5, -1, 0, 1, 3, i64::MAX];
        for w in values.windows(2) {
            let a = CellValue::Int64(w[0]).canonical_encoding();
            let b = CellValue::Int64(w[1]).canonical_encoding();
            assert!(a < b, "{} should encode below {}", w[0], w[1]);
        }
    }

    #[test]
    fn tombstone_round_trip_and_strictness() {
        let enc = CellValue::Tombstone.canonical_encoding();
        assert_eq!(enc, vec![0x03]);
        assert_eq!(CellValue::from_canonical(&enc).unwrap(), CellValue::Tombstone);
        assert!(CellValue::from_canonical(&[0x03, 0x01]).is_err());
        assert!(CellValue::from_canonical(&[0x09]).is_err());
        assert!(CellValue::from_canonical(&[]).is_err());
    }

    fn arb_key() -> impl Strategy<Value = UniversalKey> {
        (
            proptest::collection::vec(any::<u8>(), 1..12),
            proptest::collection::vec(any::<u8>(), 1..20),
            any::<u64>(),
            any::<[u8; 32]>(),
        )
            .prop_map(|(col, pk, ts, vh)| {
                // Column ids are UTF-8; map raw bytes into a safe alphabet.
                let column: String = col
                    .into_iter()
                    .map(|b| char::from(b'a' + (b % 26)))
                    .collect();
                UniversalKey::new(column, pk, ts, Digest(vh)).unwrap()
            })
    }

    proptest! {
        /// Byte order of encodings must equal tuple order — checked against a
        /// brute-force tuple comparator, never against the encoder itself.
        #[test]
        fn encoding_order_matches_tuple_order(a in arb_key(), b in arb_key()) {
            let tuple_order = (&a.column, &a.primary_key, a.timestamp)
                .cmp(&(&b.column, &b.primary_key, b.timestamp));
            let byte_order = a.encode().cmp(&b.encode());
            if tuple_order != std::cmp::Ordering::Equal {
                prop_assert_eq!(byte_order, tuple_order);
            }
        }

        #[test]
        fn encoding_round_trips(k in arb_key()) {
            prop_assert_eq!(UniversalKey::decode(&k.encode()).unwrap(), k);
        }

        #[test]
        fn value_encoding_round_trips(v in arb_value()) {
            let enc = v.canonical_encoding();
            prop_assert_eq!(CellValue::from_canonical(&enc).unwrap(), v);
        }
    }

    fn arb_value() -> impl Strategy<Value = CellValue> {
        prop_oneof![
            any::<i64>().prop_map(CellValue::Int64),
            ".{0,40}".prop_map(CellValue::Utf8),
            proptest::collection::vec(any::<u8>(), 0..64).prop_map(CellValue::Bytes),
            Just(CellValue::Tombstone),
        ]
    }
}
