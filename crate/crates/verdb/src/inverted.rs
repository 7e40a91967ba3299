//! The inverted value index: canonical value encoding → universal keys.
//!
//! This is the analytical sidecar of the primary index. It answers "which
//! cells hold value v" (equality) and "which cells hold values in [lo, hi]"
//! (range) by keeping, per column, an ordered map from canonical value
//! encodings to sorted posting sets of universal keys. Because canonical
//! encodings are order-preserving within a kind (sign-flipped big-endian for
//! integers, raw bytes for strings), one comparison-ordered map serves both
//! numeric and string columns.
//!
//! The index is versioned: every write — including tombstones — is recorded,
//! and queries apply latest-version semantics at lookup time: for each
//! primary key, only the newest version at or below the queried timestamp
//! counts, and it is dropped if that version is a deletion or holds a
//! different value than asked.
//!
//! The structure is a rebuildable cache. It is not authenticated; callers
//! bridge every returned key to a membership proof from the primary index.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::codec::{CellValue, UniversalKey, ValueKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InvertedError {
    #[error("column {column} holds {expected} values, got {got}")]
    KindMismatch {
        column: String,
        expected: ValueKind,
        got: ValueKind,
    },
    #[error("column {0} is not indexed")]
    UnknownColumn(String),
    #[error("invalid range: {0}")]
    InvalidRange(&'static str),
}

struct ColumnIndex {
    kind: ValueKind,
    /// Canonical value encoding → all keys ever written with that value.
    postings: BTreeMap<Vec<u8>, BTreeSet<UniversalKey>>,
    /// Primary key → commit timestamp → whether that version is a tombstone.
    /// This is the per-key version history the latest-version pass walks.
    versions: HashMap<Vec<u8>, BTreeMap<u64, bool>>,
}

impl ColumnIndex {
    fn new(kind: ValueKind) -> ColumnIndex {
        ColumnIndex {
            kind,
            postings: BTreeMap::new(),
            versions: HashMap::new(),
        }
    }
}

/// In-memory inverted index over every indexed column.
#[derive(Default)]
pub struct InvertedIndex {
    columns: HashMap<String, ColumnIndex>,
}

impl InvertedIndex {
    pub fn new() -> InvertedIndex {
        InvertedIndex::default()
    }

    pub fn column_kind(&self, column: &str) -> Option<ValueKind> {
        self.columns.get(column).map(|c| c.kind)
    }

    /// Records one written cell version. The first non-tombstone value seen
    /// for a column fixes the column's kind; later writes of a different
    /// kind are rejected. Tombstones are kind-agnostic: they extend the
    /// version history but gain no posting. Idempotent.
    pub fn index_put(
        &mut self,
        value: &CellValue,
        key: UniversalKey,
    ) -> Result<(), InvertedError> {
        let column = self
            .columns
            .entry(key.column.clone())
            .or_insert_with(|| ColumnIndex::new(value.kind()));
        if value.is_tombstone() {
            column
                .versions
                .entry(key.primary_key)
                .or_default()
                .insert(key.timestamp, true);
            return Ok(());
        }
        if column.kind == ValueKind::Tombstone {
            // Column was created by a tombstone-first history; adopt the
            // first real kind seen.
            column.kind = value.kind();
        }
        if value.kind() != column.kind {
            return Err(InvertedError::KindMismatch {
                column: key.column,
                expected: column.kind,
                got: value.kind(),
            });
        }
        column
            .versions
            .entry(key.primary_key.clone())
            .or_default()
            .insert(key.timestamp, false);
        column
            .postings
            .entry(value.canonical_encoding())
            .or_default()
            .insert(key);
        Ok(())
    }

    /// Keys whose cell holds exactly `value`, under latest-version semantics
    /// at `as_of` (`None` = now). Sorted, duplicate-free.
    pub fn lookup_eq(
        &self,
        column: &str,
        value: &CellValue,
        as_of: Option<u64>,
    ) -> Result<Vec<UniversalKey>, InvertedError> {
        let col = self
            .columns
            .get(column)
            .ok_or_else(|| InvertedError::UnknownColumn(column.to_string()))?;
        if col.kind == ValueKind::Tombstone {
            // Only deletions so far: the column has no kind yet and no live
            // values, so every lookup is trivially empty.
            return Ok(Vec::new());
        }
        if value.kind() != col.kind {
            return Err(InvertedError::KindMismatch {
                column: column.to_string(),
                expected: col.kind,
                got: value.kind(),
            });
        }
        let cutoff = as_of.unwrap_or(u64::MAX);
        let mut out = Vec::new();
        if let Some(keys) = col.postings.get(&value.canonical_encoding()) {
            for key in keys {
                if col.is_live(key, cutoff) {
                    out.push(key.clone());
                }
            }
        }
        Ok(out)
    }

    /// `(value, key)` pairs with `low ≤ value ≤ high`, in (value, key)
    /// order, under latest-version semantics at `as_of`. Only ordered kinds
    /// (integers, strings) support ranges.
    pub fn lookup_range(
        &self,
        column: &str,
        low: &CellValue,
        high: &CellValue,
        as_of: Option<u64>,
    ) -> Result<Vec<(CellValue, UniversalKey)>, InvertedError> {
        let col = self
            .columns
            .get(column)
            .ok_or_else(|| InvertedError::UnknownColumn(column.to_string()))?;
        if col.kind == ValueKind::Tombstone {
            // Only deletions so far: no live values, trivially empty.
            return Ok(Vec::new());
        }
        if !matches!(col.kind, ValueKind::Int64 | ValueKind::Utf8) {
            return Err(InvertedError::InvalidRange(
                "range queries need an ordered value kind",
            ));
        }
        for bound in [low, high] {
            if bound.kind() != col.kind {
                return Err(InvertedError::KindMismatch {
                    column: column.to_string(),
                    expected: col.kind,
                    got: bound.kind(),
                });
            }
        }
        let lo = low.canonical_encoding();
        let hi = high.canonical_encoding();
        if lo > hi {
            return Err(InvertedError::InvalidRange("low bound above high bound"));
        }
        let cutoff = as_of.unwrap_or(u64::MAX);
        let mut out = Vec::new();
        for (encoding, keys) in col.postings.range(lo..=hi) {
            let value = CellValue::from_canonical(encoding)
                .expect("postings store canonical encodings");
            for key in keys {
                if col.is_live(key, cutoff) {
                    out.push((value.clone(), key.clone()));
                }
            }
        }
        Ok(out)
    }

    /// Every posting in the index: `(column, value, key)`, for integrity
    /// sweeps and rebuild comparisons.
    pub fn iter_postings(
        &self,
    ) -> impl Iterator<Item = (&str, CellValue, &UniversalKey)> + '_ {
        self.columns.iter().flat_map(|(name, col)| {
            col.postings.iter().flat_map(move |(encoding, keys)| {
                let value =
                    CellValue::from_canonical(encoding).expect("canonical by construction");
                keys.iter().map(move |k| (name.as_str(), value.clone(), k))
            })
        })
    }
}

impl ColumnIndex {
    /// A posting is live at `cutoff` iff it is the newest version of its
    /// primary key at or below `cutoff` and that version is not a deletion.
    fn is_live(&self, key: &UniversalKey, cutoff: u64) -> bool {
        if key.timestamp > cutoff {
            return false;
        }
        match self.versions.get(&key.primary_key) {
            Some(history) => history
                .range(..=cutoff)
                .next_back()
                .map(|(ts, tombstone)| *ts == key.timestamp && !tombstone)
                .unwrap_or(false),
            None => false,
        }
    }
}
