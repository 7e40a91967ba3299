//! The hash-chained block journal.
//!
//! Every committed write lands in a block; every block commits to its
//! predecessor by hash, to its transaction records and request statements by
//! digest, and to the authenticated index root as of its commit point. The
//! whole history is therefore pinned by a single `(height, tip_hash)` pair —
//! the [`ChainCommitment`] clients persist — and any byte of any persisted
//! block that changes after the fact is detectable by [`Ledger::audit_chain`].
//!
//! On disk the journal is one append-only file of framed blocks:
//!
//! ```text
//! frame  := body_len u32 BE | body | block_hash (32 bytes)
//! body   := header (156 bytes) | records blob | statements blob
//! header := height u64 | prev_hash | index_root | ts_lo u64 | ts_hi u64
//!           | record_count u32 | records_hash | statements_hash
//! ```
//!
//! `block_hash = hash_node(0x02, [the eight header fields])`, so a compact
//! header alone recomputes the hash; the two blob digests inside it extend
//! the commitment to the full record and statement contents. Chain-segment
//! inclusion proofs ([`Ledger::block_proof`]) exploit this: a block plus the
//! ordered successor headers up to the tip let a client rebuild `tip_hash`
//! without downloading any other block bodies.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::codec::{hash_bytes, hash_node, CodecError, Digest, UniversalKey, TAG_BLOCK};
use crate::store::Durability;

pub const HEADER_LEN: usize = 8 + 32 + 32 + 8 + 8 + 4 + 32 + 32;
const FRAME_OVERHEAD: usize = 4 + 32; // length prefix + block-hash footer
const MAX_BODY_LEN: usize = 256 << 20;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("refusing to seal an empty block without force")]
    EmptyBlockNotForced,
    #[error("journal has no blocks yet")]
    EmptyJournal,
    #[error("heights {from}..={to} out of bounds (tip {tip})")]
    RangeOutOfBounds { from: u64, to: u64, tip: u64 },
    #[error("corrupt journal at height {height}: {detail}")]
    Corrupt { height: u64, detail: &'static str },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a transaction did to one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Put,
    Delete,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnOp {
    pub kind: OpKind,
    pub key: UniversalKey,
}

/// One committed transaction as recorded in a block: its commit sequence
/// number and the cells it wrote. Value hashes travel inside the keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnRecord {
    pub txn_id: u64,
    pub ops: Vec<TxnOp>,
}

/// The fixed-size part of a block, sufficient to recompute its hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub index_root: Digest,
    /// Smallest and largest commit timestamp in the block; `(0, 0)` when the
    /// block is empty.
    pub ts_range: (u64, u64),
    pub record_count: u32,
    pub records_hash: Digest,
    pub statements_hash: Digest,
}

impl BlockHeader {
    pub fn block_hash(&self) -> Digest {
        hash_node(
            TAG_BLOCK,
            &[
                &self.height.to_be_bytes()[..],
                &self.prev_hash.0,
                &self.index_root.0,
                &self.ts_range.0.to_be_bytes(),
                &self.ts_range.1.to_be_bytes(),
                &self.record_count.to_be_bytes(),
                &self.records_hash.0,
                &self.statements_hash.0,
            ],
        )
        .expect("block tag is valid")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.prev_hash.0);
        out.extend_from_slice(&self.index_root.0);
        out.extend_from_slice(&self.ts_range.0.to_be_bytes());
        out.extend_from_slice(&self.ts_range.1.to_be_bytes());
        out.extend_from_slice(&self.record_count.to_be_bytes());
        out.extend_from_slice(&self.records_hash.0);
        out.extend_from_slice(&self.statements_hash.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<BlockHeader, CodecError> {
        if bytes.len() != HEADER_LEN {
            return Err(CodecError::Malformed("block header length"));
        }
        let f = |r: Range<usize>| Digest(bytes[r].try_into().unwrap());
        Ok(BlockHeader {
            height: u64::from_be_bytes(bytes[0..8].try_into().unwrap()),
            prev_hash: f(8..40),
            index_root: f(40..72),
            ts_range: (
                u64::from_be_bytes(bytes[72..80].try_into().unwrap()),
                u64::from_be_bytes(bytes[80..88].try_into().unwrap()),
            ),
            record_count: u32::from_be_bytes(bytes[88..92].try_into().unwrap()),
            records_hash: f(92..124),
            statements_hash: f(124..156),
        })
    }
}

/// A full block: header plus the transaction records and request statements
/// the header's digests commit to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerBlock {
    pub header: BlockHeader,
    pub records: Vec<TxnRecord>,
    pub statements: Vec<String>,
}

impl LedgerBlock {
    pub fn block_hash(&self) -> Digest {
        self.header.block_hash()
    }
}

/// The client-side trust summary of a chain: its height and tip block hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainCommitment {
    pub height: u64,
    pub tip_hash: Digest,
}

/// Verdict of [`Ledger::audit_chain`]: the range inspected and the first
/// violation found, if any.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub from: u64,
    pub to: u64,
    pub blocks_checked: u64,
    pub first_violation: Option<(u64, String)>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.first_violation.is_none()
    }
}

struct Inner {
    file: File,
    file_len: u64,
    /// Byte extent of each block's frame, by height.
    frames: Vec<Range<u64>>,
    headers: Vec<BlockHeader>,
}

/// Handle to an on-disk journal. One writer at a time (enforced by the
/// internal mutex); audits read through an independent file handle so they
/// always see the persisted bytes.
pub struct Ledger {
    inner: Mutex<Inner>,
    path: PathBuf,
    durability: Durability,
}

impl Ledger {
    /// Opens (or creates) `journal.log` under `dir`, verifying every frame,
    /// hash, and chain link. A torn trailing frame — the residue of a crash
    /// mid-append — is truncated away; any interior violation is refused as
    /// [`LedgerError::Corrupt`].
    pub fn open(dir: &Path, durability: Durability) -> Result<Ledger, LedgerError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("journal.log");
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .open(&path)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let mut frames = Vec::new();
        let mut headers: Vec<BlockHeader> = Vec::new();
        let mut offset = 0usize;
        loop {
            match next_frame(&data, offset) {
                FrameStep::End => break,
                FrameStep::Torn => {
                    file.set_len(offset as u64)?;
                    break;
                }
                FrameStep::Frame { body, end } => {
                    let height = headers.len() as u64;
                    let prev = headers.last().map(|h| h.block_hash());
                    let header = check_block(body, height, prev)
                        .map_err(|detail| LedgerError::Corrupt { height, detail })?;
                    frames.push(offset as u64..end as u64);
                    headers.push(header);
                    offset = end;
                }
            }
        }

        let file_len = offset as u64;
        file.seek(SeekFrom::Start(file_len))?;
        Ok(Ledger {
            inner: Mutex::new(Inner {
                file,
                file_len,
                frames,
                headers,
            }),
            path,
            durability,
        })
    }

    /// Appends a block for `records` (in commit-timestamp order) and
    /// persists it before returning. `forced` permits an empty block, which
    /// timer-driven sealing and genesis need.
    pub fn seal_block(
        &self,
        records: Vec<TxnRecord>,
        statements: Vec<String>,
        index_root: Digest,
        forced: bool,
    ) -> Result<LedgerBlock, LedgerError> {
        if records.is_empty() && !forced {
            return Err(LedgerError::EmptyBlockNotForced);
        }
        let mut inner = self.inner.lock().unwrap();

        let ts_range = match (records.first(), records.last()) {
            (Some(first), Some(last)) => (first.txn_id, last.txn_id),
            _ => (0, 0),
        };
        let records_blob = encode_records(&records);
        let statements_blob = encode_statements(&statements);
        let header = BlockHeader {
            height: inner.headers.len() as u64,
            prev_hash: inner
                .headers
                .last()
                .map(|h| h.block_hash())
                .unwrap_or(Digest::ZERO),
            index_root,
            ts_range,
            record_count: records.len() as u32,
            records_hash: hash_bytes(&records_blob),
            statements_hash: hash_bytes(&statements_blob),
        };

        let mut body = header.to_bytes();
        body.extend_from_slice(&records_blob);
        body.extend_from_slice(&statements_blob);
        let mut frame = Vec::with_capacity(FRAME_OVERHEAD + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        frame.extend_from_slice(&header.block_hash().0);

        inner.file.write_all(&frame)?;
        if self.durability == Durability::Strict {
            inner.file.sync_data()?;
        }
        let start = inner.file_len;
        inner.file_len += frame.len() as u64;
        let end = inner.file_len;
        inner.frames.push(start..end);
        inner.headers.push(header);

        Ok(LedgerBlock {
            header,
            records,
            statements,
        })
    }

    /// Current `(height, tip_hash)`.
    pub fn tip(&self) -> Result<ChainCommitment, LedgerError> {
        let inner = self.inner.lock().unwrap();
        let header = inner.headers.last().ok_or(LedgerError::EmptyJournal)?;
        Ok(ChainCommitment {
            height: header.height,
            tip_hash: header.block_hash(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.inner.lock().unwrap().headers.is_empty()
    }

    pub fn header(&self, height: u64) -> Result<BlockHeader, LedgerError> {
        let inner = self.inner.lock().unwrap();
        inner
            .headers
            .get(height as usize)
            .copied()
            .ok_or_else(|| self.out_of_bounds(&inner, height, height))
    }

    /// Headers for `from..=tip`, the update feed for a client anchor.
    pub fn headers_from(&self, from: u64) -> Result<Vec<BlockHeader>, LedgerError> {
        let inner = self.inner.lock().unwrap();
        if from as usize >= inner.headers.len() {
            return Err(self.out_of_bounds(&inner, from, from));
        }
        Ok(inner.headers[from as usize..].to_vec())
    }

    /// Re-reads a full block from disk. The bytes are parsed but *not*
    /// re-verified: callers that need integrity check the block against a
    /// proof or audit first — that is what lets clients catch a server
    /// returning tampered bytes.
    pub fn block(&self, height: u64) -> Result<LedgerBlock, LedgerError> {
        let mut inner = self.inner.lock().unwrap();
        let frame = inner
            .frames
            .get(height as usize)
            .cloned()
            .ok_or_else(|| self.out_of_bounds(&inner, height, height))?;
        inner.file.seek(SeekFrom::Start(frame.start))?;
        let mut buf = vec![0u8; (frame.end - frame.start) as usize];
        inner.file.read_exact(&mut buf)?;
        let append_pos = inner.file_len;
        inner.file.seek(SeekFrom::Start(append_pos))?;
        parse_block_frame(&buf).ok_or(LedgerError::Corrupt {
            height,
            detail: "unreadable block frame",
        })
    }

    /// The block at `height` plus every successor header, oldest first.
    /// Folding the headers forward reproduces the tip hash, proving the
    /// block's inclusion under the current commitment.
    pub fn block_proof(
        &self,
        height: u64,
    ) -> Result<(LedgerBlock, Vec<BlockHeader>), LedgerError> {
        let block = self.block(height)?;
        let successors = {
            let inner = self.inner.lock().unwrap();
            inner.headers[height as usize + 1..].to_vec()
        };
        Ok((block, successors))
    }

    /// Recomputes every hash and chain link from the persisted bytes —
    /// through a fresh read-only handle, so post-open tampering of the file
    /// is visible. Reports the first violation encountered walking from
    /// genesis, as long as it is at or below `to`; blocks below `from` still
    /// participate (their hashes feed the links above them).
    pub fn audit_chain(&self, from: u64, to: u64) -> Result<AuditReport, LedgerError> {
        let tip = {
            let inner = self.inner.lock().unwrap();
            inner.headers.len() as u64
        };
        if from > to || to >= tip {
            return Err(LedgerError::RangeOutOfBounds {
                from,
                to,
                tip: tip.saturating_sub(1),
            });
        }

        let data = std::fs::read(&self.path)?;
        let mut offset = 0usize;
        let mut prev: Option<Digest> = None;
        let mut checked = 0u64;
        let mut violation: Option<(u64, String)> = None;
        for height in 0..=to {
            let detail = match next_frame(&data, offset) {
                FrameStep::End | FrameStep::Torn => Some("journal ends early".to_string()),
                FrameStep::Frame { body, end } => match check_block(body, height, prev) {
                    Ok(header) => {
                        prev = Some(header.block_hash());
                        offset = end;
                        checked += 1;
                        None
                    }
                    Err(detail) => Some(detail.to_string()),
                },
            };
            if let Some(detail) = detail {
                violation = Some((height, detail));
                break;
            }
        }
        Ok(AuditReport {
            from,
            to,
            blocks_checked: checked,
            first_violation: violation,
        })
    }

    /// Byte extent of the frame persisted for `height`; lets corruption
    /// harnesses aim their byte flips.
    #[doc(hidden)]
    pub fn frame_extent(&self, height: u64) -> Result<Range<u64>, LedgerError> {
        let inner = self.inner.lock().unwrap();
        inner
            .frames
            .get(height as usize)
            .cloned()
            .ok_or_else(|| self.out_of_bounds(&inner, height, height))
    }

    fn out_of_bounds(&self, inner: &Inner, from: u64, to: u64) -> LedgerError {
        if inner.headers.is_empty() {
            LedgerError::EmptyJournal
        } else {
            LedgerError::RangeOutOfBounds {
                from,
                to,
                tip: inner.headers.len() as u64 - 1,
            }
        }
    }
}

/// Audits a journal file directly, with no open ledger around it: frames
/// are walked from genesis and every digest and chain link is recomputed
/// from the raw bytes. Unlike [`Ledger::open`], arbitrary damage does not
/// prevent the audit from running — damage is the report's subject — so
/// this is the right entry point for inspecting a directory the engine
/// refuses to load.
///
/// `to` of `None` audits as far as the file reaches; a torn trailing frame
/// past the last complete one is treated as crash residue (what recovery
/// would truncate), not a violation. An explicit `to` demands that all of
/// `0..=to` exist, and reports `journal ends early` where the file gives
/// out. Blocks below `from` still participate — their hashes feed the
/// links above them — but the report's range starts at `from`.
pub fn audit_journal_file(
    path: &Path,
    from: u64,
    to: Option<u64>,
) -> Result<AuditReport, LedgerError> {
    let data = std::fs::read(path)?;
    let mut offset = 0usize;
    let mut prev: Option<Digest> = None;
    let mut checked = 0u64;
    let mut violation: Option<(u64, String)> = None;
    let mut height = 0u64;
    loop {
        if to.map_or(false, |t| height > t) {
            break;
        }
        match next_frame(&data, offset) {
            FrameStep::End | FrameStep::Torn => {
                // A torn tail past the last complete frame is crash residue
                // (recovery truncates it), not tampering — but a bounded
                // audit that never reached `to`, or a journal with no
                // complete block at all, must not report clean.
                if to.is_some() {
                    violation = Some((height, "journal ends early".to_string()));
                } else if checked == 0 {
                    violation = Some((0, "journal holds no complete block".to_string()));
                }
                break;
            }
            FrameStep::Frame { body, end } => match check_block(body, height, prev) {
                Ok(header) => {
                    prev = Some(header.block_hash());
                    offset = end;
                    checked += 1;
                    height += 1;
                }
                Err(detail) => {
                    violation = Some((height, detail.to_string()));
                    break;
                }
            },
        }
    }
    Ok(AuditReport {
        from,
        to: to.unwrap_or_else(|| height.saturating_sub(1)),
        blocks_checked: checked,
        first_violation: violation,
    })
}

enum FrameStep<'a> {
    /// Clean end of journal.
    End,
    /// Incomplete trailing frame.
    Torn,
    /// `body` excludes prefix and footer; `end` is the next frame's offset.
    Frame { body: &'a [u8], end: usize },
}

fn next_frame(data: &[u8], offset: usize) -> FrameStep<'_> {
    if offset == data.len() {
        return FrameStep::End;
    }
    if data.len() - offset < 4 {
        return FrameStep::Torn;
    }
    let body_len = u32::from_be_bytes(data[offset..offset + 4].try_into().unwrap()) as usize;
    if body_len > MAX_BODY_LEN || data.len() - offset - 4 < body_len + 32 {
        return FrameStep::Torn;
    }
    FrameStep::Frame {
        body: &data[offset + 4..offset + 4 + body_len + 32],
        end: offset + 4 + body_len + 32,
    }
}

/// Full integrity check of one frame body (with footer appended): parses,
/// recomputes both blob digests and the block hash, and checks the chain
/// link. Returns the verified header.
fn check_block(
    body_and_footer: &[u8],
    expect_height: u64,
    prev: Option<Digest>,
) -> Result<BlockHeader, &'static str> {
    if body_and_footer.len() < HEADER_LEN + 32 {
        return Err("frame too short for a header");
    }
    let (body, footer) = body_and_footer.split_at(body_and_footer.len() - 32);
    let header = BlockHeader::from_bytes(&body[..HEADER_LEN]).map_err(|_| "unreadable header")?;
    let rest = &body[HEADER_LEN..];
    let records_len = records_blob_len(rest).ok_or("malformed records blob")?;
    if hash_bytes(&rest[..records_len]) != header.records_hash {
        return Err("transaction records do not match their digest");
    }
    if hash_bytes(&rest[records_len..]) != header.statements_hash {
        return Err("statements do not match their digest");
    }
    decode_statements(&rest[records_len..]).ok_or("malformed statements blob")?;
    let records = decode_records(&rest[..records_len]).ok_or("malformed records blob")?;
    if records.len() as u32 != header.record_count {
        return Err("record count disagrees with header");
    }
    let hash = header.block_hash();
    if hash.0 != footer {
        return Err("stored block hash does not match contents");
    }
    if header.height != expect_height {
        return Err("height out of sequence");
    }
    if header.prev_hash != prev.unwrap_or(Digest::ZERO) {
        return Err("previous-hash link broken");
    }
    Ok(header)
}

fn parse_block_frame(frame: &[u8]) -> Option<LedgerBlock> {
    if frame.len() < 4 + HEADER_LEN + 32 {
        return None;
    }
    let body = &frame[4..frame.len() - 32];
    let header = BlockHeader::from_bytes(&body[..HEADER_LEN]).ok()?;
    let rest = &body[HEADER_LEN..];
    let records_len = records_blob_len(rest)?;
    let records = decode_records(&rest[..records_len])?;
    let statements = decode_statements(&rest[records_len..])?;
    Some(LedgerBlock {
        header,
        records,
        statements,
    })
}

fn encode_records(records: &[TxnRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(records.len() as u32).to_be_bytes());
    for record in records {
        out.extend_from_slice(&record.txn_id.to_be_bytes());
        out.extend_from_slice(&(record.ops.len() as u32).to_be_bytes());
        for op in &record.ops {
            out.push(match op.kind {
                OpKind::Put => 0,
                OpKind::Delete => 1,
            });
            let key = op.key.encode();
            out.extend_from_slice(&(key.len() as u32).to_be_bytes());
            out.extend_from_slice(&key);
        }
    }
    out
}

/// Length in bytes of the records blob at the head of `data`, or `None` if
/// it is structurally invalid.
fn records_blob_len(data: &[u8]) -> Option<usize> {
    let mut pos = 4usize;
    let count = u32::from_be_bytes(data.get(..4)?.try_into().unwrap());
    for _ in 0..count {
        let op_count = u32::from_be_bytes(data.get(pos + 8..pos + 12)?.try_into().unwrap());
        pos += 12;
        for _ in 0..op_count {
            let key_len =
                u32::from_be_bytes(data.get(pos + 1..pos + 5)?.try_into().unwrap()) as usize;
            pos += 5 + key_len;
            data.get(..pos)?;
        }
    }
    Some(pos)
}

fn decode_records(blob: &[u8]) -> Option<Vec<TxnRecord>> {
    let mut pos = 4usize;
    let count = u32::from_be_bytes(blob.get(..4)?.try_into().unwrap());
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let txn_id = u64::from_be_bytes(blob.get(pos..pos + 8)?.try_into().unwrap());
        let op_count = u32::from_be_bytes(blob.get(pos + 8..pos + 12)?.try_into().unwrap());
        pos += 12;
        let mut ops = Vec::with_capacity(op_count as usize);
        for _ in 0..op_count {
            let kind = match blob.get(pos)? {
                0 => OpKind::Put,
                1 => OpKind::Delete,
                _ => return None,
            };
            let key_len =
                u32::from_be_bytes(blob.get(pos + 1..pos + 5)?.try_into().unwrap()) as usize;
            let key = UniversalKey::decode(blob.get(pos + 5..pos + 5 + key_len)?).ok()?;
            ops.push(TxnOp { kind, key });
            pos += 5 + key_len;
        }
        records.push(TxnRecord { txn_id, ops });
    }
    if pos == blob.len() {
        Some(records)
    } else {
        None
    }
}

fn encode_statements(statements: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(statements.len() as u32).to_be_bytes());
    for s in statements {
        out.extend_from_slice(&(s.len() as u32).to_be_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out
}

fn decode_statements(blob: &[u8]) -> Option<Vec<String>> {
    let mut pos = 4usize;
    let count = u32::from_be_bytes(blob.get(..4)?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_be_bytes(blob.get(pos..pos + 4)?.try_into().unwrap()) as usize;
        let s = std::str::from_utf8(blob.get(pos + 4..pos + 4 + len)?).ok()?;
        out.push(s.to_string());
        pos += 4 + len;
    }
    if pos == blob.len() {
        Some(out)
    } else {
        None
    }
}
