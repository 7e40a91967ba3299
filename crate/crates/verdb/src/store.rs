//! The cell store: append-only, content-addressed, deduplicating storage for
//! immutable values.
//!
//! Values are chunked by [`crate::chunk`], each chunk is keyed by its SHA-256
//! digest, and a manifest record per value maps the value hash to its chunk
//! list. Everything lands in one append-only log; nothing is ever rewritten
//! or deleted. Storing the same value twice appends nothing, and storing a
//! lightly edited version of a large value appends only the chunks around the
//! edit.
//!
//! Reads verify: every chunk is rehashed against its digest and the
//! reassembled value is rehashed against the requested value hash, so a
//! flipped byte anywhere in the log surfaces as [`StoreError::CorruptChunk`]
//! instead of silently wrong data.
//!
//! Recovery: the log is scanned at open. A torn tail (a record cut off by a
//! crash) is truncated; a structurally invalid record anywhere else is
//! reported as corruption. A sidecar index file accelerates reopening but is
//! only a cache — it is validated against the log and rebuilt by scan when
//! stale or damaged.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::chunk::{chunk_ranges, ChunkerParams};
use crate::codec::{hash_bytes, CellValue, CodecError, Digest};

/// Values above this size are rejected outright.
pub const MAX_VALUE_LEN: usize = 64 << 20;

const DATA_MAGIC: &[u8; 4] = b"CHNK";
const OBJECT_MAGIC: &[u8; 4] = b"COBJ";
const INDEX_MAGIC: &[u8; 4] = b"CIDX";
const HEADER_LEN: usize = 4 + 32 + 4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("value is {len} bytes, limit is {max}")]
    ValueTooLarge { len: usize, max: usize },
    #[error("no value stored under {0}")]
    UnknownHash(Digest),
    #[error("corrupt chunk {digest}: {detail}")]
    CorruptChunk { digest: Digest, detail: &'static str },
    #[error("corrupt chunk log at offset {offset}: {detail}")]
    CorruptLog { offset: u64, detail: &'static str },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether appends are synced to stable storage on [`CellStore::flush`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Durability {
    /// `fsync` on flush; required for crash safety.
    Strict,
    /// Leave persistence to the OS; used by benchmarks.
    Buffered,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreStats {
    /// Bytes of values as written by callers (every put counts, duplicates
    /// included). After reopening, accumulated from unique stored objects.
    pub logical_size: u64,
    /// Unique chunk payload bytes actually appended to the log.
    pub physical_size: u64,
    pub chunk_count: u64,
    pub object_count: u64,
}

#[derive(Clone, Debug)]
struct ObjectMeta {
    total_len: u64,
    chunks: Vec<Digest>,
    /// Where this object's manifest payload lives in the log, so the sidecar
    /// index can point back at it.
    manifest_loc: (u64, u32),
}

struct Inner {
    log: File,
    log_len: u64,
    chunks: HashMap<Digest, (u64, u32)>,
    objects: HashMap<Digest, ObjectMeta>,
    stats: StoreStats,
}

/// Handle to an on-disk cell store. Thread-safe; all operations lock one
/// internal mutex, which matches the engine's serialized write pipeline.
pub struct CellStore {
    inner: Mutex<Inner>,
    index_path: PathBuf,
    params: ChunkerParams,
    durability: Durability,
}

impl CellStore {
    pub fn open(
        dir: &Path,
        params: ChunkerParams,
        durability: Durability,
    ) -> Result<CellStore, StoreError> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join("chunks.log");
        let index_path = dir.join("chunks.idx");
        let mut log = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .open(&log_path)?;
        let disk_len = log.metadata()?.len();

        let mut inner = match load_index(&index_path, disk_len) {
            Some((chunks, object_locs)) => {
                let mut objects = HashMap::with_capacity(object_locs.len());
                for (digest, (offset, len)) in object_locs {
                    let payload = read_exact_at(&mut log, offset, len as usize)?;
                    let meta = parse_manifest(&payload, (offset, len)).ok_or(
                        StoreError::CorruptLog {
                            offset,
                            detail: "unreadable manifest behind index file",
                        },
                    )?;
                    objects.insert(digest, meta);
                }
                let stats = derive_stats(&chunks, &objects);
                Inner {
                    log,
                    log_len: disk_len,
                    chunks,
                    objects,
                    stats,
                }
            }
            None => scan_log(log, disk_len)?,
        };
        inner.log.seek(SeekFrom::Start(inner.log_len))?;
        Ok(CellStore {
            inner: Mutex::new(inner),
            index_path,
            params,
            durability,
        })
    }

    /// Stores a value's canonical encoding; returns its value hash.
    /// Idempotent: re-storing appends nothing and only grows `logical_size`.
    pub fn put_value(&self, value: &CellValue) -> Result<Digest, StoreError> {
        self.put_bytes(&value.canonical_encoding())
    }

    /// Stores raw bytes content-addressed by their SHA-256 digest.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<Digest, StoreError> {
        if bytes.len() > MAX_VALUE_LEN {
            return Err(StoreError::ValueTooLarge {
                len: bytes.len(),
                max: MAX_VALUE_LEN,
            });
        }
        let value_hash = hash_bytes(bytes);
        let mut inner = self.inner.lock().unwrap();
        inner.stats.logical_size += bytes.len() as u64;
        if inner.objects.contains_key(&value_hash) {
            return Ok(value_hash);
        }

        let mut manifest = Vec::with_capacity(12 + bytes.len() / 1024);
        manifest.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
        let ranges = chunk_ranges(bytes, self.params);
        manifest.extend_from_slice(&(ranges.len() as u32).to_be_bytes());
        let mut chunks = Vec::with_capacity(ranges.len());
        for range in ranges {
            let payload = &bytes[range];
            let digest = hash_bytes(payload);
            chunks.push(digest);
            manifest.extend_from_slice(&digest.0);
            if !inner.chunks.contains_key(&digest) {
                let offset = append_record(&mut inner, DATA_MAGIC, digest, payload)?;
                inner.chunks.insert(digest, (offset, payload.len() as u32));
                inner.stats.physical_size += payload.len() as u64;
                inner.stats.chunk_count += 1;
            }
        }
        let manifest_offset = append_record(&mut inner, OBJECT_MAGIC, value_hash, &manifest)?;
        inner.objects.insert(
            value_hash,
            ObjectMeta {
                total_len: bytes.len() as u64,
                chunks,
                manifest_loc: (manifest_offset, manifest.len() as u32),
            },
        );
        inner.stats.object_count += 1;
        Ok(value_hash)
    }

    /// Reassembles and verifies the bytes stored under `value_hash`.
    pub fn get_bytes(&self, value_hash: Digest) -> Result<Vec<u8>, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let meta = inner
            .objects
            .get(&value_hash)
            .ok_or(StoreError::UnknownHash(value_hash))?
            .clone();
        let mut out = Vec::with_capacity(meta.total_len as usize);
        for digest in &meta.chunks {
            let (offset, len) = *inner.chunks.get(digest).ok_or(StoreError::CorruptChunk {
                digest: *digest,
                detail: "chunk missing from log",
            })?;
            let payload = read_exact_at(&mut inner.log, offset, len as usize)?;
            if hash_bytes(&payload) != *digest {
                return Err(StoreError::CorruptChunk {
                    digest: *digest,
                    detail: "payload does not match its digest",
                });
            }
            out.extend_from_slice(&payload);
        }
        if out.len() as u64 != meta.total_len || hash_bytes(&out) != value_hash {
            return Err(StoreError::CorruptChunk {
                digest: value_hash,
                detail: "reassembled value does not match its hash",
            });
        }
        Ok(out)
    }

    pub fn get_value(&self, value_hash: Digest) -> Result<CellValue, StoreError> {
        Ok(CellValue::from_canonical(&self.get_bytes(value_hash)?)?)
    }

    pub fn contains(&self, value_hash: Digest) -> bool {
        self.inner.lock().unwrap().objects.contains_key(&value_hash)
    }

    pub fn stats(&self) -> StoreStats {
        self.inner.lock().unwrap().stats
    }

    /// Flushes buffered appends (and syncs them under
    /// [`Durability::Strict`]), then refreshes the sidecar index file.
    pub fn flush(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        inner.log.flush()?;
        if self.durability == Durability::Strict {
            inner.log.sync_data()?;
        }
        write_index(&self.index_path, &inner)?;
        Ok(())
    }

    /// Like [`CellStore::flush`] but skips the sidecar index rewrite. The
    /// index is a startup accelerator, not a source of truth — a stale one
    /// is ignored and the log is rescanned — so hot paths that only need
    /// the append log durable (e.g. once per sealed block) can use this
    /// and leave the index refresh to shutdown or an explicit flush.
    pub fn sync_log(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        inner.log.flush()?;
        if self.durability == Durability::Strict {
            inner.log.sync_data()?;
        }
        Ok(())
    }

    /// Full integrity sweep, re-read from disk: every record must parse,
    /// every chunk payload must match its digest, every manifest must
    /// reference known chunks and reassemble to its object hash, and every
    /// log byte must be accounted for. Unlike [`CellStore::open`], which
    /// tolerates a torn tail from a crash, this treats any unparseable or
    /// leftover byte as corruption — it is the operator's answer to "has
    /// this file been damaged?".
    pub fn verify_all(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        inner.log.flush()?;
        // Sweep what is actually on disk, not the in-memory length: external
        // truncation must surface as corruption too.
        let end = inner.log.metadata()?.len().max(inner.log_len);
        let mut chunk_locs: HashMap<Digest, (u64, u32)> = HashMap::new();
        let mut pos = 0u64;
        while pos < end {
            if end - pos < HEADER_LEN as u64 {
                return Err(StoreError::CorruptLog {
                    offset: pos,
                    detail: "trailing bytes shorter than a record header",
                });
            }
            let header = read_exact_at(&mut inner.log, pos, HEADER_LEN)?;
            let magic: [u8; 4] = header[..4].try_into().unwrap();
            let digest = Digest(header[4..36].try_into().unwrap());
            let len = u32::from_be_bytes(header[36..40].try_into().unwrap());
            if &magic != DATA_MAGIC && &magic != OBJECT_MAGIC {
                return Err(StoreError::CorruptLog {
                    offset: pos,
                    detail: "unknown record magic",
                });
            }
            let payload_at = pos + HEADER_LEN as u64;
            if len as u64 > end - payload_at || len as usize > MAX_VALUE_LEN + 1024 {
                return Err(StoreError::CorruptLog {
                    offset: pos,
                    detail: "record length exceeds the log",
                });
            }
            let payload = read_exact_at(&mut inner.log, payload_at, len as usize)?;
            if &magic == DATA_MAGIC {
                if hash_bytes(&payload) != digest {
                    return Err(StoreError::CorruptChunk {
                        digest,
                        detail: "payload does not match its digest",
                    });
                }
                chunk_locs.insert(digest, (payload_at, len));
            } else {
                let meta = parse_manifest(&payload, (payload_at, len)).ok_or(
                    StoreError::CorruptLog {
                        offset: pos,
                        detail: "unreadable manifest",
                    },
                )?;
                let mut assembled = Vec::with_capacity(meta.total_len as usize);
                for chunk in &meta.chunks {
                    let (at, clen) = *chunk_locs.get(chunk).ok_or(StoreError::CorruptChunk {
                        digest: *chunk,
                        detail: "manifest references an unknown chunk",
                    })?;
                    assembled.extend_from_slice(&read_exact_at(&mut inner.log, at, clen as usize)?);
                }
                if assembled.len() as u64 != meta.total_len || hash_bytes(&assembled) != digest {
                    return Err(StoreError::CorruptChunk {
                        digest,
                        detail: "manifest does not reassemble to its object hash",
                    });
                }
            }
            pos = payload_at + len as u64;
        }
        let append_pos = inner.log_len;
        inner.log.seek(SeekFrom::Start(append_pos))?;
        Ok(())
    }
}

fn append_record(
    inner: &mut Inner,
    magic: &[u8; 4],
    digest: Digest,
    payload: &[u8],
) -> Result<u64, StoreError> {
    let mut record = Vec::with_capacity(HEADER_LEN + payload.len());
    record.extend_from_slice(magic);
    record.extend_from_slice(&digest.0);
    record.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    record.extend_from_slice(payload);
    inner.log.seek(SeekFrom::Start(inner.log_len))?;
    inner.log.write_all(&record)?;
    let payload_offset = inner.log_len + HEADER_LEN as u64;
    inner.log_len += record.len() as u64;
    Ok(payload_offset)
}

fn read_exact_at(log: &mut File, offset: u64, len: usize) -> Result<Vec<u8>, StoreError> {
    log.seek(SeekFrom::Start(offset))?;
    let mut buf = vec![0u8; len];
    log.read_exact(&mut buf)?;
    Ok(buf)
}

fn parse_manifest(payload: &[u8], loc: (u64, u32)) -> Option<ObjectMeta> {
    if payload.len() < 12 {
        return None;
    }
    let total_len = u64::from_be_bytes(payload[..8].try_into().unwrap());
    // A manifest is not covered by its own digest (that digest names the
    // assembled object), so a flipped byte can turn `total_len` into
    // garbage; no legitimate object exceeds the put-path bound, and callers
    // size buffers from this field.
    if total_len > MAX_VALUE_LEN as u64 {
        return None;
    }
    let count = u32::from_be_bytes(payload[8..12].try_into().unwrap()) as usize;
    let rest = &payload[12..];
    if rest.len() != count * 32 {
        return None;
    }
    let chunks = rest
        .chunks_exact(32)
        .map(|c| Digest(c.try_into().unwrap()))
        .collect();
    Some(ObjectMeta {
        total_len,
        chunks,
        manifest_loc: loc,
    })
}

/// Sequential scan of the whole log; the recovery path. Truncates a torn
/// tail, rejects malformed interior records.
fn scan_log(mut log: File, disk_len: u64) -> Result<Inner, StoreError> {
    let mut chunks: HashMap<Digest, (u64, u32)> = HashMap::new();
    let mut objects: HashMap<Digest, ObjectMeta> = HashMap::new();
    log.seek(SeekFrom::Start(0))?;
    let mut data = Vec::with_capacity(disk_len as usize);
    log.read_to_end(&mut data)?;

    let mut offset = 0usize;
    let valid_len;
    loop {
        if offset == data.len() {
            valid_len = offset;
            break;
        }
        if data.len() - offset < HEADER_LEN {
            valid_len = offset; // torn header
            break;
        }
        let header = &data[offset..offset + HEADER_LEN];
        let magic: [u8; 4] = header[..4].try_into().unwrap();
        if &magic != DATA_MAGIC && &magic != OBJECT_MAGIC {
            return Err(StoreError::CorruptLog {
                offset: offset as u64,
                detail: "unknown record magic",
            });
        }
        let digest = Digest(header[4..36].try_into().unwrap());
        let len = u32::from_be_bytes(header[36..40].try_into().unwrap()) as usize;
        if len > MAX_VALUE_LEN {
            return Err(StoreError::CorruptLog {
                offset: offset as u64,
                detail: "record length out of bounds",
            });
        }
        if data.len() - offset - HEADER_LEN < len {
            valid_len = offset; // torn payload
            break;
        }
        let payload_offset = (offset + HEADER_LEN) as u64;
        let payload = &data[offset + HEADER_LEN..offset + HEADER_LEN + len];
        if &magic == DATA_MAGIC {
            chunks.entry(digest).or_insert((payload_offset, len as u32));
        } else {
            let meta = parse_manifest(payload, (payload_offset, len as u32)).ok_or(
                StoreError::CorruptLog {
                    offset: offset as u64,
                    detail: "malformed object manifest",
                },
            )?;
            objects.insert(digest, meta);
        }
        offset += HEADER_LEN + len;
    }

    if (valid_len as u64) < disk_len {
        log.set_len(valid_len as u64)?;
    }
    let stats = derive_stats(&chunks, &objects);
    Ok(Inner {
        log,
        log_len: valid_len as u64,
        chunks,
        objects,
        stats,
    })
}

fn derive_stats(
    chunks: &HashMap<Digest, (u64, u32)>,
    objects: &HashMap<Digest, ObjectMeta>,
) -> StoreStats {
    StoreStats {
        logical_size: objects.values().map(|o| o.total_len).sum(),
        physical_size: chunks.values().map(|(_, len)| *len as u64).sum(),
        chunk_count: chunks.len() as u64,
        object_count: objects.len() as u64,
    }
}

/// Index file: `CIDX | log_len u64 | count u32 | entries | SHA-256 checksum`,
/// entry = `kind u8 | digest 32 | offset u64 | len u32`. Purely a cache.
fn write_index(path: &Path, inner: &Inner) -> Result<(), StoreError> {
    let mut body = Vec::new();
    body.extend_from_slice(INDEX_MAGIC);
    body.extend_from_slice(&inner.log_len.to_be_bytes());
    let total = inner.chunks.len() + inner.objects.len();
    body.extend_from_slice(&(total as u32).to_be_bytes());
    let mut entries: Vec<(u8, Digest, u64, u32)> = Vec::with_capacity(total);
    for (digest, (offset, len)) in &inner.chunks {
        entries.push((0, *digest, *offset, *len));
    }
    for (digest, meta) in &inner.objects {
        entries.push((1, *digest, meta.manifest_loc.0, meta.manifest_loc.1));
    }
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (kind, digest, offset, len) in &entries {
        body.push(*kind);
        body.extend_from_slice(&digest.0);
        body.extend_from_slice(&offset.to_be_bytes());
        body.extend_from_slice(&len.to_be_bytes());
    }
    let checksum = hash_bytes(&body);
    body.extend_from_slice(&checksum.0);
    let tmp = path.with_extension("idx.tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(&body)?;
    f.sync_data()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[allow(clippy::type_complexity)]
fn load_index(
    path: &Path,
    disk_len: u64,
) -> Option<(HashMap<Digest, (u64, u32)>, HashMap<Digest, (u64, u32)>)> {
    let data = std::fs::read(path).ok()?;
    if data.len() < 4 + 8 + 4 + 32 {
        return None;
    }
    let (body, checksum) = data.split_at(data.len() - 32);
    if hash_bytes(body).0 != checksum {
        return None;
    }
    if &body[..4] != INDEX_MAGIC {
        return None;
    }
    let log_len = u64::from_be_bytes(body[4..12].try_into().unwrap());
    if log_len != disk_len {
        return None; // stale: appends or truncation happened since
    }
    let count = u32::from_be_bytes(body[12..16].try_into().unwrap()) as usize;
    let mut rest = &body[16..];
    let mut chunks = HashMap::new();
    let mut objects = HashMap::new();
    for _ in 0..count {
        if rest.len() < 45 {
            return None;
        }
        let kind = rest[0];
        let digest = Digest(rest[1..33].try_into().unwrap());
        let offset = u64::from_be_bytes(rest[33..41].try_into().unwrap());
        let len = u32::from_be_bytes(rest[41..45].try_into().unwrap());
        match kind {
            0 => chunks.insert(digest, (offset, len)),
            1 => objects.insert(digest, (offset, len)),
            _ => return None,
        };
        rest = &rest[45..];
    }
    if !rest.is_empty() {
        return None;
    }
    Some((chunks, objects))
}
