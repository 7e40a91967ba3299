//! JSON wire schema and a small line-oriented client.
//!
//! Requests and responses are single JSON objects, one per line. Binary
//! payloads (proofs, block headers, non-UTF-8 keys) travel base64-encoded;
//! the binary serializations remain canonical, and the encoding here is
//! lossless so proof bytes verified client-side are bit-identical to what
//! the server produced.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CellValue, Digest, UniversalKey};
use crate::engine::{QueryResponse, QueryRow, ReadRequest};
use crate::ledger::{BlockHeader, ChainCommitment};
use crate::merkle::MerkleProof;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("malformed wire data: {0}")]
    Malformed(String),
    #[error("server reported {class}: {detail}")]
    Server { class: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("connection closed mid-response")]
    Disconnected,
}

fn malformed(what: impl Into<String>) -> ApiError {
    ApiError::Malformed(what.into())
}

/// Bytes on the wire: a plain JSON string when the bytes are UTF-8, or
/// `{"b64": "..."}` otherwise.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum WireBytes {
    Text(String),
    B64 { b64: String },
}

impl WireBytes {
    pub fn from_bytes(bytes: &[u8]) -> WireBytes {
        match std::str::from_utf8(bytes) {
            Ok(s) => WireBytes::Text(s.to_string()),
            Err(_) => WireBytes::B64 {
                b64: B64.encode(bytes),
            },
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ApiError> {
        match self {
            WireBytes::Text(s) => Ok(s.as_bytes().to_vec()),
            WireBytes::B64 { b64 } => B64
                .decode(b64)
                .map_err(|e| malformed(format!("bad base64 key: {e}"))),
        }
    }
}

/// Typed values on the wire: `{"int": 42}`, `{"str": "..."}`,
/// `{"b64": "..."}` for raw bytes, or the string `"deleted"` for a
/// tombstone (responses only).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum WireValue {
    Int(i64),
    Str(String),
    B64(String),
    Deleted,
}

impl WireValue {
    pub fn from_cell(value: &CellValue) -> WireValue {
        match value {
            CellValue::Int64(v) => WireValue::Int(*v),
            CellValue::Utf8(s) => WireValue::Str(s.clone()),
            CellValue::Bytes(b) => WireValue::B64(B64.encode(b)),
            CellValue::Tombstone => WireValue::Deleted,
        }
    }

    pub fn to_cell(&self) -> Result<CellValue, ApiError> {
        Ok(match self {
            WireValue::Int(v) => CellValue::Int64(*v),
            WireValue::Str(s) => CellValue::Utf8(s.clone()),
            WireValue::B64(b) => CellValue::Bytes(
                B64.decode(b)
                    .map_err(|e| malformed(format!("bad base64 value: {e}")))?,
            ),
            WireValue::Deleted => CellValue::Tombstone,
        })
    }
}

/// One request per line; `op` selects the variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireRequest {
    Put {
        column: String,
        key: WireBytes,
        value: WireValue,
    },
    Delete {
        column: String,
        key: WireBytes,
    },
    Get {
        column: String,
        key: WireBytes,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        as_of: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_height: Option<u64>,
    },
    Scan {
        column: String,
        low: WireBytes,
        high: WireBytes,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        as_of: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_height: Option<u64>,
    },
    ValueEq {
        column: String,
        value: WireValue,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        as_of: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_height: Option<u64>,
    },
    ValueRange {
        column: String,
        low: WireValue,
        high: WireValue,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        as_of: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_height: Option<u64>,
    },
    History {
        column: String,
        key: WireBytes,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        as_of: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_height: Option<u64>,
    },
    /// Fetch the headers `(anchor_height, tip]` so a client can extend its
    /// trust anchor without issuing a data query.
    Verify {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_height: Option<u64>,
    },
    Audit {
        #[serde(default)]
        from: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<u64>,
    },
    Tip,
}

impl WireRequest {
    /// The read this request maps onto, if it is a read.
    pub fn to_read_request(&self) -> Result<Option<(ReadRequest, Option<u64>, Option<u64>)>, ApiError> {
        Ok(Some(match self {
            WireRequest::Get {
                column,
                key,
                as_of,
                anchor_height,
            } => (
                ReadRequest::Point {
                    column: column.clone(),
                    primary_key: key.to_bytes()?,
                },
                *as_of,
                *anchor_height,
            ),
            WireRequest::Scan {
                column,
                low,
                high,
                as_of,
                anchor_height,
            } => (
                ReadRequest::Range {
                    column: column.clone(),
                    low: low.to_bytes()?,
                    high: high.to_bytes()?,
                },
                *as_of,
                *anchor_height,
            ),
            WireRequest::ValueEq {
                column,
                value,
                as_of,
                anchor_height,
            } => (
                ReadRequest::ValueEq {
                    column: column.clone(),
                    value: value.to_cell()?,
                },
                *as_of,
                *anchor_height,
            ),
            WireRequest::ValueRange {
                column,
                low,
                high,
                as_of,
                anchor_height,
            } => (
                ReadRequest::ValueRange {
                    column: column.clone(),
                    low: low.to_cell()?,
                    high: high.to_cell()?,
                },
                *as_of,
                *anchor_height,
            ),
            WireRequest::History {
                column,
                key,
                as_of,
                anchor_height,
            } => (
                ReadRequest::History {
                    column: column.clone(),
                    primary_key: key.to_bytes()?,
                },
                *as_of,
                *anchor_height,
            ),
            _ => return Ok(None),
        }))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct WireCommitment {
    pub height: u64,
    pub tip_hash: String,
}

impl WireCommitment {
    pub fn from_commitment(c: &ChainCommitment) -> WireCommitment {
        WireCommitment {
            height: c.height,
            tip_hash: c.tip_hash.to_hex(),
        }
    }

    pub fn to_commitment(&self) -> Result<ChainCommitment, ApiError> {
        let bytes = hex_to_bytes(&self.tip_hash)?;
        Ok(ChainCommitment {
            height: self.height,
            tip_hash: Digest::from_slice(&bytes).map_err(|_| malformed("tip hash length"))?,
        })
    }
}

fn hex_to_bytes(s: &str) -> Result<Vec<u8>, ApiError> {
    if s.len() % 2 != 0 {
        return Err(malformed("odd-length hex"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| malformed("bad hex digit")))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct WireRow {
    pub column: String,
    pub key: WireBytes,
    pub ts: u64,
    pub value: WireValue,
}

impl WireRow {
    pub fn from_row(row: &QueryRow) -> WireRow {
        WireRow {
            column: row.key.column.clone(),
            key: WireBytes::from_bytes(&row.key.primary_key),
            ts: row.key.timestamp,
            value: WireValue::from_cell(&row.value),
        }
    }

    pub fn to_row(&self) -> Result<QueryRow, ApiError> {
        let value = self.value.to_cell()?;
        let key = UniversalKey::new(
            self.column.clone(),
            self.key.to_bytes()?,
            self.ts,
            value.value_hash(),
        )
        .map_err(|e| malformed(format!("bad row key: {e}")))?;
        Ok(QueryRow { key, value })
    }
}

/// One receipt entry per written key in a committed transaction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireWritten {
    pub column: String,
    pub key: WireBytes,
    pub ts: u64,
    pub proof_b64: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireResult {
    Committed {
        commit_ts: u64,
        commitment: WireCommitment,
        written: Vec<WireWritten>,
    },
    Rows {
        rows: Vec<WireRow>,
        proofs_b64: Vec<String>,
        block_b64: String,
        commitment: WireCommitment,
        chain_b64: Vec<String>,
    },
    Tip {
        commitment: WireCommitment,
    },
    Audit {
        from: u64,
        to: u64,
        blocks_checked: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        first_violation: Option<(u64, String)>,
    },
    Segment {
        commitment: WireCommitment,
        chain_b64: Vec<String>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireError {
    pub class: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<WireResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl WireResponse {
    pub fn success(result: WireResult) -> WireResponse {
        WireResponse {
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(class: &str, detail: impl Into<String>) -> WireResponse {
        WireResponse {
            ok: false,
            result: None,
            error: Some(WireError {
                class: class.to_string(),
                detail: detail.into(),
            }),
        }
    }

    pub fn into_result(self) -> Result<WireResult, ApiError> {
        if self.ok {
            self.result
                .ok_or_else(|| malformed("ok response without result"))
        } else {
            let e = self
                .error
                .unwrap_or(WireError {
                    class: "unknown".into(),
                    detail: String::new(),
                });
            Err(ApiError::Server {
                class: e.class,
                detail: e.detail,
            })
        }
    }
}

/// Server-side: lower a verifiable answer onto the wire, preserving every
/// proof and header byte exactly.
pub fn encode_rows_result(response: &QueryResponse) -> WireResult {
    WireResult::Rows {
        rows: response.rows.iter().map(WireRow::from_row).collect(),
        proofs_b64: response
            .proofs
            .iter()
            .map(|p| B64.encode(p.to_bytes()))
            .collect(),
        block_b64: B64.encode(response.block.to_bytes()),
        commitment: WireCommitment::from_commitment(&response.commitment),
        chain_b64: response
            .chain
            .iter()
            .map(|h| B64.encode(h.to_bytes()))
            .collect(),
    }
}

/// Client-side: reconstruct the verifiable answer from the wire form. The
/// output feeds [`crate::verify::Verifier::verify_response`] unchanged.
pub fn decode_rows_result(result: &WireResult) -> Result<QueryResponse, ApiError> {
    let WireResult::Rows {
        rows,
        proofs_b64,
        block_b64,
        commitment,
        chain_b64,
    } = result
    else {
        return Err(malformed("expected a rows result"));
    };
    let decode_header = |b64: &String| -> Result<BlockHeader, ApiError> {
        let bytes = B64
            .decode(b64)
            .map_err(|e| malformed(format!("bad base64 header: {e}")))?;
        BlockHeader::from_bytes(&bytes).map_err(|e| malformed(format!("bad header: {e}")))
    };
    Ok(QueryResponse {
        rows: rows.iter().map(|r| r.to_row()).collect::<Result<_, _>>()?,
        proofs: proofs_b64
            .iter()
            .map(|b64| {
                let bytes = B64
                    .decode(b64)
                    .map_err(|e| malformed(format!("bad base64 proof: {e}")))?;
                MerkleProof::from_bytes(&bytes).map_err(|e| malformed(format!("bad proof: {e}")))
            })
            .collect::<Result<_, _>>()?,
        block: decode_header(block_b64)?,
        commitment: commitment.to_commitment()?,
        chain: chain_b64
            .iter()
            .map(decode_header)
            .collect::<Result<_, _>>()?,
    })
}

/// Decodes a [`WireResult::Segment`] reply into the commitment plus header
/// segment it carries, ready to hand to a verifier for anchor extension.
pub fn decode_segment_result(
    result: &WireResult,
) -> Result<(ChainCommitment, Vec<BlockHeader>), ApiError> {
    let WireResult::Segment {
        commitment,
        chain_b64,
    } = result
    else {
        return Err(malformed("expected a segment result"));
    };
    let chain = chain_b64
        .iter()
        .map(|b64| {
            let bytes = B64
                .decode(b64)
                .map_err(|e| malformed(format!("bad base64 header: {e}")))?;
            BlockHeader::from_bytes(&bytes).map_err(|e| malformed(format!("bad header: {e}")))
        })
        .collect::<Result<_, _>>()?;
    Ok((commitment.to_commitment()?, chain))
}

/// A blocking line-oriented client: one JSON request out, one JSON response
/// back, over a single connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, ApiError> {
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Client {
            reader,
            writer: stream,
        })
    }

    pub fn request(&mut self, request: &WireRequest) -> Result<WireResult, ApiError> {
        let mut line = serde_json::to_string(request).map_err(|e| malformed(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(ApiError::Disconnected);
        }
        let response: WireResponse =
            serde_json::from_str(reply.trim_end()).map_err(|e| malformed(e.to_string()))?;
        response.into_result()
    }

    /// Issues a read and reconstructs the verifiable response.
    pub fn read(
        &mut self,
        request: &WireRequest,
    ) -> Result<QueryResponse, ApiError> {
        let result = self.request(request)?;
        decode_rows_result(&result)
    }
}
