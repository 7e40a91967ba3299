//! Line-oriented TCP front end: one JSON request per line in, one JSON
//! response per line out. Each connection gets its own thread and session;
//! all sessions multiplex onto one shared engine, whose transaction rules
//! keep them from interfering.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::api::{
    encode_rows_result, WireCommitment, WireRequest, WireResponse, WireResult, WireWritten,
};
use crate::engine::{Engine, EngineError};
use crate::ledger::ChainCommitment;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

/// Maps an engine failure onto a stable wire error class.
fn error_class(err: &EngineError) -> &'static str {
    match err {
        EngineError::TxnNotActive => "txn_not_active",
        EngineError::ConflictAbort { .. } => "conflict_abort",
        EngineError::KindMismatch { .. } => "kind_mismatch",
        EngineError::UnknownColumn(_) => "unknown_column",
        EngineError::InvalidRange(_) => "invalid_range",
        EngineError::FutureTimestamp { .. } => "future_timestamp",
        EngineError::Recovery { .. } => "recovery",
        EngineError::Index(_) => "index",
        EngineError::Ledger(_) => "ledger",
        EngineError::Store(_) => "store",
        EngineError::Codec(_) => "codec",
    }
}

/// Executes one parsed request against the engine. Exposed so in-process
/// callers (tests, harnesses) can exercise exactly the server's dispatch
/// path without a socket.
pub fn handle_request(engine: &Engine, request: &WireRequest) -> WireResponse {
    match try_handle(engine, request) {
        Ok(result) => WireResponse::success(result),
        Err(HandleError::Engine(e)) => WireResponse::failure(error_class(&e), e.to_string()),
        Err(HandleError::Api(e)) => WireResponse::failure("bad_request", e.to_string()),
    }
}

enum HandleError {
    Engine(EngineError),
    Api(crate::api::ApiError),
}

impl From<EngineError> for HandleError {
    fn from(e: EngineError) -> HandleError {
        HandleError::Engine(e)
    }
}

impl From<crate::api::ApiError> for HandleError {
    fn from(e: crate::api::ApiError) -> HandleError {
        HandleError::Api(e)
    }
}

fn try_handle(engine: &Engine, request: &WireRequest) -> Result<WireResult, HandleError> {
    if let Some((read, as_of, anchor_height)) = request.to_read_request()? {
        let response = engine.read_query(&read, as_of, anchor_height)?;
        return Ok(encode_rows_result(&response));
    }
    match request {
        WireRequest::Put { column, key, value } => {
            let receipt = engine.put(column, &key.to_bytes()?, value.to_cell()?)?;
            Ok(committed_result(receipt))
        }
        WireRequest::Delete { column, key } => {
            let receipt = engine.delete(column, &key.to_bytes()?)?;
            Ok(committed_result(receipt))
        }
        WireRequest::Verify { anchor_height } => {
            let commitment = engine.commitment()?;
            let from = anchor_height.map(|h| h + 1).unwrap_or(0);
            let chain = if from > commitment.height {
                Vec::new()
            } else {
                engine.headers_from(from)?
            };
            Ok(WireResult::Segment {
                commitment: WireCommitment::from_commitment(&commitment),
                chain_b64: chain.iter().map(|h| B64.encode(h.to_bytes())).collect(),
            })
        }
        WireRequest::Audit { from, to } => {
            let tip = engine.commitment()?.height;
            let report = engine.audit(*from, to.unwrap_or(tip))?;
            Ok(WireResult::Audit {
                from: report.from,
                to: report.to,
                blocks_checked: report.blocks_checked,
                first_violation: report.first_violation.clone(),
            })
        }
        WireRequest::Tip => {
            let commitment = engine.commitment()?;
            Ok(WireResult::Tip {
                commitment: WireCommitment::from_commitment(&commitment),
            })
        }
        // Reads were handled above.
        _ => unreachable!("read requests are dispatched before this match"),
    }
}

fn committed_result(receipt: crate::engine::CommitReceipt) -> WireResult {
    WireResult::Committed {
        commit_ts: receipt.commit_ts,
        commitment: WireCommitment::from_commitment(&ChainCommitment {
            height: receipt.block_height,
            tip_hash: receipt.block_hash,
        }),
        written: receipt
            .proofs
            .iter()
            .map(|(key, proof)| WireWritten {
                column: key.column.clone(),
                key: crate::api::WireBytes::from_bytes(&key.primary_key),
                ts: key.timestamp,
                proof_b64: B64.encode(proof.to_bytes()),
            })
            .collect(),
    }
}

/// A running server: background accept loop plus one thread per connection.
/// Dropping the handle (or calling [`Service::shutdown`]) stops accepting
/// and joins the accept loop.
pub struct Service {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Service {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving
    /// `engine` in background threads.
    pub fn spawn(engine: Arc<Engine>, addr: impl ToSocketAddrs) -> std::io::Result<Service> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept_stop = stop.clone();
        let accept_thread = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if accept_stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let engine = engine.clone();
                std::thread::spawn(move || serve_connection(&engine, stream));
            }
        });
        Ok(Service {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept with a throwaway connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop_accepting();
        }
    }
}

fn serve_connection(engine: &Engine, stream: TcpStream) {
    let Ok(peer) = stream.try_clone() else { return };
    let reader = BufReader::new(stream);
    let mut writer = BufWriter::new(peer);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<WireRequest>(&line) {
            Ok(request) => handle_request(engine, &request),
            Err(e) => WireResponse::failure("bad_request", format!("unparseable request: {e}")),
        };
        let Ok(mut out) = serde_json::to_string(&response) else { break };
        out.push('\n');
        if writer.write_all(out.as_bytes()).is_err() || writer.flush().is_err() {
            break;
        }
    }
}
