//! `verdb` — operator front end for the verifiable database engine.
//!
//! Subcommands map one-to-one onto engine, verifier, or benchmark
//! operations. Every failure is classified, and each class has its own
//! exit code so scripts can tell a bad config from an unreachable server
//! from a proof that did not check out:
//!
//!   0  success
//!   1  internal/engine error
//!   2  configuration or usage error (clap uses 2 for bad flags as well)
//!   3  connection error
//!   4  verification failure (bad proof, bad anchor, mismatched value)
//!   5  audit violation (the chain itself is bad)

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use verdb::api::{ApiError, Client, WireBytes, WireRequest, WireResult, WireValue};
use verdb::codec::CellValue;
use verdb::engine::{Engine, EngineConfig, ReadRequest};
use verdb::server::Service;
use verdb::store::Durability;
use verdb::{AnchorError, Verifier, VerifyFailure};

use verdb_bench::runner::{csv_header, csv_row, run_bench};
use verdb_bench::systems::{Baseline, BenchSystem, PlainKvs, Unified};
use verdb_bench::nonintrusive::SplitSystem;
use verdb_bench::workload::{Mix, WorkloadSpec};

use config::Config;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Connect(String),
    Verify(String),
    Audit { height: u64, detail: String },
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Connect(_) => 3,
            CliError::Verify(_) => 4,
            CliError::Audit { .. } => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Connect(m) => write!(f, "connection: {m}"),
            CliError::Verify(m) => write!(f, "verification: {m}"),
            CliError::Audit { height, detail } => {
                write!(f, "audit violation at block {height}: {detail}")
            }
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

fn from_api(e: ApiError) -> CliError {
    match e {
        ApiError::Io(_) | ApiError::Disconnected => CliError::Connect(e.to_string()),
        other => CliError::Other(other.to_string()),
    }
}

fn from_verify(e: VerifyFailure) -> CliError {
    CliError::Verify(e.to_string())
}

fn from_anchor(e: AnchorError) -> CliError {
    match e {
        AnchorError::Corrupt { .. } => CliError::Verify(format!(
            "{e}; run `verdb verify --re-anchor` to trust the current tip again"
        )),
        other => CliError::Verify(other.to_string()),
    }
}

#[derive(Parser)]
#[command(
    name = "verdb",
    version,
    about = "Verifiable embedded database: server, client, and benchmarks"
)]
struct Cli {
    /// TOML config file (keys: data_dir, listen, seal_max_txns,
    /// seal_max_ms, batch_verify_size).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the database over newline-delimited JSON on TCP.
    Serve {
        /// Data directory (overrides config).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Listen address, e.g. 127.0.0.1:7171; port 0 picks a free port.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Commit one value and print the receipt.
    Put {
        /// Server address (overrides config `listen`).
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value = "w")]
        column: String,
        key: String,
        value: String,
        /// Treat VALUE as a signed 64-bit integer.
        #[arg(long, conflicts_with = "b64")]
        int: bool,
        /// Treat VALUE as base64-encoded bytes.
        #[arg(long)]
        b64: bool,
        /// Treat KEY as base64-encoded bytes.
        #[arg(long)]
        key_b64: bool,
    },
    /// Delete one key (writes a tombstone version).
    Delete {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value = "w")]
        column: String,
        key: String,
        #[arg(long)]
        key_b64: bool,
    },
    /// Read the current (or historical) value of one key.
    Get {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value = "w")]
        column: String,
        key: String,
        /// Read as of this commit timestamp instead of the latest state.
        #[arg(long)]
        as_of: Option<u64>,
        /// Verify the response against the proof and chain before printing.
        #[arg(long)]
        verify: bool,
        /// Persistent trust-anchor file (implies state across invocations).
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        key_b64: bool,
    },
    /// Scan the latest row of every key in [LOW, HIGH].
    Scan {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value = "w")]
        column: String,
        low: String,
        high: String,
        #[arg(long)]
        as_of: Option<u64>,
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        key_b64: bool,
    },
    /// Print every stored version of one key, oldest first.
    History {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value = "w")]
        column: String,
        key: String,
        #[arg(long)]
        as_of: Option<u64>,
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        key_b64: bool,
    },
    /// Fetch the chain since the local anchor, check it, and advance the
    /// anchor to the server's tip.
    Verify {
        #[arg(long)]
        addr: Option<String>,
        /// Persistent trust-anchor file to extend.
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// Discard a corrupt or outdated anchor and trust the current tip.
        #[arg(long)]
        re_anchor: bool,
    },
    /// Audit the hash chain of a data directory, offline.
    Audit {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        from: u64,
        /// Last block to check (default: the tip).
        #[arg(long)]
        to: Option<u64>,
    },
    /// Replay the journal, rebuild derived state, and rewrite the sidecar
    /// index files.
    Reindex {
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Run one benchmark configuration and print (optionally append) a CSV
    /// row.
    Bench {
        /// unified | baseline | kvs | nonintrusive
        #[arg(long)]
        system: String,
        /// Initial record count (10,000 ..= 1,280,000).
        #[arg(long)]
        records: u64,
        /// read | write | range
        #[arg(long)]
        mix: String,
        /// Fraction of the key space each range scan covers.
        #[arg(long, default_value_t = 0.001)]
        selectivity: f64,
        /// Verify every read client-side during the measured phase.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Measured operations (default: 2,000).
        #[arg(long, default_value_t = 2_000)]
        ops: u64,
        /// Append the row to this CSV file (header written when new).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Cmd::Serve { data_dir, listen } => serve(&config, data_dir, listen),
        Cmd::Put {
            addr,
            column,
            key,
            value,
            int,
            b64,
            key_b64,
        } => put(&config, addr, column, key, value, int, b64, key_b64),
        Cmd::Delete {
            addr,
            column,
            key,
            key_b64,
        } => delete(&config, addr, column, key, key_b64),
        Cmd::Get {
            addr,
            column,
            key,
            as_of,
            verify,
            anchor,
            key_b64,
        } => {
            let key = parse_key(&key, key_b64)?;
            let request = ReadRequest::Point {
                column: column.clone(),
                primary_key: key.clone(),
            };
            let wire = |anchor_height| WireRequest::Get {
                column: column.clone(),
                key: WireBytes::from_bytes(&key),
                as_of,
                anchor_height,
            };
            let rows = read_and_maybe_verify(&config, addr, wire, request, as_of, verify, anchor)?;
            match rows.first() {
                Some((_, _, value)) => println!("{value}"),
                None => println!("absent"),
            }
            Ok(())
        }
        Cmd::Scan {
            addr,
            column,
            low,
            high,
            as_of,
            verify,
            anchor,
            key_b64,
        } => {
            let low = parse_key(&low, key_b64)?;
            let high = parse_key(&high, key_b64)?;
            let request = ReadRequest::Range {
                column: column.clone(),
                low: low.clone(),
                high: high.clone(),
            };
            let wire = |anchor_height| WireRequest::Scan {
                column: column.clone(),
                low: WireBytes::from_bytes(&low),
                high: WireBytes::from_bytes(&high),
                as_of,
                anchor_height,
            };
            let rows = read_and_maybe_verify(&config, addr, wire, request, as_of, verify, anchor)?;
            for (key, ts, value) in rows {
                println!("{key}\t{ts}\t{value}");
            }
            Ok(())
        }
        Cmd::History {
            addr,
            column,
            key,
            as_of,
            verify,
            anchor,
            key_b64,
        } => {
            let key = parse_key(&key, key_b64)?;
            let request = ReadRequest::History {
                column: column.clone(),
                primary_key: key.clone(),
            };
            let wire = |anchor_height| WireRequest::History {
                column: column.clone(),
                key: WireBytes::from_bytes(&key),
                as_of,
                anchor_height,
            };
            let rows = read_and_maybe_verify(&config, addr, wire, request, as_of, verify, anchor)?;
            for (key, ts, value) in rows {
                println!("{key}\t{ts}\t{value}");
            }
            Ok(())
        }
        Cmd::Verify {
            addr,
            anchor,
            re_anchor,
        } => verify_chain(&config, addr, anchor, re_anchor),
        Cmd::Audit { data_dir, from, to } => audit(&config, data_dir, from, to),
        Cmd::Reindex { data_dir } => reindex(&config, data_dir),
        Cmd::Bench {
            system,
            records,
            mix,
            selectivity,
            verify,
            seed,
            ops,
            csv,
        } => bench(system, records, mix, selectivity, verify, seed, ops, csv),
    }
}

// --- helpers -------------------------------------------------------------

fn parse_key(text: &str, b64: bool) -> Result<Vec<u8>, CliError> {
    if b64 {
        WireBytes::B64 {
            b64: text.to_string(),
        }
        .to_bytes()
        .map_err(|e| CliError::Config(e.to_string()))
    } else {
        Ok(text.as_bytes().to_vec())
    }
}

fn render_bytes(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if !s.contains('\t') && !s.contains('\n') => s.to_string(),
        _ => match WireBytes::from_bytes(bytes) {
            WireBytes::B64 { b64 } => format!("b64:{b64}"),
            WireBytes::Text(s) => s,
        },
    }
}

fn render_value(value: &CellValue) -> String {
    match value {
        CellValue::Int64(v) => v.to_string(),
        CellValue::Utf8(s) => s.clone(),
        CellValue::Bytes(b) => render_bytes(b),
        CellValue::Tombstone => "(deleted)".to_string(),
    }
}

fn connect(config: &Config, addr: Option<String>) -> Result<Client, CliError> {
    let addr = addr.unwrap_or_else(|| config.listen.clone());
    Client::connect(addr.as_str())
        .map_err(|e| CliError::Connect(format!("cannot reach {addr}: {e}")))
}

fn open_verifier(anchor: Option<&Path>) -> Result<Verifier, CliError> {
    match anchor {
        Some(path) => Verifier::with_anchor_file(path).map_err(from_anchor),
        None => Ok(Verifier::in_memory()),
    }
}

/// Shared read path: send the wire request (with the anchor height when one
/// is known), optionally verify the full response, and return printable
/// rows.
fn read_and_maybe_verify(
    config: &Config,
    addr: Option<String>,
    wire: impl Fn(Option<u64>) -> WireRequest,
    request: ReadRequest,
    as_of: Option<u64>,
    verify: bool,
    anchor: Option<PathBuf>,
) -> Result<Vec<(String, u64, String)>, CliError> {
    let mut client = connect(config, addr)?;
    let mut verifier = open_verifier(anchor.as_deref())?;
    let anchor_height = verifier.anchor().map(|c| c.height);
    let response = client.read(&wire(anchor_height)).map_err(from_api)?;
    if verify {
        verifier
            .verify_response(&request, as_of, &response)
            .map_err(from_verify)?;
        let anchored = verifier.anchor().expect("verification advances the anchor");
        println!("VERIFIED height={} tip={}", anchored.height, anchored.tip_hash.to_hex());
    }
    Ok(response
        .rows
        .iter()
        .map(|row| {
            (
                render_bytes(&row.key.primary_key),
                row.key.timestamp,
                render_value(&row.value),
            )
        })
        .collect())
}

// --- subcommands ----------------------------------------------------------

fn serve(
    config: &Config,
    data_dir: Option<PathBuf>,
    listen: Option<String>,
) -> Result<(), CliError> {
    let data_dir = data_dir.unwrap_or_else(|| config.data_dir.clone());
    let listen = listen.unwrap_or_else(|| config.listen.clone());
    let engine = Engine::open(
        &data_dir,
        EngineConfig {
            seal_max_txns: config.seal_max_txns,
            seal_max_ms: config.seal_max_ms,
            durability: Durability::Strict,
            ..EngineConfig::default()
        },
    )
    .map_err(|e| CliError::Other(format!("cannot open {}: {e}", data_dir.display())))?;
    let service = Service::spawn(std::sync::Arc::new(engine), listen.as_str())
        .map_err(|e| CliError::Config(format!("cannot listen on {listen}: {e}")))?;
    println!("listening on {}", service.addr());
    use std::io::Write as _;
    std::io::stdout().flush().ok();
    // Serve until killed; the accept loop runs on its own thread.
    loop {
        std::thread::park();
    }
}

#[allow(clippy::too_many_arguments)]
fn put(
    config: &Config,
    addr: Option<String>,
    column: String,
    key: String,
    value: String,
    int: bool,
    b64: bool,
    key_b64: bool,
) -> Result<(), CliError> {
    let key = parse_key(&key, key_b64)?;
    let value = if int {
        WireValue::Int(
            value
                .parse::<i64>()
                .map_err(|e| CliError::Config(format!("--int value: {e}")))?,
        )
    } else if b64 {
        WireValue::B64(value)
    } else {
        WireValue::Str(value)
    };
    let mut client = connect(config, addr)?;
    let result = client
        .request(&WireRequest::Put {
            column,
            key: WireBytes::from_bytes(&key),
            value,
        })
        .map_err(from_api)?;
    match result {
        WireResult::Committed {
            commit_ts,
            commitment,
            ..
        } => {
            println!("committed ts={commit_ts} height={}", commitment.height);
            Ok(())
        }
        other => Err(CliError::Other(format!("unexpected reply: {other:?}"))),
    }
}

fn delete(
    config: &Config,
    addr: Option<String>,
    column: String,
    key: String,
    key_b64: bool,
) -> Result<(), CliError> {
    let key = parse_key(&key, key_b64)?;
    let mut client = connect(config, addr)?;
    let result = client
        .request(&WireRequest::Delete {
            column,
            key: WireBytes::from_bytes(&key),
        })
        .map_err(from_api)?;
    match result {
        WireResult::Committed {
            commit_ts,
            commitment,
            ..
        } => {
            println!("deleted ts={commit_ts} height={}", commitment.height);
            Ok(())
        }
        other => Err(CliError::Other(format!("unexpected reply: {other:?}"))),
    }
}

fn verify_chain(
    config: &Config,
    addr: Option<String>,
    anchor: Option<PathBuf>,
    re_anchor: bool,
) -> Result<(), CliError> {
    let mut verifier = match (open_verifier(anchor.as_deref()), re_anchor) {
        (Ok(v), false) => v,
        (Ok(mut v), true) => {
            v.reset_anchor().map_err(from_anchor)?;
            v
        }
        (Err(_), true) => {
            // Explicit re-anchor: discard whatever is in the file.
            let path = anchor.as_deref().expect("corrupt anchor implies a file");
            std::fs::remove_file(path)
                .map_err(|e| CliError::Verify(format!("cannot remove anchor: {e}")))?;
            open_verifier(Some(path))?
        }
        (Err(e), false) => return Err(e),
    };
    let mut client = connect(config, addr)?;
    let before = verifier.anchor().map(|c| c.height);
    let result = client
        .request(&WireRequest::Verify {
            anchor_height: before,
        })
        .map_err(from_api)?;
    let (commitment, chain) =
        verdb::api::decode_segment_result(&result).map_err(|e| CliError::Other(e.to_string()))?;
    verifier
        .extend_anchor(&commitment, &chain)
        .map_err(from_verify)?;
    let after = verifier.anchor().expect("extension anchors the tip");
    match before {
        Some(h) => println!(
            "anchor advanced {} -> {} tip={}",
            h,
            after.height,
            after.tip_hash.to_hex()
        ),
        None => println!(
            "anchored at height {} tip={}",
            after.height,
            after.tip_hash.to_hex()
        ),
    }
    Ok(())
}

fn audit(
    config: &Config,
    data_dir: Option<PathBuf>,
    from: u64,
    to: Option<u64>,
) -> Result<(), CliError> {
    let data_dir = data_dir.unwrap_or_else(|| config.data_dir.clone());
    // Audit the journal bytes directly rather than through `Engine::open`:
    // a damaged directory must still be auditable, and the point of the
    // audit is to name the first bad block, not to refuse to look.
    let journal = data_dir.join("journal.log");
    let report = verdb::ledger::audit_journal_file(&journal, from, to)
        .map_err(|e| CliError::Other(format!("cannot audit {}: {e}", journal.display())))?;
    match report.first_violation {
        None => {
            println!(
                "audit clean: blocks {}..={} ({} checked)",
                report.from, report.to, report.blocks_checked
            );
            Ok(())
        }
        Some((height, detail)) => Err(CliError::Audit { height, detail }),
    }
}

fn reindex(config: &Config, data_dir: Option<PathBuf>) -> Result<(), CliError> {
    let data_dir = data_dir.unwrap_or_else(|| config.data_dir.clone());
    // Opening replays the whole journal against the store and rebuilds the
    // index and inverted mappings, cross-checking every sealed root;
    // flushing rewrites the sidecar files from that clean state.
    let engine = Engine::open(&data_dir, EngineConfig::default())
        .map_err(|e| CliError::Other(format!("reindex failed: {e}")))?;
    engine
        .flush()
        .map_err(|e| CliError::Other(format!("reindex failed: {e}")))?;
    let tip = engine
        .commitment()
        .map_err(|e| CliError::Other(e.to_string()))?
        .height;
    println!("reindexed: {} blocks replayed and verified", tip + 1);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    system: String,
    records: u64,
    mix: String,
    selectivity: f64,
    verify: bool,
    seed: u64,
    ops: u64,
    csv: Option<PathBuf>,
) -> Result<(), CliError> {
    let mix = match mix.as_str() {
        "read" => Mix::ReadOnly,
        "write" => Mix::WriteOnly,
        "range" => Mix::RangeOnly(selectivity),
        other => {
            return Err(CliError::Config(format!(
                "unknown mix {other:?} (expected read, write, or range)"
            )))
        }
    };
    let spec = WorkloadSpec {
        initial_records: records,
        ops,
        mix,
        verify,
        seed,
    };
    let dir = tempfile::TempDir::new().map_err(|e| CliError::Other(e.to_string()))?;
    let mut sys: Box<dyn BenchSystem> = match system.as_str() {
        "unified" => Box::new(Unified::open(dir.path()).map_err(|e| CliError::Other(e.to_string()))?),
        "baseline" => {
            Box::new(Baseline::open(dir.path()).map_err(|e| CliError::Other(e.to_string()))?)
        }
        "kvs" => Box::new(PlainKvs::new()),
        "nonintrusive" => {
            Box::new(SplitSystem::open(dir.path()).map_err(|e| CliError::Other(e.to_string()))?)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown system {other:?} (expected unified, baseline, kvs, or nonintrusive)"
            )))
        }
    };
    let result = run_bench(&spec, sys.as_mut()).map_err(|e| CliError::Other(e.to_string()))?;
    let row = csv_row(&result);
    if let Some(path) = csv {
        use std::io::Write as _;
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::Other(format!("cannot open {}: {e}", path.display())))?;
        if fresh {
            writeln!(file, "{}", csv_header()).map_err(|e| CliError::Other(e.to_string()))?;
        }
        writeln!(file, "{row}").map_err(|e| CliError::Other(e.to_string()))?;
    }
    println!("{}", csv_header());
    println!("{row}");
    Ok(())
}
