//! Crash-injection child: opens the engine at a directory, commits a range
//! of single-put transactions, and prints one ACK line per durable commit.
//! The parent harness kills this process at arbitrary moments and then
//! checks that every acknowledged transaction survived recovery.
//!
//! Usage: crashload <dir> <start_id> <count> <keyspace>

use std::io::Write;

use verdb::codec::CellValue;
use verdb::engine::{Engine, EngineConfig};
use verdb::store::Durability;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 5 {
        eprintln!("usage: crashload <dir> <start_id> <count> <keyspace>");
        std::process::exit(2);
    }
    let dir = std::path::PathBuf::from(&args[1]);
    let start: u64 = args[2].parse().expect("start_id");
    let count: u64 = args[3].parse().expect("count");
    let keyspace: u64 = args[4].parse().expect("keyspace");

    let engine = Engine::open(
        &dir,
        EngineConfig {
            seal_max_ms: 0,
            durability: Durability::Buffered,
            ..EngineConfig::default()
        },
    )
    .expect("open engine");

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for id in start..start + count {
        let key = format!("k{:05}", id % keyspace);
        let mut value = id.to_be_bytes().to_vec();
        value.resize(20, 0);
        engine
            .put("d", key.as_bytes(), CellValue::Bytes(value))
            .expect("commit");
        // The commit returned, so the block is sealed: acknowledge it.
        writeln!(out, "ACK {id}").expect("stdout");
        out.flush().expect("flush");
    }
}
