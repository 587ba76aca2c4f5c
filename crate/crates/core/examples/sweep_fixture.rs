//! Loads the bundled synthetic experiment, runs the five presets and the
//! max_enc x max_defer grid, and prints the accuracy/invocation trade-off.
//!
//! `cargo run --release --example sweep_fixture -- [config.toml]`

use std::path::PathBuf;

use streamroute::harness::{describe, run_sweep, ExperimentConfig};

fn main() -> streamroute::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic.toml"));
    let cfg = ExperimentConfig::load(Some(&path), &[], None)?;
    let rows = run_sweep(&cfg)?;

    for r in rows.iter().filter(|r| r.name != "grid") {
        println!("{:<14} {}", r.name, describe(&r.report));
    }

    let grid: Vec<_> = rows.iter().filter(|r| r.name == "grid").collect();
    let mut defers: Vec<u32> = grid.iter().map(|r| r.max_defer).collect();
    defers.sort_unstable();
    defers.dedup();
    println!("\naccuracy / invocation rate, rows max_enc, columns max_defer {defers:?}");
    let mut encs: Vec<u32> = grid.iter().map(|r| r.max_enc).collect();
    encs.sort_unstable();
    encs.dedup();
    for e in encs {
        let cells: Vec<String> = defers
            .iter()
            .filter_map(|&d| grid.iter().find(|r| r.max_enc == e && r.max_defer == d))
            .map(|r| format!("{:.3}/{:.2}", r.report.accuracy, r.report.vlm_invoc_rate))
            .collect();
        println!("{e:>3}  {}", cells.join("  "));
    }
    Ok(())
}
