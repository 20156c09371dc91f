//! Grid refinement on the scalar contraction `ẋ = -x + u`: one growth table
//! at the coarse grid, then halving until the initial state is winning.

use std::path::PathBuf;

use ddabs::cli::{cmd_refine_synthesize, cmd_simulate, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os().nth(1).map_or_else(
        || PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/contraction.toml")),
        PathBuf::from,
    );
    let cfg = RunConfig::load(&path)?;
    let (out, result) = cmd_refine_synthesize(&cfg)?;
    println!("{}", out.report);
    println!("depth  cells  winning  initial");
    for it in &result.reports {
        println!("{:>5}  {:>5}  {:>7}  {}", it.depth, it.cells, it.winning_cells, it.initial_winning);
    }
    if result.success {
        let (_, tally) = cmd_simulate(&cfg, None, None)?;
        println!("{}/{} closed-loop runs reached and stayed in the target", tally.successes, tally.runs);
    }
    Ok(())
}
