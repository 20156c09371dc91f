//! DC-DC boost converter, reach-and-stay: build the abstraction, synthesize,
//! and simulate the closed loop. Takes an optional config path
//! (default `configs/dcdc.toml`, about half a minute in release mode).
//!
//! ```text
//! cargo run --release --example dcdc_reach_stay -- configs/dcdc_disturbed.toml
//! ```

use std::path::PathBuf;

use ddabs::cli::{cmd_abstract, cmd_simulate, cmd_synthesize, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/dcdc.toml")), PathBuf::from);
    let cfg = RunConfig::load(&path)?;

    let (out, abs) = cmd_abstract(&cfg)?;
    println!("{}", out.report);
    let (out, ctrl) = cmd_synthesize(&cfg, None)?;
    println!("{}", out.report);

    let x0 = cfg.objective()?.initial.expect("config names an initial state");
    let won = abs.grid().point_to_cell(&x0).is_some_and(|c| ctrl.winning.contains(c));
    if !won {
        println!("initial state {x0:?} is not winning; nothing to simulate");
        return Ok(());
    }
    let (out, tally) = cmd_simulate(&cfg, None, None)?;
    println!("{}", out.report);
    println!("{}/{} runs satisfied the objective", tally.successes, tally.runs);
    Ok(())
}
