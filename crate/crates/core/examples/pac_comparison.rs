//! Scenario abstraction against a γ = 0 abstraction sized by the PAC bound,
//! on the same grid; reports the winning-set intersection and differences.

use std::path::PathBuf;

use ddabs::cli::{cmd_pac_compare, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/dcdc.toml")), PathBuf::from);
    let mut cfg = RunConfig::load(&path)?;
    cfg.output_dir = cfg.output_dir.join("pac");
    let (out, p) = cmd_pac_compare(&cfg)?;
    println!("{}", out.report);
    let c = &p.comparison;
    println!(
        "scenario {} cells, PAC {} cells, {:.2}% of the scenario set lies in the PAC set",
        c.size_a,
        c.size_b,
        c.a_in_b_percent()
    );
    Ok(())
}
