//! Reduced three-area power system: exact step map, Lipschitz constant and
//! a frequency-band abstraction (`configs/power3a3m.toml`).

use std::path::PathBuf;

use ddabs::cli::{cmd_abstract, cmd_synthesize, RunConfig};
use ddabs::systems::{builtin_power3a3m, power3a3m};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = builtin_power3a3m()?;
    let mut x = vec![0.0; 3];
    println!("step response to u = 0.1 (output y = Cx):");
    for k in 1..=5 {
        x = system.step(&x, &[0.1], &[0.0, 0.0, 0.0])?;
        println!("  t = {:.1}: x = {x:.5?}, y = {:.6}", k as f64 * power3a3m::TAU, power3a3m::output(&x));
    }

    let path = std::env::args_os().nth(1).map_or_else(
        || PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/power3a3m.toml")),
        PathBuf::from,
    );
    let cfg = RunConfig::load(&path)?;
    let (out, abs) = cmd_abstract(&cfg)?;
    println!("{}", out.report);
    println!("{} of {} pairs leave the state box", abs.out_of_domain_count(), abs.num_cells() * abs.num_inputs());
    let (out, _) = cmd_synthesize(&cfg, None)?;
    println!("{}", out.report);
    Ok(())
}
