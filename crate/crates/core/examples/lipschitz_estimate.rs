//! Lipschitz constants of the built-in systems from block maxima of slopes.

use ddabs::abstraction::input_levels;
use ddabs::lipschitz::{estimate_lipschitz, LipschitzParams};
use ddabs::systems::{builtin_dcdc, builtin_power3a3m, DcdcParams, SystemModel};

fn report(system: &SystemModel, inputs: &[Vec<f64>], params: &LipschitzParams) -> Result<(), Box<dyn std::error::Error>> {
    let est = estimate_lipschitz(system, inputs, params)?;
    for (u, r) in inputs.iter().zip(&est.per_input) {
        match r {
            Ok(e) => println!(
                "{} u = {u:?}: L = {:.4} (block max {:.4}, scale {:.4}, shape {:.3})",
                system.name(),
                e.lipschitz,
                e.block_max,
                e.fit.scale,
                e.fit.shape
            ),
            Err(err) => println!("{} u = {u:?}: fit failed: {err}", system.name()),
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for wbar in [[0.0, 0.0], [0.01, 0.0]] {
        let dcdc = builtin_dcdc(&DcdcParams::default(), wbar)?;
        let inputs = input_levels(dcdc.inputs(), None)?;
        println!("DC-DC with w = {wbar:?}");
        report(&dcdc, &inputs, &LipschitzParams::defaults_for(&dcdc, 1))?;
    }

    let power = builtin_power3a3m()?;
    let params = LipschitzParams { delta: 0.05, ..LipschitzParams::defaults_for(&power, 1) };
    report(&power, &[vec![0.0], vec![0.25], vec![0.5]], &params)?;
    Ok(())
}
