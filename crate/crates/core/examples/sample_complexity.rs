//! Scenario and PAC sample sizes, and the bias term, over a few parameters.

use ddabs::scenario::{bias_gamma, pac_sample_size, sample_size, GammaMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("epsilon,beta,q,scenario,pac");
    for eps in [0.1, 0.05, 0.01] {
        for beta in [1e-2, 1e-6] {
            for q in [1, 6, 12] {
                let n = sample_size(eps, beta, q)?;
                let pac = pac_sample_size(eps, beta, q)?;
                println!("{eps},{beta:e},{q},{n},{pac}");
            }
        }
    }

    // per-pair confidence on a 40,000-cell grid with two inputs
    let pairs = 40_000.0 * 2.0;
    println!("DC-DC per-pair N: {}", sample_size(0.01, 0.01 / pairs, 6)?);

    let eta = [0.0025, 0.0025];
    for (wbar, mode) in [
        ([0.0, 0.0], GammaMode::NoDisturbanceN),
        ([0.01, 0.0], GammaMode::PartialNPlusQ),
        ([0.01, 0.01], GammaMode::Full2n),
    ] {
        let g = bias_gamma(1.0, 0.01, &eta, &wbar, mode)?;
        println!("gamma with w = {wbar:?} ({mode:?}): {g:.6}");
    }
    Ok(())
}
