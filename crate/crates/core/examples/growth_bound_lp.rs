//! One scenario program: sample a cell of a 2-D LTI system, solve the growth
//! LP and compare it with the bound derived from the known matrices.

use ddabs::geometry::{Hyperrect, UniformGrid};
use ddabs::sampling::{nominal_successor, sample_cell_batch};
use ddabs::scenario::{bias_gamma, sample_size, solve_growth_lp, GammaMode};
use ddabs::systems::{lti_system, model_growth_bound, InputSpace};
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = DMatrix::from_row_slice(2, 2, &[-0.8, 0.4, -0.3, -0.5]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let wbar = vec![0.05, 0.02];
    let tau = 0.5;
    let state = Hyperrect::new(vec![-2.0, -2.0], vec![2.0, 2.0])?;
    let system = lti_system(
        "lti2",
        a.clone(),
        b,
        DMatrix::identity(2, 2),
        state.clone(),
        InputSpace::Levels(vec![vec![0.0], vec![1.0]]),
        wbar.clone(),
        tau,
    )?;
    let grid = UniformGrid::new(state, vec![0.1, 0.1])?;
    let (cell, u) = (grid.point_to_cell(&[0.55, -0.35]).expect("inside"), [1.0]);
    let center = grid.cell_center(cell)?;

    let n = sample_size(0.01, 0.01, 6)?;
    let gamma = bias_gamma(1.0, 0.01, grid.radii(), &wbar, GammaMode::Full2n)?;
    let batch = sample_cell_batch(&system, &grid, cell, 1, &u, n as usize, 3)?;
    let nominal = nominal_successor(&system, &center, &u)?;
    let gb = solve_growth_lp(&batch, &center, &nominal, gamma, 10.0)?;
    println!("cell {cell} at {center:?}, N = {n}, gamma = {gamma:.5}");
    println!("scenario theta1 = {:?} {:?}, theta2 = {:?}", gb.theta1_row(0), gb.theta1_row(1), gb.theta2());
    println!("scenario radius: {:?}", gb.eval(grid.radii()));

    let (theta1, theta2) = model_growth_bound(&a, &wbar, tau);
    let r = nalgebra::DVector::from_column_slice(grid.radii());
    let model = &theta1 * r + nalgebra::DVector::from_vec(theta2);
    println!("model-based radius: {:?}", model.as_slice());
    Ok(())
}
