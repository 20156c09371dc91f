//! Uniform grids: cell centers, point lookup, ball overlap and refinement.

use ddabs::geometry::{Hyperrect, UniformGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bounds = Hyperrect::new(vec![0.0, 0.0], vec![10.0, 10.0])?;
    let grid = UniformGrid::new(bounds, vec![1.0, 1.0])?;
    println!("{} cells, counts {:?}", grid.len(), grid.counts());
    println!("center of cell 11: {:?}", grid.cell_center(11)?);

    for p in [[3.2, 1.7], [4.0, 4.0], [10.0, 10.0], [-0.1, 5.0]] {
        println!("point {p:?} -> {:?}", grid.point_to_cell(&p));
    }

    let (range, clipped) = grid.cells_overlapping_ball(&[5.0, 5.0], &[0.5, 1.5]);
    let cells: Vec<usize> = range.iter().collect();
    println!("ball around (5, 5): {} cells {cells:?}, clipped {clipped}", range.len());
    let (range, clipped) = grid.cells_overlapping_ball(&[9.5, 0.5], &[1.0, 0.2]);
    println!("ball near a corner: {} cells, clipped {clipped}", range.len());

    let fine = grid.refine();
    let k = fine.point_to_cell(&[3.2, 1.7]).expect("inside");
    let parent = grid.parent_cell(&fine.cell_center(k)?)?;
    println!(
        "refined: {} cells of radius {:?}; fine cell {k} lies in coarse cell {parent} (depth {:?})",
        fine.len(),
        fine.radii(),
        grid.refinement_depth(&fine)
    );
    Ok(())
}
