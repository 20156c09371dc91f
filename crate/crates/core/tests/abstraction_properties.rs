//! Fixed-point and soundness properties on random explicit abstractions and
//! on a desk-scale DC-DC instance.

use ddabs::abstraction::{build_abstraction, input_levels, Abstraction, AbstractionMeta, BuildOptions, RadiusRule};
use ddabs::geometry::{Hyperrect, UniformGrid};
use ddabs::scenario::ScenarioConfig;
use ddabs::synthesis::{
    check_cpre_monotone, cpre, simulate_closed_loop, solve_objective, solve_reach, solve_reach_stay, solve_safety,
    validate, DisturbanceModel, Game, Objective, ObjectiveKind, Region, RegionSpec,
};
use ddabs::systems::{builtin_dcdc, DcdcParams};
use proptest::prelude::*;

fn meta(inputs: usize) -> AbstractionMeta {
    AbstractionMeta {
        epsilon: 0.1,
        beta: 0.1,
        seed: 0,
        samples_per_pair: 0,
        gamma_mode: None,
        gamma: vec![0.0; inputs],
        lipschitz: vec![0.0; inputs],
        radius_rule: RadiusRule::Explicit,
        unresolved: 0,
    }
}

/// Unit cells on `[0, cells]`; one `(center, radius)` per pair.
fn line(cells: usize, inputs: usize, desc: &[(f64, f64)]) -> Abstraction {
    let grid = UniformGrid::new(Hyperrect::new(vec![0.0], vec![cells as f64]).unwrap(), vec![0.5]).unwrap();
    let levels = (0..inputs).map(|i| vec![i as f64]).collect();
    let centers = desc.iter().map(|d| d.0).collect();
    let radii = desc.iter().map(|d| d.1).collect();
    Abstraction::from_descriptors(grid, levels, centers, radii, meta(inputs)).unwrap()
}

fn instance() -> impl Strategy<Value = (usize, usize, Vec<(f64, f64)>, Vec<bool>, f64)> {
    (2usize..24, 1usize..4).prop_flat_map(|(cells, inputs)| {
        let k = cells as f64;
        (
            Just(cells),
            Just(inputs),
            prop::collection::vec((0.0..k, 0.0..1.5f64), cells * inputs),
            prop::collection::vec(any::<bool>(), cells),
            0.0..1.0f64,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn solvers_respect_their_contracts((cells, inputs, desc, mask, _) in instance()) {
        let abs = line(cells, inputs, &desc);
        let game = Game::new(&abs);
        prop_assert!(check_cpre_monotone(&game, 20, 7));

        let target = Region::from_fn(cells, |c| mask[c]);
        let avoid = Region::from_fn(cells, |c| !mask[c] && c % 3 == 0);
        let none = Region::empty(cells);

        let reach = solve_reach(&game, &target, &avoid).unwrap();
        prop_assert!(reach.iterations <= cells);
        prop_assert!(target.is_subset(&reach.winning));
        prop_assert!(validate(&reach, &game, &target, &avoid).is_ok());

        let safe = solve_safety(&game, &target);
        prop_assert!(safe.iterations <= cells);
        prop_assert!(safe.winning.is_subset(&target));
        prop_assert!(safe.winning.is_subset(&cpre(&game, &safe.winning)));
        prop_assert!(validate(&safe, &game, &target, &none).is_ok());

        let stay = solve_reach_stay(&game, &target, &avoid).unwrap();
        prop_assert!(validate(&stay, &game, &target, &avoid).is_ok());
        prop_assert!(stay.winning.is_subset(&reach.winning));
    }

    #[test]
    fn smaller_radii_never_shrink_winning_sets((cells, inputs, desc, mask, shrink) in instance()) {
        let big = line(cells, inputs, &desc);
        let small_desc: Vec<(f64, f64)> = desc.iter().map(|(c, r)| (*c, r * shrink)).collect();
        let small = line(cells, inputs, &small_desc);
        let target = Region::from_fn(cells, |c| mask[c]);
        let none = Region::empty(cells);
        let (gb, gs) = (Game::new(&big), Game::new(&small));
        prop_assert!(solve_reach(&gb, &target, &none).unwrap().winning.is_subset(&solve_reach(&gs, &target, &none).unwrap().winning));
        prop_assert!(solve_safety(&gb, &target).winning.is_subset(&solve_safety(&gs, &target).winning));
        prop_assert!(solve_reach_stay(&gb, &target, &none).unwrap().winning.is_subset(&solve_reach_stay(&gs, &target, &none).unwrap().winning));
    }
}

fn dcdc_objective() -> Objective {
    Objective {
        kind: ObjectiveKind::ReachStay,
        target: RegionSpec::boxes(vec![Hyperrect::new(vec![1.1, 5.4], vec![1.6, 5.9]).unwrap()]),
        avoid: RegionSpec::Nothing,
        initial: Some(vec![0.7, 5.4]),
    }
}

#[test]
fn dcdc_traces_stay_in_the_winning_region() {
    let system = builtin_dcdc(&DcdcParams::default(), [0.0, 0.0]).unwrap();
    let grid = UniformGrid::new(system.state_box().clone(), vec![0.005, 0.005]).unwrap();
    let inputs = input_levels(system.inputs(), None).unwrap();
    let config = ScenarioConfig::new(0.01, 0.01).unwrap();
    let mut opts = BuildOptions::new(4, vec![1.03, 1.03]);
    // a γ-free build keeps the winning set large enough to exercise many traces
    opts.gamma_override = Some(0.0);
    opts.samples_override = Some(400);
    let abs = build_abstraction(&system, &grid, &inputs, &config, &opts).unwrap();
    let game = Game::new(&abs);
    let objective = dcdc_objective();
    let ctrl = solve_objective(&game, &grid, &objective).unwrap();
    assert!(ctrl.winning.count() > 0);

    let starts: Vec<usize> = ctrl.winning.iter().step_by(7).take(200).collect();
    for (k, cell) in starts.into_iter().enumerate() {
        let x0 = grid.cell_center(cell).unwrap();
        let (rows, verdict) =
            simulate_closed_loop(&ctrl, &abs, &system, &objective, &x0, 200, DisturbanceModel::Zero, k as u64).unwrap();
        assert!(verdict.is_success(), "start cell {cell}: {verdict:?}");
        for r in &rows {
            let c = r.cell.expect("trace stays in the box");
            assert!(ctrl.winning.contains(c), "start cell {cell} left the winning region at t = {}", r.t);
        }
    }
}

#[test]
fn smaller_gamma_never_shrinks_the_dcdc_winning_set() {
    let system = builtin_dcdc(&DcdcParams::default(), [0.0, 0.0]).unwrap();
    let grid = UniformGrid::new(system.state_box().clone(), vec![0.005, 0.005]).unwrap();
    let inputs = input_levels(system.inputs(), None).unwrap();
    let config = ScenarioConfig::new(0.01, 0.01).unwrap();
    let mut sizes = Vec::new();
    let mut previous: Option<Region> = None;
    for gamma in [0.0006, 0.0003, 0.0] {
        let mut opts = BuildOptions::new(4, vec![1.03, 1.03]);
        opts.gamma_override = Some(gamma);
        opts.samples_override = Some(400);
        let abs = build_abstraction(&system, &grid, &inputs, &config, &opts).unwrap();
        let ctrl = solve_objective(&Game::new(&abs), &grid, &dcdc_objective()).unwrap();
        if let Some(p) = &previous {
            assert!(p.is_subset(&ctrl.winning), "gamma {gamma}");
        }
        sizes.push(ctrl.winning.count());
        previous = Some(ctrl.winning);
    }
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    assert!(sizes[2] > 0, "{sizes:?}");
    println!("winning set sizes for decreasing gamma: {sizes:?}");
}
