//! Fixed-point controller synthesis on an abstraction, closed-loop
//! simulation of the refined controller, and the grid-refinement loop.

use std::fmt;
use std::io::{self, BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{instantiate_refined, Abstraction, AbstractionError, GrowthTable, Successors};
use crate::geometry::{GeometryError, Hyperrect, UniformGrid};
use crate::sampling::{draw_symmetric, purpose, stream_rng};
use crate::systems::{SystemError, SystemModel};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("target and avoid sets overlap in {0} cells")]
    Overlap(usize),
    #[error("state {0:?} lies outside the state box")]
    OutsideDomain(Vec<f64>),
    #[error("controller undefined at cell {0}")]
    NotWinning(usize),
    #[error("controller check failed at cell {cell}: {reason}")]
    Validation { cell: usize, reason: String },
    #[error("refinement to {cells} pairs exceeds the cap of {cap}")]
    MemoryGuard { cells: usize, cap: usize },
    #[error("grids differ")]
    GridMismatch,
    #[error("malformed controller file, line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Set of grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    members: Vec<bool>,
}

impl Region {
    pub fn empty(cells: usize) -> Self {
        Self { members: vec![false; cells] }
    }

    pub fn full(cells: usize) -> Self {
        Self { members: vec![true; cells] }
    }

    pub fn from_cells(cells: usize, members: impl IntoIterator<Item = usize>) -> Self {
        let mut r = Self::empty(cells);
        for c in members {
            r.members[c] = true;
        }
        r
    }

    pub fn from_fn(cells: usize, f: impl Fn(usize) -> bool + Sync + Send) -> Self {
        Self {
            members: (0..cells).into_par_iter().map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.members[cell]
    }

    pub fn insert(&mut self, cell: usize) {
        self.members[cell] = true;
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i)
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !a || *b)
    }

    pub fn intersection(&self, other: &Region) -> Region {
        Region {
            members: self.members.iter().zip(&other.members).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn difference(&self, other: &Region) -> Region {
        Region {
            members: self.members.iter().zip(&other.members).map(|(a, b)| *a && !*b).collect(),
        }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.members
    }
}

/// Declarative description of a set of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    /// Union of boxes.
    Boxes { boxes: Vec<Hyperrect> },
    /// `{x : lo ≤ cᵀx ≤ hi}`.
    OutputBand { c: Vec<f64>, lo: f64, hi: f64 },
    /// The whole state box.
    All,
    Nothing,
    Union(Vec<RegionSpec>),
}

impl RegionSpec {
    pub fn boxes(boxes: Vec<Hyperrect>) -> Self {
        Self::Boxes { boxes }
    }

    /// Cells lying entirely inside the set.
    pub fn inner(&self, grid: &UniformGrid) -> Region {
        match self {
            Self::All => Region::full(grid.len()),
            Self::Nothing => Region::empty(grid.len()),
            Self::Boxes { boxes } => Region::from_fn(grid.len(), |c| {
                let cb = grid.cell_box(c).expect("cell in range");
                boxes.iter().any(|b| b.contains_box(&cb))
            }),
            Self::OutputBand { c, lo, hi } => Region::from_fn(grid.len(), |cell| {
                let (mid, spread) = band_extent(grid, cell, c);
                mid - spread >= *lo && mid + spread <= *hi
            }),
            Self::Union(parts) => union(grid, parts, Self::inner),
        }
    }

    /// Cells meeting the set.
    pub fn outer(&self, grid: &UniformGrid) -> Region {
        match self {
            Self::All => Region::full(grid.len()),
            Self::Nothing => Region::empty(grid.len()),
            Self::Boxes { boxes } => Region::from_fn(grid.len(), |c| {
                let cb = grid.cell_box(c).expect("cell in range");
                boxes.iter().any(|b| b.intersects(&cb))
            }),
            Self::OutputBand { c, lo, hi } => Region::from_fn(grid.len(), |cell| {
                let (mid, spread) = band_extent(grid, cell, c);
                mid + spread >= *lo && mid - spread <= *hi
            }),
            Self::Union(parts) => union(grid, parts, Self::outer),
        }
    }

    /// Whether a concrete point belongs to the set.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        match self {
            Self::All => true,
            Self::Nothing => false,
            Self::Boxes { boxes } => boxes.iter().any(|b| b.contains(x)),
            Self::OutputBand { c, lo, hi } => {
                let y: f64 = c.iter().zip(x).map(|(a, b)| a * b).sum();
                *lo <= y && y <= *hi
            }
            Self::Union(parts) => parts.iter().any(|p| p.contains_point(x)),
        }
    }
}

fn union(grid: &UniformGrid, parts: &[RegionSpec], f: impl Fn(&RegionSpec, &UniformGrid) -> Region) -> Region {
    let mut out = Region::empty(grid.len());
    for p in parts {
        for c in f(p, grid).iter() {
            out.insert(c);
        }
    }
    out
}

fn band_extent(grid: &UniformGrid, cell: usize, c: &[f64]) -> (f64, f64) {
    let center = grid.cell_center(cell).expect("cell in range");
    let mid = c.iter().zip(&center).map(|(a, b)| a * b).sum();
    let spread = c.iter().zip(grid.radii()).map(|(a, r)| a.abs() * r).sum();
    (mid, spread)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Reach,
    Safety,
    ReachStay,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reach => "reach",
            Self::Safety => "safety",
            Self::ReachStay => "reach_stay",
        })
    }
}

/// Specification: for safety the `target` is the safe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub target: RegionSpec,
    pub avoid: RegionSpec,
    pub initial: Option<Vec<f64>>,
}

/// Abstract game with successor boxes precomputed once.
#[derive(Debug, Clone)]
pub struct Game {
    cells: usize,
    inputs: usize,
    counts: Vec<usize>,
    /// Per pair `[lo₀, hi₀, lo₁, hi₁, …]`; empty for out-of-domain pairs.
    bounds: Vec<Option<Box<[u32]>>>,
}

impl Game {
    pub fn new(abs: &Abstraction) -> Self {
        let nu = abs.num_inputs();
        let bounds = (0..abs.num_cells() * nu)
            .into_par_iter()
            .map(|p| match abs.successors(p / nu, p % nu) {
                Successors::OutOfDomain => None,
                Successors::Cells(r) if r.is_empty() => None,
                Successors::Cells(r) => Some(
                    r.lo.iter()
                        .zip(&r.hi)
                        .flat_map(|(l, h)| [*l as u32, *h as u32])
                        .collect::<Vec<_>>()
                        .into_boxed_slice(),
                ),
            })
            .collect();
        Self {
            cells: abs.num_cells(),
            inputs: nu,
            counts: abs.grid().counts().to_vec(),
            bounds,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs
    }

    pub fn in_domain(&self, cell: usize, input: usize) -> bool {
        self.bounds[cell * self.inputs + input].is_some()
    }

    /// Calls `f` on every successor until it returns false; returns false for
    /// out-of-domain pairs or an early stop.
    pub fn all_successors(&self, cell: usize, input: usize, mut f: impl FnMut(usize) -> bool) -> bool {
        let Some(b) = &self.bounds[cell * self.inputs + input] else {
            return false;
        };
        let n = self.counts.len();
        let mut idx: Vec<usize> = (0..n).map(|d| b[2 * d] as usize).collect();
        loop {
            let mut flat = 0;
            let mut stride = 1;
            for d in 0..n {
                flat += idx[d] * stride;
                stride *= self.counts[d];
            }
            if !f(flat) {
                return false;
            }
            let mut d = 0;
            loop {
                if d == n {
                    return true;
                }
                if idx[d] < b[2 * d + 1] as usize {
                    idx[d] += 1;
                    break;
                }
                idx[d] = b[2 * d] as usize;
                d += 1;
            }
        }
    }

    pub fn successors(&self, cell: usize, input: usize) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        self.all_successors(cell, input, |s| {
            out.push(s);
            true
        })
        .then_some(out)
    }

    /// Lowest input whose successors all satisfy `accept`.
    pub fn certifying_input(&self, cell: usize, accept: impl Fn(usize) -> bool) -> Option<usize> {
        (0..self.inputs).find(|&u| self.all_successors(cell, u, &accept))
    }
}

/// `{cell | ∃u: succ(cell, u) in domain and ⊆ z}`.
pub fn cpre(game: &Game, z: &Region) -> Region {
    Region::from_fn(game.num_cells(), |c| game.certifying_input(c, |s| z.contains(s)).is_some())
}

pub const NO_CHOICE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub objective: ObjectiveKind,
    pub winning: Region,
    /// Input per cell; `NO_CHOICE` outside the winning set and on reach targets.
    pub choice: Vec<u32>,
    /// Reach-and-stay: invariance-phase input on the invariant set.
    pub phase_map: Option<Vec<u32>>,
    /// Reach progress: iteration at which a cell entered the winning set.
    pub level: Vec<u32>,
    pub iterations: usize,
}

impl Controller {
    pub fn invariant(&self) -> Option<Region> {
        self.phase_map
            .as_ref()
            .map(|p| Region { members: p.iter().map(|c| *c != NO_CHOICE).collect() })
    }

    pub fn is_winning(&self, cell: usize) -> bool {
        self.winning.contains(cell)
    }
}

fn check_disjoint(target: &Region, avoid: &Region) -> Result<(), SynthesisError> {
    let overlap = target.intersection(avoid).count();
    if overlap > 0 {
        Err(SynthesisError::Overlap(overlap))
    } else {
        Ok(())
    }
}

/// Least fixed point `Z ↦ target ∪ (cpre(Z) \ avoid)`; the certifying input
/// is frozen when a cell first enters `Z`.
pub fn solve_reach(game: &Game, target: &Region, avoid: &Region) -> Result<Controller, SynthesisError> {
    check_disjoint(target, avoid)?;
    let n = game.num_cells();
    let mut z = target.clone();
    let mut level = vec![u32::MAX; n];
    for c in z.iter() {
        level[c] = 0;
    }
    let mut choice = vec![NO_CHOICE; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let added: Vec<(usize, usize)> = (0..n)
            .into_par_iter()
            .filter(|&c| !z.contains(c) && !avoid.contains(c))
            .filter_map(|c| game.certifying_input(c, |s| z.contains(s)).map(|u| (c, u)))
            .collect();
        if added.is_empty() {
            break;
        }
        for (c, u) in added {
            z.insert(c);
            choice[c] = u as u32;
            level[c] = iterations as u32;
        }
    }
    Ok(Controller {
        objective: ObjectiveKind::Reach,
        winning: z,
        choice,
        phase_map: None,
        level,
        iterations,
    })
}

/// Greatest fixed point `Z ↦ safe ∩ cpre(Z)`.
pub fn solve_safety(game: &Game, safe: &Region) -> Controller {
    let n = game.num_cells();
    let mut z = safe.clone();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let removed: Vec<usize> = (0..n)
            .into_par_iter()
            .filter(|&c| z.contains(c) && game.certifying_input(c, |s| z.contains(s)).is_none())
            .collect();
        if removed.is_empty() || z.is_empty() {
            break;
        }
        for c in removed {
            z.members[c] = false;
        }
    }
    let choice: Vec<u32> = (0..n)
        .into_par_iter()
        .map(|c| {
            if z.contains(c) {
                game.certifying_input(c, |s| z.contains(s)).map_or(NO_CHOICE, |u| u as u32)
            } else {
                NO_CHOICE
            }
        })
        .collect();
    let level = z.members.iter().map(|m| if *m { 0 } else { u32::MAX }).collect();
    Controller {
        objective: ObjectiveKind::Safety,
        winning: z,
        choice,
        phase_map: None,
        level,
        iterations,
    }
}

/// Reach the maximal controlled-invariant subset of `target`, then stay there.
pub fn solve_reach_stay(game: &Game, target: &Region, avoid: &Region) -> Result<Controller, SynthesisError> {
    check_disjoint(target, avoid)?;
    let inv = solve_safety(game, target);
    let invariant = inv.winning.clone();
    let mut reach = solve_reach(game, &invariant, avoid)?;
    for c in invariant.iter() {
        reach.choice[c] = inv.choice[c];
    }
    reach.objective = ObjectiveKind::ReachStay;
    reach.phase_map = Some(inv.choice);
    reach.iterations += inv.iterations;
    Ok(reach)
}

/// Exhaustive check that every winning cell's input keeps its successors
/// where the objective needs them.
pub fn validate(ctrl: &Controller, game: &Game, target: &Region, avoid: &Region) -> Result<(), SynthesisError> {
    let fail = |cell: usize, reason: &str| Err(SynthesisError::Validation { cell, reason: reason.into() });
    let inv = ctrl.invariant();
    for c in 0..game.num_cells() {
        let winning = ctrl.winning.contains(c);
        if !winning {
            if ctrl.choice[c] != NO_CHOICE {
                return fail(c, "choice outside the winning set");
            }
            continue;
        }
        if avoid.contains(c) {
            return fail(c, "winning cell in the avoid set");
        }
        match ctrl.objective {
            ObjectiveKind::Safety => {
                if !target.contains(c) {
                    return fail(c, "winning cell outside the safe set");
                }
                let u = ctrl.choice[c];
                if u == NO_CHOICE || !game.all_successors(c, u as usize, |s| ctrl.winning.contains(s)) {
                    return fail(c, "successors leave the winning set");
                }
            }
            ObjectiveKind::Reach | ObjectiveKind::ReachStay => {
                let in_inv = inv.as_ref().is_some_and(|r| r.contains(c));
                if in_inv {
                    let inv = inv.as_ref().expect("reach-stay has an invariant");
                    if !target.contains(c) {
                        return fail(c, "invariant cell outside the target");
                    }
                    let u = ctrl.choice[c];
                    if u == NO_CHOICE || !game.all_successors(c, u as usize, |s| inv.contains(s)) {
                        return fail(c, "invariance input leaves the invariant set");
                    }
                    continue;
                }
                let lvl = ctrl.level[c];
                if lvl == 0 {
                    if ctrl.objective == ObjectiveKind::Reach && target.contains(c) {
                        continue;
                    }
                    return fail(c, "level-0 cell outside the target");
                }
                let u = ctrl.choice[c];
                if u == NO_CHOICE
                    || !game.all_successors(c, u as usize, |s| ctrl.winning.contains(s) && ctrl.level[s] < lvl)
                {
                    return fail(c, "reach input does not make progress");
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceModel {
    Zero,
    Uniform,
    /// Cycles through the corners of `W`.
    WorstCorner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Reach,
    Stay,
}

impl Phase {
    fn code(self) -> u8 {
        match self {
            Phase::Reach => 0,
            Phase::Stay => 1,
        }
    }
}

/// One controlled step from `x` under disturbance `w`.
pub fn closed_loop_step(
    ctrl: &Controller,
    abs: &Abstraction,
    system: &SystemModel,
    x: &[f64],
    w: &[f64],
    phase: &mut Phase,
) -> Result<(Vec<f64>, usize), SynthesisError> {
    let cell = abs
        .grid()
        .point_to_cell(x)
        .ok_or_else(|| SynthesisError::OutsideDomain(x.to_vec()))?;
    if !ctrl.winning.contains(cell) {
        return Err(SynthesisError::NotWinning(cell));
    }
    if let Some(map) = &ctrl.phase_map {
        if *phase == Phase::Reach && map[cell] != NO_CHOICE {
            *phase = Phase::Stay;
        }
    }
    let u = match (*phase, &ctrl.phase_map) {
        (Phase::Stay, Some(map)) => map[cell],
        _ => ctrl.choice[cell],
    };
    if u == NO_CHOICE {
        return Err(SynthesisError::NotWinning(cell));
    }
    let next = system.step(x, &abs.inputs()[u as usize], w)?;
    Ok((next, u as usize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: Vec<f64>,
    /// Input applied at this step; `None` on the final row.
    pub input: Option<usize>,
    pub cell: Option<usize>,
    pub phase: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Success,
    Failure(String),
}

impl Verdict {
    pub fn is_success(&self) -> bool {
        matches!(self, Verdict::Success)
    }
}

/// Runs the refined controller for `horizon` steps and judges the trace.
///
/// Reach: a target cell is hit (the run stops there) and no avoid point is
/// visited first. Safety: every visited cell is safe. Reach-and-stay: the
/// trace enters the invariant set and every later cell lies in the target.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    ctrl: &Controller,
    abs: &Abstraction,
    system: &SystemModel,
    objective: &Objective,
    x0: &[f64],
    horizon: usize,
    disturbance: DisturbanceModel,
    seed: u64,
) -> Result<(Vec<TrajectoryRow>, Verdict), SynthesisError> {
    let grid = abs.grid();
    let cell0 = grid.point_to_cell(x0).ok_or_else(|| SynthesisError::OutsideDomain(x0.to_vec()))?;
    if !ctrl.winning.contains(cell0) {
        return Err(SynthesisError::NotWinning(cell0));
    }
    let target = objective.target.inner(grid);
    let mut rng = stream_rng(seed, 0, 0, purpose::SIMULATION);
    let wbar = system.disturbance_bound().to_vec();
    let active: Vec<usize> = (0..wbar.len()).filter(|&k| wbar[k] > 0.0).collect();
    let mut w = vec![0.0; wbar.len()];
    let mut phase = Phase::Reach;
    let mut x = x0.to_vec();
    let mut rows = Vec::with_capacity(horizon + 1);
    let mut stayed = true;

    for t in 0..=horizon {
        let cell = grid.point_to_cell(&x);
        if objective.avoid.contains_point(&x) {
            rows.push(TrajectoryRow { t, x, input: None, cell, phase: phase.code() });
            return Ok((rows, Verdict::Failure(format!("avoid set visited at step {t}"))));
        }
        let Some(c) = cell else {
            rows.push(TrajectoryRow { t, x, input: None, cell, phase: phase.code() });
            return Ok((rows, Verdict::Failure(format!("left the state box at step {t}"))));
        };
        match ctrl.objective {
            ObjectiveKind::Reach if target.contains(c) => {
                rows.push(TrajectoryRow { t, x, input: None, cell, phase: phase.code() });
                return Ok((rows, Verdict::Success));
            }
            ObjectiveKind::Safety if !target.contains(c) => {
                rows.push(TrajectoryRow { t, x, input: None, cell, phase: phase.code() });
                return Ok((rows, Verdict::Failure(format!("left the safe set at step {t}"))));
            }
            ObjectiveKind::ReachStay if phase == Phase::Stay && !target.contains(c) => {
                stayed = false;
            }
            _ => {}
        }
        if t == horizon {
            rows.push(TrajectoryRow { t, x, input: None, cell, phase: phase.code() });
            break;
        }
        match disturbance {
            DisturbanceModel::Zero => w.fill(0.0),
            DisturbanceModel::Uniform => draw_symmetric(&mut rng, &wbar, &mut w),
            DisturbanceModel::WorstCorner => {
                w.fill(0.0);
                for (bit, &k) in active.iter().enumerate() {
                    w[k] = if (t >> bit) & 1 == 0 { wbar[k] } else { -wbar[k] };
                }
            }
        }
        let before = phase;
        match closed_loop_step(ctrl, abs, system, &x, &w, &mut phase) {
            Ok((next, u)) => {
                // the phase switch belongs to this row
                if before != phase && !target.contains(c) {
                    stayed = false;
                }
                rows.push(TrajectoryRow { t, x, input: Some(u), cell, phase: phase.code() });
                x = next;
            }
            Err(SynthesisError::NotWinning(_)) => {
                rows.push(TrajectoryRow { t, x, input: None, cell, phase: phase.code() });
                return Ok((rows, Verdict::Failure(format!("left the winning set at step {t}"))));
            }
            Err(e) => return Err(e),
        }
        if !stayed {
            break;
        }
    }
    let verdict = match ctrl.objective {
        ObjectiveKind::Reach => Verdict::Failure("target not reached within the horizon".into()),
        ObjectiveKind::Safety => Verdict::Success,
        ObjectiveKind::ReachStay => {
            if !stayed {
                Verdict::Failure("left the target after entering the invariant set".into())
            } else if phase == Phase::Stay {
                Verdict::Success
            } else {
                Verdict::Failure("invariant set not reached within the horizon".into())
            }
        }
    };
    Ok((rows, verdict))
}

/// CSV with columns `t, x…, u…, cell, phase`.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], abs: &Abstraction, mut out: W) -> io::Result<()> {
    let n = abs.grid().dim();
    let m = abs.inputs().first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("cell".into());
    header.push("phase".into());
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.t.to_string()];
        fields.extend(r.x.iter().map(|v| format!("{v:.16e}")));
        match r.input {
            Some(u) => fields.extend(abs.inputs()[u].iter().map(|v| format!("{v:.16e}"))),
            None => fields.extend((0..m).map(|_| String::new())),
        }
        fields.push(r.cell.map_or(String::new(), |c| c.to_string()));
        fields.push(r.phase.to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub depth: u32,
    pub radii: Vec<f64>,
    pub cells: usize,
    pub winning_cells: usize,
    pub winning_volume: f64,
    pub initial_winning: bool,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub controller: Controller,
    pub abstraction: Abstraction,
    pub reports: Vec<IterationReport>,
    pub success: bool,
}

/// Cell-level target (inner, minus avoid) and avoid (outer) sets.
pub fn objective_regions(grid: &UniformGrid, objective: &Objective) -> (Region, Region) {
    let avoid = objective.avoid.outer(grid);
    (objective.target.inner(grid).difference(&avoid), avoid)
}

/// Solves `objective` on `game`, dispatching on its kind.
pub fn solve_objective(game: &Game, grid: &UniformGrid, objective: &Objective) -> Result<Controller, SynthesisError> {
    let (target, avoid) = objective_regions(grid, objective);
    match objective.kind {
        ObjectiveKind::Reach => solve_reach(game, &target, &avoid),
        ObjectiveKind::Safety => Ok(solve_safety(game, &target)),
        ObjectiveKind::ReachStay => solve_reach_stay(game, &target, &avoid),
    }
}

/// Halves the grid until the initial state is winning or `max_halvings` is spent.
pub fn refine_and_synthesize(
    system: &SystemModel,
    table: &GrowthTable,
    objective: &Objective,
    max_halvings: u32,
    max_pairs: usize,
) -> Result<RefineOutcome, SynthesisError> {
    let x_in = objective
        .initial
        .clone()
        .ok_or_else(|| SynthesisError::Validation { cell: 0, reason: "refinement needs an initial state".into() })?;
    let mut grid = table.grid().clone();
    let mut reports = Vec::new();
    let nu = table.inputs().len();
    for depth in 0..=max_halvings {
        if depth > 0 {
            grid = grid.refine();
        }
        if grid.len() * nu > max_pairs {
            return Err(SynthesisError::MemoryGuard { cells: grid.len() * nu, cap: max_pairs });
        }
        let abs = instantiate_refined(table, &grid, system)?;
        let game = Game::new(&abs);
        let ctrl = solve_objective(&game, &grid, objective)?;
        let cell = grid.point_to_cell(&x_in).ok_or_else(|| SynthesisError::OutsideDomain(x_in.clone()))?;
        let won = ctrl.winning.contains(cell);
        reports.push(IterationReport {
            depth,
            radii: grid.radii().to_vec(),
            cells: grid.len(),
            winning_cells: ctrl.winning.count(),
            winning_volume: ctrl.winning.count() as f64 * grid.cell_volume(),
            initial_winning: won,
        });
        if won || depth == max_halvings {
            return Ok(RefineOutcome { controller: ctrl, abstraction: abs, reports, success: won });
        }
    }
    unreachable!("loop returns at the last depth")
}

/// `|A ∩ B|`, `|A \ B|`, `|B \ A|` of two winning sets on one grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WinningComparison {
    pub both: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub size_a: usize,
    pub size_b: usize,
}

impl WinningComparison {
    /// Share of `A` also winning in `B`, in percent (100 for empty `A`).
    pub fn a_in_b_percent(&self) -> f64 {
        if self.size_a == 0 {
            100.0
        } else {
            100.0 * self.both as f64 / self.size_a as f64
        }
    }
}

pub fn compare_winning(a: &Region, b: &Region) -> Result<WinningComparison, SynthesisError> {
    if a.len() != b.len() {
        return Err(SynthesisError::GridMismatch);
    }
    Ok(WinningComparison {
        both: a.intersection(b).count(),
        only_a: a.difference(b).count(),
        only_b: b.difference(a).count(),
        size_a: a.count(),
        size_b: b.count(),
    })
}

/// Controller file: header with grid and objective, then one line per
/// winning cell `cell choice phase_choice level` (`-` for none).
pub fn write_controller<W: Write>(ctrl: &Controller, grid: &UniformGrid, mut out: W) -> io::Result<()> {
    let f = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
    let opt = |v: u32| if v == NO_CHOICE { "-".to_string() } else { v.to_string() };
    writeln!(out, "ddabs-controller 1")?;
    writeln!(out, "objective {}", ctrl.objective)?;
    writeln!(out, "lower {}", f(grid.bounds().lower()))?;
    writeln!(out, "upper {}", f(grid.bounds().upper()))?;
    writeln!(out, "radii {}", f(grid.radii()))?;
    writeln!(out, "iterations {}", ctrl.iterations)?;
    writeln!(out, "winning {}", ctrl.winning.count())?;
    for c in ctrl.winning.iter() {
        let phase = ctrl.phase_map.as_ref().map_or(NO_CHOICE, |p| p[c]);
        writeln!(out, "{c} {} {} {}", opt(ctrl.choice[c]), opt(phase), ctrl.level[c])?;
    }
    Ok(())
}

pub fn read_controller<R: BufRead>(input: R) -> Result<(Controller, UniformGrid), SynthesisError> {
    let lines: Vec<String> = input.lines().collect::<Result<_, _>>()?;
    let perr = |line: usize, reason: &str| SynthesisError::Parse { line, reason: reason.into() };
    let field = |i: usize, key: &str| -> Result<Vec<&str>, SynthesisError> {
        let line = lines.get(i).ok_or_else(|| perr(i + 1, "truncated file"))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(perr(i + 1, &format!("expected `{key}`")));
        }
        Ok(parts.collect())
    };
    let nums = |i: usize, v: &[&str]| -> Result<Vec<f64>, SynthesisError> {
        v.iter().map(|s| s.parse::<f64>().map_err(|e| perr(i + 1, &e.to_string()))).collect()
    };
    if field(0, "ddabs-controller")? != ["1"] {
        return Err(perr(1, "unsupported version"));
    }
    let objective = match field(1, "objective")?.first().copied() {
        Some("reach") => ObjectiveKind::Reach,
        Some("safety") => ObjectiveKind::Safety,
        Some("reach_stay") => ObjectiveKind::ReachStay,
        _ => return Err(perr(2, "unknown objective")),
    };
    let lower = nums(2, &field(2, "lower")?)?;
    let upper = nums(3, &field(3, "upper")?)?;
    let radii = nums(4, &field(4, "radii")?)?;
    let grid = UniformGrid::new(Hyperrect::new(lower, upper)?, radii)?;
    let iterations = field(5, "iterations")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(6, "bad iteration count"))?;
    let count: usize = field(6, "winning")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(7, "bad winning count"))?;
    let n = grid.len();
    let mut winning = Region::empty(n);
    let mut choice = vec![NO_CHOICE; n];
    let mut phase = vec![NO_CHOICE; n];
    let mut level = vec![u32::MAX; n];
    let opt = |s: &str, i: usize| -> Result<u32, SynthesisError> {
        if s == "-" {
            Ok(NO_CHOICE)
        } else {
            s.parse().map_err(|_| perr(i + 1, "bad input index"))
        }
    };
    for i in 7..7 + count {
        let line = lines.get(i).ok_or_else(|| perr(i + 1, "truncated cell list"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(perr(i + 1, "expected four fields"));
        }
        let c: usize = parts[0].parse().map_err(|_| perr(i + 1, "bad cell"))?;
        if c >= n {
            return Err(perr(i + 1, "cell out of range"));
        }
        winning.insert(c);
        choice[c] = opt(parts[1], i)?;
        phase[c] = opt(parts[2], i)?;
        level[c] = parts[3].parse().map_err(|_| perr(i + 1, "bad level"))?;
    }
    Ok((
        Controller {
            objective,
            winning,
            choice,
            phase_map: (objective == ObjectiveKind::ReachStay).then_some(phase),
            level,
            iterations,
        },
        grid,
    ))
}

/// Checks `cpre(Z₁) ⊆ cpre(Z₂)` on random nested pairs `Z₁ ⊆ Z₂`.
pub fn check_cpre_monotone(game: &Game, trials: usize, seed: u64) -> bool {
    let mut rng = stream_rng(seed, 0, 0, purpose::VALIDATION);
    let n = game.num_cells();
    (0..trials).all(|_| {
        let p2: f64 = rng.random_range(0.3..1.0);
        let z2 = Region { members: (0..n).map(|_| rng.random::<f64>() < p2).collect() };
        let z1 = Region { members: z2.members.iter().map(|m| *m && rng.random::<f64>() < 0.7).collect() };
        cpre(game, &z1).is_subset(&cpre(game, &z2))
    })
}
