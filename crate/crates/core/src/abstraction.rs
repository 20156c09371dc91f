//! Finite abstractions built from trajectory data.
//!
//! Each `(cell, input)` pair stores a ball `Ω_λ(z)` over-approximating the
//! one-step reachable set of the cell. Successor cells are expanded from the
//! ball on demand, so memory stays `O(n_x · n_u)`.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CellRange, GeometryError, Hyperrect, UniformGrid};
use crate::sampling::{
    disturbed_successor, nominal_successor, purpose, sample_cell_batch, sample_paired_batch, stream_rng,
    SamplingError,
};
use crate::scenario::{
    bias_gamma, sample_size, solve_growth_constraints, GammaMode, GrowthBound, GrowthConstraints, GrowthMode,
    ObjectiveWeights, ScenarioConfig, ScenarioError,
};
use crate::systems::{InputSpace, SystemError, SystemModel};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{count} pairs unresolved; first: cell {cell}, input {input}: {reason}")]
    Unresolved {
        count: usize,
        cell: usize,
        input: usize,
        reason: String,
    },
    #[error("grid and system disagree: {0}")]
    Mismatch(String),
    #[error("malformed abstraction file, line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Input values: explicit levels as given, or a lattice of the input box.
pub fn input_levels(inputs: &InputSpace, step: Option<&[f64]>) -> Result<Vec<Vec<f64>>, AbstractionError> {
    match inputs {
        InputSpace::Levels(l) => Ok(l.clone()),
        InputSpace::Box(b) => {
            let step = step.ok_or_else(|| AbstractionError::Mismatch("an input box needs an input step".into()))?;
            if step.len() != b.dim() || step.iter().any(|s| !(*s > 0.0)) {
                return Err(AbstractionError::Mismatch("input step must be positive per input dimension".into()));
            }
            let axes: Vec<Vec<f64>> = (0..b.dim())
                .map(|d| {
                    let k = ((b.width(d) / step[d]) * (1.0 + 1e-12)).floor() as usize;
                    (0..=k).map(|i| b.lower()[d] + i as f64 * step[d]).collect()
                })
                .collect();
            let mut out = vec![Vec::new()];
            for axis in &axes {
                out = axis
                    .iter()
                    .flat_map(|v| {
                        out.iter().map(move |prefix| {
                            let mut p = prefix.clone();
                            p.push(*v);
                            p
                        })
                    })
                    .collect();
            }
            // dimension 0 varies fastest
            out.sort_by(|a, b| a.iter().rev().zip(b.iter().rev()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Ok,
    /// The ball leaves the state box.
    OutOfDomain,
    /// The scenario program failed (permissive builds only).
    Unresolved,
}

/// One-step reach descriptor of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Successor<'a> {
    Ball { center: &'a [f64], radius: &'a [f64] },
    OutOfDomain,
}

/// Expanded successor set.
#[derive(Debug, Clone, PartialEq)]
pub enum Successors {
    Cells(CellRange),
    OutOfDomain,
}

/// How descriptor radii were derived from the growth bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusRule {
    /// `λ = θ₁ η + θ₂ + γ` around the nominal successor of the cell center.
    CellRadius,
    /// `λ = θ₁ η_fine + θ₂ + γ` from a coarse paired bound, `depth` halvings down,
    /// around an observed successor of the fine-cell center.
    Refined { depth: u32 },
    /// Radii supplied by the caller.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionMeta {
    pub epsilon: f64,
    pub beta: f64,
    pub seed: u64,
    pub samples_per_pair: u64,
    pub gamma_mode: Option<GammaMode>,
    /// γ per input.
    pub gamma: Vec<f64>,
    /// Lipschitz constant per input used for γ.
    pub lipschitz: Vec<f64>,
    pub radius_rule: RadiusRule,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    grid: UniformGrid,
    inputs: Vec<Vec<f64>>,
    centers: Vec<f64>,
    radii: Vec<f64>,
    status: Vec<PairStatus>,
    pub meta: AbstractionMeta,
}

impl Abstraction {
    /// Assembles an abstraction from explicit descriptors, indexed `cell · n_u + input`.
    /// Balls that leave the state box are marked out of domain.
    pub fn from_descriptors(
        grid: UniformGrid,
        inputs: Vec<Vec<f64>>,
        centers: Vec<f64>,
        radii: Vec<f64>,
        meta: AbstractionMeta,
    ) -> Result<Self, AbstractionError> {
        let pairs = grid.len() * inputs.len();
        let n = grid.dim();
        if centers.len() != pairs * n || radii.len() != pairs * n {
            return Err(AbstractionError::Mismatch("descriptor arrays do not cover every pair".into()));
        }
        if radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(AbstractionError::Mismatch("radii must be nonnegative".into()));
        }
        let status = (0..pairs)
            .map(|p| {
                let (_, clipped) = grid.cells_overlapping_ball(&centers[p * n..(p + 1) * n], &radii[p * n..(p + 1) * n]);
                if clipped {
                    PairStatus::OutOfDomain
                } else {
                    PairStatus::Ok
                }
            })
            .collect();
        Ok(Self { grid, inputs, centers, radii, status, meta })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn num_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    fn pair(&self, cell: usize, input: usize) -> usize {
        cell * self.inputs.len() + input
    }

    pub fn status(&self, cell: usize, input: usize) -> PairStatus {
        self.status[self.pair(cell, input)]
    }

    pub fn descriptor(&self, cell: usize, input: usize) -> Successor<'_> {
        let p = self.pair(cell, input);
        if self.status[p] != PairStatus::Ok {
            return Successor::OutOfDomain;
        }
        let n = self.grid.dim();
        Successor::Ball {
            center: &self.centers[p * n..(p + 1) * n],
            radius: &self.radii[p * n..(p + 1) * n],
        }
    }

    /// Stored center and radius regardless of status.
    pub fn raw_descriptor(&self, cell: usize, input: usize) -> (&[f64], &[f64]) {
        let p = self.pair(cell, input);
        let n = self.grid.dim();
        (&self.centers[p * n..(p + 1) * n], &self.radii[p * n..(p + 1) * n])
    }

    pub fn successors(&self, cell: usize, input: usize) -> Successors {
        match self.descriptor(cell, input) {
            Successor::OutOfDomain => Successors::OutOfDomain,
            Successor::Ball { center, radius } => {
                let (range, clipped) = self.grid.cells_overlapping_ball(center, radius);
                if clipped {
                    Successors::OutOfDomain
                } else {
                    Successors::Cells(range)
                }
            }
        }
    }

    /// Whether a concrete successor lies in the stored ball of `(cell, input)`.
    pub fn covers(&self, cell: usize, input: usize, x_next: &[f64]) -> bool {
        match self.descriptor(cell, input) {
            Successor::OutOfDomain => true,
            Successor::Ball { center, radius } => x_next
                .iter()
                .zip(center.iter().zip(radius))
                .all(|(x, (c, r))| (x - c).abs() <= *r),
        }
    }

    pub fn out_of_domain_count(&self) -> usize {
        self.status.iter().filter(|s| **s != PairStatus::Ok).count()
    }

    /// Versioned line-based text format, see the crate README.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        let f = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        let m = &self.meta;
        writeln!(out, "ddabs-abstraction 1")?;
        writeln!(out, "lower {}", f(self.grid.bounds().lower()))?;
        writeln!(out, "upper {}", f(self.grid.bounds().upper()))?;
        writeln!(out, "radii {}", f(self.grid.radii()))?;
        writeln!(out, "inputs {}", self.inputs.len())?;
        for u in &self.inputs {
            writeln!(out, "input {}", f(u))?;
        }
        writeln!(out, "epsilon {:.16e}", m.epsilon)?;
        writeln!(out, "beta {:.16e}", m.beta)?;
        writeln!(out, "seed {}", m.seed)?;
        writeln!(out, "samples_per_pair {}", m.samples_per_pair)?;
        writeln!(
            out,
            "gamma_mode {}",
            m.gamma_mode.map_or("none".to_string(), gamma_mode_name)
        )?;
        writeln!(out, "gamma {}", f(&m.gamma))?;
        writeln!(out, "lipschitz {}", f(&m.lipschitz))?;
        let rule = match m.radius_rule {
            RadiusRule::CellRadius => "cell_radius".to_string(),
            RadiusRule::Refined { depth } => format!("refined {depth}"),
            RadiusRule::Explicit => "explicit".to_string(),
        };
        writeln!(out, "radius_rule {rule}")?;
        writeln!(out, "unresolved {}", m.unresolved)?;
        writeln!(out, "pairs {}", self.status.len())?;
        let n = self.grid.dim();
        let mut line = String::new();
        for p in 0..self.status.len() {
            line.clear();
            let tag = match self.status[p] {
                PairStatus::Ok => "ok",
                PairStatus::OutOfDomain => "out",
                PairStatus::Unresolved => "unresolved",
            };
            let _ = write!(line, "{} {} {tag}", p / self.inputs.len(), p % self.inputs.len());
            for v in self.centers[p * n..(p + 1) * n].iter().chain(&self.radii[p * n..(p + 1) * n]) {
                let _ = write!(line, " {v:.16e}");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, AbstractionError> {
        let mut lines = input.lines().enumerate();
        let mut next = |key: &str| -> Result<(usize, Vec<String>), AbstractionError> {
            let (i, line) = lines.next().ok_or(AbstractionError::Parse {
                line: 0,
                reason: format!("missing `{key}`"),
            })?;
            let line = line?;
            let mut parts = line.split_whitespace().map(str::to_string);
            let head = parts.next().unwrap_or_default();
            if head != key {
                return Err(AbstractionError::Parse {
                    line: i + 1,
                    reason: format!("expected `{key}`, found `{head}`"),
                });
            }
            Ok((i + 1, parts.collect()))
        };
        let nums = |line: usize, v: &[String]| -> Result<Vec<f64>, AbstractionError> {
            v.iter()
                .map(|s| s.parse::<f64>().map_err(|e| AbstractionError::Parse { line, reason: e.to_string() }))
                .collect()
        };
        let int = |line: usize, v: &[String]| -> Result<u64, AbstractionError> {
            v.first()
                .ok_or(AbstractionError::Parse { line, reason: "missing value".into() })?
                .parse::<u64>()
                .map_err(|e| AbstractionError::Parse { line, reason: e.to_string() })
        };
        let (l, v) = next("ddabs-abstraction")?;
        if v.first().map(String::as_str) != Some("1") {
            return Err(AbstractionError::Parse { line: l, reason: "unsupported version".into() });
        }
        let (l, v) = next("lower")?;
        let lower = nums(l, &v)?;
        let (l, v) = next("upper")?;
        let upper = nums(l, &v)?;
        let (l, v) = next("radii")?;
        let radii_grid = nums(l, &v)?;
        let grid = UniformGrid::new(Hyperrect::new(lower, upper)?, radii_grid)?;
        let (l, v) = next("inputs")?;
        let nu = int(l, &v)? as usize;
        let mut inputs = Vec::with_capacity(nu);
        for _ in 0..nu {
            let (l, v) = next("input")?;
            inputs.push(nums(l, &v)?);
        }
        let (l, v) = next("epsilon")?;
        let epsilon = nums(l, &v)?[0];
        let (l, v) = next("beta")?;
        let beta = nums(l, &v)?[0];
        let (l, v) = next("seed")?;
        let seed = int(l, &v)?;
        let (l, v) = next("samples_per_pair")?;
        let samples_per_pair = int(l, &v)?;
        let (l, v) = next("gamma_mode")?;
        let gamma_mode = match v.first().map(String::as_str) {
            Some("none") => None,
            Some(s) => Some(parse_gamma_mode(s).ok_or(AbstractionError::Parse { line: l, reason: format!("unknown mode {s}") })?),
            None => return Err(AbstractionError::Parse { line: l, reason: "missing mode".into() }),
        };
        let (l, v) = next("gamma")?;
        let gamma = nums(l, &v)?;
        let (l, v) = next("lipschitz")?;
        let lipschitz = nums(l, &v)?;
        let (l, v) = next("radius_rule")?;
        let radius_rule = match v.first().map(String::as_str) {
            Some("cell_radius") => RadiusRule::CellRadius,
            Some("explicit") => RadiusRule::Explicit,
            Some("refined") => RadiusRule::Refined { depth: int(l, &v[1..])? as u32 },
            _ => return Err(AbstractionError::Parse { line: l, reason: "unknown radius rule".into() }),
        };
        let (l, v) = next("unresolved")?;
        let unresolved = int(l, &v)? as usize;
        let (l, v) = next("pairs")?;
        let pairs = int(l, &v)? as usize;
        if pairs != grid.len() * nu {
            return Err(AbstractionError::Parse { line: l, reason: "pair count does not match grid and inputs".into() });
        }
        let n = grid.dim();
        let mut centers = Vec::with_capacity(pairs * n);
        let mut radii = Vec::with_capacity(pairs * n);
        let mut status = Vec::with_capacity(pairs);
        for p in 0..pairs {
            let (i, line) = lines.next().ok_or(AbstractionError::Parse { line: 0, reason: "truncated pair list".into() })?;
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 + 2 * n
                || parts[0].parse::<usize>().ok() != Some(p / nu)
                || parts[1].parse::<usize>().ok() != Some(p % nu)
            {
                return Err(AbstractionError::Parse { line: i + 1, reason: "malformed pair record".into() });
            }
            status.push(match parts[2] {
                "ok" => PairStatus::Ok,
                "out" => PairStatus::OutOfDomain,
                "unresolved" => PairStatus::Unresolved,
                s => return Err(AbstractionError::Parse { line: i + 1, reason: format!("unknown status {s}") }),
            });
            let vals = nums(i + 1, &parts[3..].iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
            centers.extend_from_slice(&vals[..n]);
            radii.extend_from_slice(&vals[n..]);
        }
        Ok(Self {
            grid,
            inputs,
            centers,
            radii,
            status,
            meta: AbstractionMeta {
                epsilon,
                beta,
                seed,
                samples_per_pair,
                gamma_mode,
                gamma,
                lipschitz,
                radius_rule,
                unresolved,
            },
        })
    }
}

pub fn gamma_mode_name(m: GammaMode) -> String {
    match m {
        GammaMode::Full2n => "full_2n",
        GammaMode::NoDisturbanceN => "no_disturbance_n",
        GammaMode::PartialNPlusQ => "partial_n_plus_q",
        GammaMode::Paired4n => "paired_4n",
        GammaMode::PairedNoDisturbance => "paired_no_disturbance",
        GammaMode::PairedPartial => "paired_partial",
    }
    .to_string()
}

pub fn parse_gamma_mode(s: &str) -> Option<GammaMode> {
    Some(match s {
        "full_2n" => GammaMode::Full2n,
        "no_disturbance_n" => GammaMode::NoDisturbanceN,
        "partial_n_plus_q" => GammaMode::PartialNPlusQ,
        "paired_4n" => GammaMode::Paired4n,
        "paired_no_disturbance" => GammaMode::PairedNoDisturbance,
        "paired_partial" => GammaMode::PairedPartial,
        _ => return None,
    })
}

/// Knobs of a build beyond the scenario parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub seed: u64,
    /// Lipschitz constant per input.
    pub lipschitz: Vec<f64>,
    /// `None` selects the mode from the disturbance structure.
    pub gamma_mode: Option<GammaMode>,
    /// Replaces the computed γ for every input.
    pub gamma_override: Option<f64>,
    /// Replaces the sample count from the scenario bound.
    pub samples_override: Option<u64>,
    pub weights: Option<ObjectiveWeights>,
    /// Fail on any unresolved pair instead of marking it out of domain.
    pub strict: bool,
}

impl BuildOptions {
    pub fn new(seed: u64, lipschitz: Vec<f64>) -> Self {
        Self {
            seed,
            lipschitz,
            gamma_mode: None,
            gamma_override: None,
            samples_override: None,
            weights: None,
            strict: true,
        }
    }
}

fn check_setup(system: &SystemModel, grid: &UniformGrid, inputs: &[Vec<f64>], opts: &BuildOptions) -> Result<(), AbstractionError> {
    if grid.bounds() != system.state_box() {
        return Err(AbstractionError::Mismatch("grid box differs from the system state box".into()));
    }
    if inputs.is_empty() || inputs.iter().any(|u| u.len() != system.input_dim()) {
        return Err(AbstractionError::Mismatch("inputs must be nonempty and match the input dimension".into()));
    }
    if opts.lipschitz.len() != inputs.len() {
        return Err(AbstractionError::Mismatch("one Lipschitz constant per input is required".into()));
    }
    Ok(())
}

/// Per-pair confidence `β / (n_x n_u)` and decision dimension `n² + n`.
pub fn pair_sample_size(config: &ScenarioConfig, cells: usize, inputs: usize, n: usize) -> Result<u64, ScenarioError> {
    let q = (n * n + n) as u64;
    sample_size(config.epsilon.min(1.0 - f64::EPSILON), config.beta / (cells * inputs) as f64, q)
}

fn gammas(
    system: &SystemModel,
    eta: &[f64],
    config: &ScenarioConfig,
    opts: &BuildOptions,
    paired: bool,
) -> Result<(Option<GammaMode>, Vec<f64>), ScenarioError> {
    if let Some(g) = opts.gamma_override {
        return Ok((None, vec![g; opts.lipschitz.len()]));
    }
    let mode = opts.gamma_mode.unwrap_or_else(|| GammaMode::auto(system.disturbance_bound(), paired));
    let g = opts
        .lipschitz
        .iter()
        .map(|l| bias_gamma(*l, config.epsilon, eta, system.disturbance_bound(), mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Some(mode), g))
}

fn collect_pairs<T: Send>(
    results: Vec<Result<T, AbstractionError>>,
    n_inputs: usize,
    strict: bool,
) -> Result<(Vec<Option<T>>, usize), AbstractionError> {
    let mut out = Vec::with_capacity(results.len());
    let mut first: Option<(usize, String)> = None;
    let mut failed = 0;
    for (p, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(Some(v)),
            Err(e) => {
                failed += 1;
                if first.is_none() {
                    first = Some((p, e.to_string()));
                }
                out.push(None);
            }
        }
    }
    if strict {
        if let Some((p, reason)) = first {
            return Err(AbstractionError::Unresolved {
                count: failed,
                cell: p / n_inputs,
                input: p % n_inputs,
                reason,
            });
        }
    }
    Ok((out, failed))
}

/// Data-driven abstraction: one scenario program per `(cell, input)`.
pub fn build_abstraction(
    system: &SystemModel,
    grid: &UniformGrid,
    inputs: &[Vec<f64>],
    config: &ScenarioConfig,
    opts: &BuildOptions,
) -> Result<Abstraction, AbstractionError> {
    config.validate()?;
    check_setup(system, grid, inputs, opts)?;
    let n = grid.dim();
    let nu = inputs.len();
    let eta = grid.radii().to_vec();
    let samples = match opts.samples_override {
        Some(s) => s,
        None => pair_sample_size(config, grid.len(), nu, n)?,
    };
    let (mode, gamma) = gammas(system, &eta, config, opts, false)?;
    let weights = opts.weights.clone().unwrap_or_else(|| ObjectiveWeights::ones(n));

    let results: Vec<Result<(Vec<f64>, Vec<f64>), AbstractionError>> = (0..grid.len() * nu)
        .into_par_iter()
        .map(|p| {
            let (cell, i) = (p / nu, p % nu);
            let u = &inputs[i];
            let center = grid.cell_center(cell)?;
            let batch = sample_cell_batch(system, grid, cell, i, u, samples as usize, opts.seed)?;
            let nominal = nominal_successor(system, &center, u)?;
            let c = GrowthConstraints::from_batch(&batch, &center, &nominal);
            let cap = config.cap_for(opts.lipschitz[i]);
            let gb = solve_growth_constraints(&c, gamma[i], cap, &weights, GrowthMode::Standard)?;
            let radius: Vec<f64> = gb.eval(&eta).iter().map(|k| k + gamma[i]).collect();
            Ok((nominal, radius))
        })
        .collect();

    let (pairs, unresolved) = collect_pairs(results, nu, opts.strict)?;
    assemble(
        grid,
        inputs,
        pairs,
        AbstractionMeta {
            epsilon: config.epsilon,
            beta: config.beta,
            seed: opts.seed,
            samples_per_pair: samples,
            gamma_mode: mode,
            gamma,
            lipschitz: opts.lipschitz.clone(),
            radius_rule: RadiusRule::CellRadius,
            unresolved,
        },
    )
}

fn assemble(
    grid: &UniformGrid,
    inputs: &[Vec<f64>],
    pairs: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    meta: AbstractionMeta,
) -> Result<Abstraction, AbstractionError> {
    let n = grid.dim();
    let mut centers = Vec::with_capacity(pairs.len() * n);
    let mut radii = Vec::with_capacity(pairs.len() * n);
    let mut status = Vec::with_capacity(pairs.len());
    for p in pairs {
        match p {
            Some((z, l)) => {
                let (_, clipped) = grid.cells_overlapping_ball(&z, &l);
                status.push(if clipped { PairStatus::OutOfDomain } else { PairStatus::Ok });
                centers.extend(z);
                radii.extend(l);
            }
            None => {
                status.push(PairStatus::Unresolved);
                centers.extend(std::iter::repeat(0.0).take(n));
                radii.extend(std::iter::repeat(0.0).take(n));
            }
        }
    }
    Ok(Abstraction {
        grid: grid.clone(),
        inputs: inputs.to_vec(),
        centers,
        radii,
        status,
        meta,
    })
}

/// Coarse paired growth bounds, reusable at every refinement of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthTable {
    grid: UniformGrid,
    inputs: Vec<Vec<f64>>,
    entries: Vec<GrowthBound>,
    anchors: Vec<f64>,
    pub meta: AbstractionMeta,
}

impl GrowthTable {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn entry(&self, cell: usize, input: usize) -> &GrowthBound {
        &self.entries[cell * self.inputs.len() + input]
    }

    /// Observed successor of the coarse cell center.
    pub fn anchor(&self, cell: usize, input: usize) -> &[f64] {
        let n = self.grid.dim();
        let p = cell * self.inputs.len() + input;
        &self.anchors[p * n..(p + 1) * n]
    }
}

/// Paired scenario programs on the coarse grid. Each pair uses as many
/// sample pairs as the scenario bound asks for constraints.
pub fn build_growth_table(
    system: &SystemModel,
    coarse: &UniformGrid,
    inputs: &[Vec<f64>],
    config: &ScenarioConfig,
    opts: &BuildOptions,
) -> Result<GrowthTable, AbstractionError> {
    config.validate()?;
    check_setup(system, coarse, inputs, opts)?;
    let n = coarse.dim();
    let nu = inputs.len();
    let eta = coarse.radii().to_vec();
    let pairs = match opts.samples_override {
        Some(s) => s,
        None => pair_sample_size(config, coarse.len(), nu, n)?,
    };
    let (mode, gamma) = gammas(system, &eta, config, opts, true)?;
    let weights = opts.weights.clone().unwrap_or_else(|| ObjectiveWeights::ones(n));

    let results: Vec<Result<(GrowthBound, Vec<f64>), AbstractionError>> = (0..coarse.len() * nu)
        .into_par_iter()
        .map(|p| {
            let (cell, i) = (p / nu, p % nu);
            let u = &inputs[i];
            let batch = sample_paired_batch(system, coarse, cell, i, u, pairs as usize, opts.seed)?;
            let c = GrowthConstraints::from_pairs(&batch);
            let cap = config.cap_for(opts.lipschitz[i]);
            let gb = solve_growth_constraints(&c, gamma[i], cap, &weights, GrowthMode::Paired)?;
            let center = coarse.cell_center(cell)?;
            let mut rng = stream_rng(opts.seed, cell, i, purpose::ANCHOR);
            let anchor = disturbed_successor(system, &center, u, &mut rng)?;
            Ok((gb, anchor))
        })
        .collect();
    let (pairs_out, unresolved) = collect_pairs(results, nu, true)?;
    let mut entries = Vec::with_capacity(pairs_out.len());
    let mut anchors = Vec::with_capacity(pairs_out.len() * n);
    for (gb, a) in pairs_out.into_iter().flatten() {
        entries.push(gb);
        anchors.extend(a);
    }
    Ok(GrowthTable {
        grid: coarse.clone(),
        inputs: inputs.to_vec(),
        entries,
        anchors,
        meta: AbstractionMeta {
            epsilon: config.epsilon,
            beta: config.beta,
            seed: opts.seed,
            samples_per_pair: 2 * pairs,
            gamma_mode: mode,
            gamma,
            lipschitz: opts.lipschitz.clone(),
            radius_rule: RadiusRule::Refined { depth: 0 },
            unresolved,
        },
    })
}

/// Abstraction on `fine` (a refinement of the table grid) without new
/// scenario programs.
///
/// For a fine cell with center `c` and parent bound `κ_e`, any two
/// trajectories started in the parent cell stay within `κ_e(|x₁ − x₂|)` of
/// each other, so every successor of the fine cell lies within
/// `κ_e(η_fine) + γ` of `φ(c, u, w)` for any sampled `w`. The ball is
/// therefore centred on one observed successor of the fine-cell center; at
/// depth 0 this is the table's own anchor.
pub fn instantiate_refined(table: &GrowthTable, fine: &UniformGrid, system: &SystemModel) -> Result<Abstraction, AbstractionError> {
    let depth = table
        .grid
        .refinement_depth(fine)
        .ok_or_else(|| AbstractionError::Mismatch("fine grid is not a refinement of the table grid".into()))?;
    let nu = table.inputs.len();
    let eta = fine.radii().to_vec();
    let seed = table.meta.seed ^ (depth as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let results: Vec<Result<(Vec<f64>, Vec<f64>), AbstractionError>> = (0..fine.len() * nu)
        .into_par_iter()
        .map(|p| {
            let (cell, i) = (p / nu, p % nu);
            let center = fine.cell_center(cell)?;
            let parent = table.grid.parent_cell(&center)?;
            let gb = table.entry(parent, i);
            let z = if depth == 0 {
                table.anchor(parent, i).to_vec()
            } else {
                let mut rng = stream_rng(seed, cell, i, purpose::REFINED_ANCHOR);
                disturbed_successor(system, &center, &table.inputs[i], &mut rng)?
            };
            let radius: Vec<f64> = gb.eval(&eta).iter().map(|k| k + table.meta.gamma[i]).collect();
            Ok((z, radius))
        })
        .collect();
    let (pairs, _) = collect_pairs(results, nu, true)?;
    let mut meta = table.meta.clone();
    meta.radius_rule = RadiusRule::Refined { depth };
    assemble(fine, &table.inputs, pairs, meta)
}

/// Fraction check used by audits: draws `count` random concrete transitions
/// and returns those that escape their pair's ball.
pub fn soundness_violations(
    abs: &Abstraction,
    system: &SystemModel,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, Vec<f64>, Vec<f64>)>, AbstractionError> {
    let grid = abs.grid();
    let mut rng = stream_rng(seed, 0, 0, purpose::VALIDATION);
    let mut bad = Vec::new();
    let n = grid.dim();
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for _ in 0..count {
        let cell = rng.random_range(0..grid.len());
        let input = rng.random_range(0..abs.num_inputs());
        let b = grid.cell_box(cell)?;
        crate::sampling::draw_uniform(&mut rng, b.lower(), b.upper(), &mut x);
        crate::sampling::draw_symmetric(&mut rng, system.disturbance_bound(), &mut w);
        let next = system.step(&x, &abs.inputs()[input], &w)?;
        if !abs.covers(cell, input, &next) {
            bad.push((cell, input, x.clone(), next));
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin_dcdc, identity_system, scalar_linear, DcdcParams};

    fn identity_2d() -> (SystemModel, UniformGrid) {
        let b = Hyperrect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let sys = identity_system(b.clone(), vec![vec![0.0]], vec![0.0, 0.0], 1.0).unwrap();
        (sys, UniformGrid::new(b, vec![0.125, 0.125]).unwrap())
    }

    fn quick_config() -> ScenarioConfig {
        ScenarioConfig::new(0.1, 0.1).unwrap()
    }

    #[test]
    fn identity_cells_reach_themselves() {
        let (sys, grid) = identity_2d();
        let mut opts = BuildOptions::new(1, vec![1.0]);
        opts.gamma_override = Some(0.0);
        let abs = build_abstraction(&sys, &grid, &[vec![0.0]], &quick_config(), &opts).unwrap();
        for cell in 0..grid.len() {
            match abs.successors(cell, 0) {
                Successors::Cells(r) => assert!(r.iter().any(|c| c == cell)),
                Successors::OutOfDomain => panic!("identity stays in the box"),
            }
        }
    }

    #[test]
    fn successor_hand_cases() {
        let grid = UniformGrid::new(Hyperrect::new(vec![0.0], vec![1.0]).unwrap(), vec![0.125]).unwrap();
        let meta = AbstractionMeta {
            epsilon: 0.1,
            beta: 0.1,
            seed: 0,
            samples_per_pair: 0,
            gamma_mode: None,
            gamma: vec![0.0],
            lipschitz: vec![1.0],
            radius_rule: RadiusRule::Explicit,
            unresolved: 0,
        };
        let mut centers = vec![0.0; 4];
        let mut radii = vec![0.0; 4];
        centers[0] = 0.5;
        radii[0] = 0.1;
        centers[1] = 0.3;
        radii[1] = 0.0;
        centers[2] = 0.375;
        radii[2] = 0.05;
        centers[3] = 0.95;
        radii[3] = 0.1;
        let abs = Abstraction::from_descriptors(grid, vec![vec![0.0]], centers, radii, meta).unwrap();
        let cells = |c| match abs.successors(c, 0) {
            Successors::Cells(r) => r.iter().collect::<Vec<_>>(),
            Successors::OutOfDomain => vec![usize::MAX],
        };
        assert_eq!(cells(0), vec![1, 2]);
        assert_eq!(cells(1), vec![1]);
        assert_eq!(cells(2), vec![1]);
        assert_eq!(cells(3), vec![usize::MAX]);
        assert_eq!(abs.out_of_domain_count(), 1);
    }

    #[test]
    fn dcdc_coarse_build_is_sound() {
        let sys = builtin_dcdc(&DcdcParams::default(), [0.01, 0.0]).unwrap();
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.05, 0.05]).unwrap();
        let inputs = vec![vec![1.0], vec![2.0]];
        let opts = BuildOptions::new(7, vec![1.5, 1.55]);
        let abs = build_abstraction(&sys, &grid, &inputs, &quick_config(), &opts).unwrap();
        assert_eq!(abs.meta.gamma_mode, Some(GammaMode::PartialNPlusQ));
        for cell in 0..grid.len() {
            for i in 0..2 {
                if let Successor::Ball { center, .. } = abs.descriptor(cell, i) {
                    assert!(sys.state_box().contains(center));
                }
            }
        }
        assert!(soundness_violations(&abs, &sys, 10_000, 3).unwrap().is_empty());
    }

    #[test]
    fn larger_gamma_never_removes_transitions() {
        let sys = scalar_linear(-0.5, Hyperrect::new(vec![-1.0], vec![1.0]).unwrap(), vec![-0.5, 0.5], 0.0, 0.5).unwrap();
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.05]).unwrap();
        let inputs = vec![vec![-0.5], vec![0.5]];
        let mut small = BuildOptions::new(3, vec![1.0, 1.0]);
        small.gamma_override = Some(0.001);
        let mut big = small.clone();
        big.gamma_override = Some(0.02);
        let a = build_abstraction(&sys, &grid, &inputs, &quick_config(), &small).unwrap();
        let b = build_abstraction(&sys, &grid, &inputs, &quick_config(), &big).unwrap();
        for cell in 0..grid.len() {
            for i in 0..2 {
                match (a.successors(cell, i), b.successors(cell, i)) {
                    (Successors::Cells(ra), Successors::Cells(rb)) => {
                        let rb: Vec<usize> = rb.iter().collect();
                        assert!(ra.iter().all(|c| rb.contains(&c)));
                    }
                    (_, Successors::OutOfDomain) => {}
                    (Successors::OutOfDomain, Successors::Cells(_)) => panic!("bigger ball left the domain less"),
                }
            }
        }
    }

    #[test]
    fn parallel_build_is_deterministic() {
        let sys = builtin_dcdc(&DcdcParams::default(), [0.01, 0.0]).unwrap();
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.1, 0.1]).unwrap();
        let inputs = vec![vec![1.0], vec![2.0]];
        let opts = BuildOptions::new(11, vec![1.5, 1.55]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| build_abstraction(&sys, &grid, &inputs, &quick_config(), &opts).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn text_round_trip() {
        let sys = builtin_dcdc(&DcdcParams::default(), [0.0, 0.0]).unwrap();
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.1, 0.1]).unwrap();
        let abs = build_abstraction(&sys, &grid, &[vec![1.0], vec![2.0]], &quick_config(), &BuildOptions::new(2, vec![1.0, 1.03])).unwrap();
        let mut buf = Vec::new();
        abs.write_text(&mut buf).unwrap();
        let back = Abstraction::read_text(&buf[..]).unwrap();
        assert_eq!(back, abs);
        let mut again = Vec::new();
        back.write_text(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!(Abstraction::read_text(&b"ddabs-abstraction 2\n"[..]).is_err());
    }

    #[test]
    fn input_lattice() {
        let b = Hyperrect::new(vec![-1.0, 0.0], vec![1.0, 0.5]).unwrap();
        let l = input_levels(&InputSpace::Box(b), Some(&[1.0, 0.5])).unwrap();
        assert_eq!(l.len(), 6);
        assert_eq!(l[0], vec![-1.0, 0.0]);
        assert_eq!(l[1], vec![0.0, 0.0]);
        assert_eq!(l[5], vec![1.0, 0.5]);
        assert!(input_levels(&InputSpace::Box(Hyperrect::new(vec![0.0], vec![1.0]).unwrap()), None).is_err());
    }

    fn scalar_table(depth_weights: f64) -> (SystemModel, GrowthTable) {
        let sys = scalar_linear(-1.0, Hyperrect::new(vec![-1.6], vec![1.6]).unwrap(), vec![-1.0, 0.0, 1.0], 0.0, 0.5).unwrap();
        let coarse = UniformGrid::new(sys.state_box().clone(), vec![0.4]).unwrap();
        let mut opts = BuildOptions::new(5, vec![1.0; 3]);
        opts.weights = Some(ObjectiveWeights::radius(&[depth_weights]));
        let table = build_growth_table(&sys, &coarse, &[vec![-1.0], vec![0.0], vec![1.0]], &quick_config(), &opts).unwrap();
        (sys, table)
    }

    #[test]
    fn refinement_shrinks_radii_and_nests() {
        let (sys, table) = scalar_table(0.05);
        let coarse = table.grid().clone();
        let a0 = instantiate_refined(&table, &coarse, &sys).unwrap();
        for cell in 0..coarse.len() {
            for i in 0..3 {
                let (z, r) = a0.raw_descriptor(cell, i);
                assert_eq!(z, table.anchor(cell, i));
                let k = table.entry(cell, i).eval(coarse.radii())[0] + table.meta.gamma[i];
                assert!((r[0] - k).abs() < 1e-15);
            }
        }
        let fine = coarse.refine();
        let a1 = instantiate_refined(&table, &fine, &sys).unwrap();
        assert_eq!(a1.meta.radius_rule, RadiusRule::Refined { depth: 1 });
        for cell in 0..fine.len() {
            let parent = coarse.parent_cell(&fine.cell_center(cell).unwrap()).unwrap();
            for i in 0..3 {
                let gb = table.entry(parent, i);
                let r1 = a1.raw_descriptor(cell, i).1[0];
                let r0 = a0.raw_descriptor(parent, i).1[0];
                if gb.theta1(0, 0) > 0.0 {
                    assert!(r1 < r0);
                }
                // nesting of fine successors inside the coarse successor set of the parent
                if let (Successors::Cells(f), Successors::Cells(c)) = (a1.successors(cell, i), a0.successors(parent, i)) {
                    let coarse_set: Vec<usize> = c.iter().collect();
                    for s in f.iter() {
                        let p = coarse.parent_cell(&fine.cell_center(s).unwrap()).unwrap();
                        assert!(coarse_set.contains(&p), "fine successor escapes coarse set");
                    }
                }
            }
        }
    }

    #[test]
    fn paired_bound_dominates_standard_bound() {
        let sys = scalar_linear(-0.5, Hyperrect::new(vec![-1.0], vec![1.0]).unwrap(), vec![0.0], 0.0, 0.5).unwrap();
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.1]).unwrap();
        let mut opts = BuildOptions::new(9, vec![1.0]);
        opts.gamma_override = Some(0.0);
        let table = build_growth_table(&sys, &grid, &[vec![0.0]], &quick_config(), &opts).unwrap();
        let abs = build_abstraction(&sys, &grid, &[vec![0.0]], &quick_config(), &opts).unwrap();
        for cell in 0..grid.len() {
            let ke = table.entry(cell, 0).eval(grid.radii())[0];
            let k = abs.raw_descriptor(cell, 0).1[0];
            assert!(ke >= k, "cell {cell}: {ke} < {k}");
        }
    }

    #[test]
    fn refined_rejects_foreign_grid() {
        let (sys, table) = scalar_table(0.1);
        let other = UniformGrid::new(Hyperrect::new(vec![-1.6], vec![1.6]).unwrap(), vec![0.1 * 4.0 / 3.0]).unwrap();
        assert!(instantiate_refined(&table, &other, &sys).is_err());
    }
}
