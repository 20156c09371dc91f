//! Command-line front end: run configuration, subcommands and report files.
//!
//! Every subcommand except `sample-size` and `compare-winning` reads one TOML
//! run configuration and writes its files into the configured output
//! directory. Files never contain timings, so identical configurations give
//! byte-identical files; timings go to stdout.

use std::fmt::{self, Display};
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{
    build_abstraction, build_growth_table, gamma_mode_name, input_levels, pair_sample_size, Abstraction,
    AbstractionError, BuildOptions,
};
use crate::geometry::{GeometryError, Hyperrect, UniformGrid};
use crate::lipschitz::{estimate_lipschitz, LipschitzError, LipschitzEstimate, LipschitzParams};
use crate::scenario::{bias_gamma, pac_sample_size, sample_size, GammaMode, ObjectiveWeights, ScenarioConfig, ScenarioError};
use crate::synthesis::{
    compare_winning, objective_regions, read_controller, refine_and_synthesize, simulate_closed_loop, solve_objective,
    validate, write_controller, Controller, DisturbanceModel, Game, Objective, ObjectiveKind, RefineOutcome,
    RegionSpec, SynthesisError, Verdict, WinningComparison,
};
use crate::systems::{
    builtin_dcdc, builtin_power3a3m, builtin_vehicle, lti_system, DcdcParams, InputSpace, SystemError, SystemModel,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("no controller found: {0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 1 configuration or file error, 2 numeric or fit failure, 3 empty synthesis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 1,
            Self::Numeric(_) => 2,
            Self::Empty(_) => 3,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        match e {
            SystemError::NonFinite { .. } => Self::Numeric(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InvalidParameter(_) => Self::Config(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<LipschitzError> for CliError {
    fn from(e: LipschitzError) -> Self {
        match e {
            LipschitzError::InvalidParameter(_) => Self::Config(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<AbstractionError> for CliError {
    fn from(e: AbstractionError) -> Self {
        match e {
            AbstractionError::Scenario(s) => s.into(),
            AbstractionError::Mismatch(_) | AbstractionError::Parse { .. } | AbstractionError::Geometry(_) | AbstractionError::Io(_) => {
                Self::Config(e.to_string())
            }
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Abstraction(a) => a.into(),
            SynthesisError::Overlap(_)
            | SynthesisError::OutsideDomain(_)
            | SynthesisError::Parse { .. }
            | SynthesisError::GridMismatch
            | SynthesisError::Geometry(_)
            | SynthesisError::Io(_) => Self::Config(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Dcdc,
    Vehicle,
    Power3a3m,
    Lti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Disturbance bound `w̄`, one entry per state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Vec<f64>>,
    /// Row-major matrices of an `lti` system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    /// Defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    /// Overrides the system's state box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Cell radius per dimension.
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Lattice spacing for box inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub epsilon: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_mode: Option<GammaMode>,
    /// Fixed γ for every input instead of the computed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Fixed samples per pair instead of the scenario bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default = "yes")]
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConfig {
    /// Fixed constants (one, or one per input); estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inner: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBand {
    pub c: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Target boxes (the safe set for safety objectives).
    #[serde(default)]
    pub target: Vec<Hyperrect>,
    /// Target given as an output band instead of boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_band: Option<OutputBand>,
    #[serde(default)]
    pub avoid: Vec<Hyperrect>,
    /// Avoid set given as an output band, in addition to the boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avoid_band: Option<OutputBand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

fn band(b: Option<&OutputBand>) -> RegionSpec {
    b.map_or(RegionSpec::Nothing, |b| RegionSpec::OutputBand { c: b.c.clone(), lo: b.lo, hi: b.hi })
}

impl ObjectiveConfig {
    pub fn to_objective(&self) -> Objective {
        let target = match (&self.target_band, self.target.is_empty()) {
            (Some(_), _) => band(self.target_band.as_ref()),
            (None, true) => RegionSpec::Nothing,
            (None, false) => RegionSpec::boxes(self.target.clone()),
        };
        let avoid = match (&self.avoid_band, self.avoid.is_empty()) {
            (Some(_), false) => RegionSpec::Union(vec![RegionSpec::boxes(self.avoid.clone()), band(self.avoid_band.as_ref())]),
            (Some(_), true) => band(self.avoid_band.as_ref()),
            (None, true) => RegionSpec::Nothing,
            (None, false) => RegionSpec::boxes(self.avoid.clone()),
        };
        Objective { kind: self.kind, target, avoid, initial: self.initial.clone() }
    }
}

fn default_max_pairs() -> usize {
    20_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    /// Cell radius of the coarse grid.
    pub coarse_eta: Vec<f64>,
    pub max_halvings: u32,
    /// Largest number of (cell, input) pairs a refined grid may have.
    #[serde(default = "default_max_pairs")]
    pub max_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub runs: usize,
    pub horizon: usize,
    pub disturbance: DisturbanceModel,
    /// Defaults to the objective's initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    BetaVsN,
    EpsVsN,
    EpsVsGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Swept values of β (`beta_vs_n`) or ε (the other kinds).
    pub values: Vec<f64>,
    /// Fixed ε for `beta_vs_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Fixed β for the ε sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub q: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_mode: Option<GammaMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateConfig>,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub lipschitz: LipschitzConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// System, input lattice and grid resolved from a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub system: SystemModel,
    pub inputs: Vec<Vec<f64>>,
    pub grid: UniformGrid,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Config(format!("matrix {what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&fs::read_to_string(path).map_err(CliError::io(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn section<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        v.as_ref().ok_or_else(|| CliError::Config(format!("a [{name}] section is required")))
    }

    pub fn scenario(&self) -> Result<&ScenarioSection, CliError> {
        Self::section(&self.scenario, "scenario")
    }

    pub fn state(&self) -> Result<&StateConfig, CliError> {
        Self::section(&self.state, "state")
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig, CliError> {
        let s = self.scenario()?;
        check_unit("epsilon", s.epsilon)?;
        check_unit("beta", s.beta)?;
        let mut c = ScenarioConfig::new(s.epsilon, s.beta)?;
        c.theta_cap = s.theta_cap;
        c.validate()?;
        Ok(c)
    }

    pub fn system(&self) -> Result<SystemModel, CliError> {
        let s = Self::section(&self.system, "system")?;
        let state = self.state()?;
        let mut model = match s.kind {
            SystemKind::Dcdc => {
                let mut params = DcdcParams::default();
                if let Some(t) = s.tau {
                    params.tau = t;
                }
                let w = s.disturbance.clone().unwrap_or_else(|| vec![0.0, 0.0]);
                let w: [f64; 2] = w
                    .try_into()
                    .map_err(|_| CliError::Config("dcdc needs a two-entry disturbance".into()))?;
                builtin_dcdc(&params, w)?
            }
            SystemKind::Vehicle => {
                let w = s.disturbance.clone().unwrap_or_else(|| vec![0.0; 3]);
                if w.len() != 3 || w[1] != 0.0 || w[2] != 0.0 {
                    return Err(CliError::Config("vehicle disturbance acts on the first state only".into()));
                }
                builtin_vehicle(s.tau.unwrap_or(0.3), w[0])?
            }
            SystemKind::Power3a3m => {
                let m = builtin_power3a3m()?;
                if s.tau.is_some_and(|t| t != m.tau()) {
                    return Err(CliError::Config("power3a3m has a fixed sampling time".into()));
                }
                match &s.disturbance {
                    Some(w) => m.with_disturbance(w.clone())?,
                    None => m,
                }
            }
            SystemKind::Lti => {
                let a = matrix(s.a.as_deref().ok_or_else(|| CliError::Config("lti needs `a`".into()))?, "a")?;
                let b = matrix(s.b.as_deref().ok_or_else(|| CliError::Config("lti needs `b`".into()))?, "b")?;
                let n = a.nrows();
                let e = match &s.e {
                    Some(e) => matrix(e, "e")?,
                    None => DMatrix::identity(n, n),
                };
                let tau = s.tau.ok_or_else(|| CliError::Config("lti needs `tau`".into()))?;
                let (lower, upper) = match (&state.lower, &state.upper) {
                    (Some(l), Some(u)) => (l.clone(), u.clone()),
                    _ => return Err(CliError::Config("lti needs state.lower and state.upper".into())),
                };
                let inputs = match (&self.input.levels, &self.input.lower, &self.input.upper) {
                    (Some(l), _, _) => InputSpace::Levels(l.clone()),
                    (None, Some(l), Some(u)) => InputSpace::Box(Hyperrect::new(l.clone(), u.clone())?),
                    _ => return Err(CliError::Config("lti needs input levels or an input box".into())),
                };
                let w = s.disturbance.clone().unwrap_or_else(|| vec![0.0; n]);
                lti_system("lti", a, b, e, Hyperrect::new(lower, upper)?, inputs, w, tau)?
            }
        };
        if let (Some(l), Some(u)) = (&state.lower, &state.upper) {
            model = model.with_state_box(Hyperrect::new(l.clone(), u.clone())?)?;
        } else if state.lower.is_some() || state.upper.is_some() {
            return Err(CliError::Config("state.lower and state.upper go together".into()));
        }
        Ok(model)
    }

    pub fn inputs(&self, system: &SystemModel) -> Result<Vec<Vec<f64>>, CliError> {
        let i = &self.input;
        let space = match (&i.levels, &i.lower, &i.upper) {
            (Some(l), _, _) => InputSpace::Levels(l.clone()),
            (None, Some(l), Some(u)) => InputSpace::Box(Hyperrect::new(l.clone(), u.clone())?),
            _ => system.inputs().clone(),
        };
        input_levels(&space, i.step.as_deref()).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Builds the system and grid and checks the cross-field invariants.
    pub fn setup(&self) -> Result<Setup, CliError> {
        self.scenario_config()?;
        let system = self.system()?;
        let inputs = self.inputs(&system)?;
        let grid = UniformGrid::new(system.state_box().clone(), self.state()?.eta.clone())?;
        if let Some(o) = &self.objective {
            let x = system.state_box();
            for b in o.target.iter().chain(&o.avoid) {
                if !x.contains_box(b) {
                    return Err(CliError::Config(format!("box {b:?} is not inside the state box")));
                }
            }
            if let Some(x0) = &o.initial {
                if !x.contains(x0) {
                    return Err(CliError::Config(format!("initial state {x0:?} is not inside the state box")));
                }
            }
        }
        Ok(Setup { system, inputs, grid })
    }

    pub fn objective(&self) -> Result<Objective, CliError> {
        self.objective
            .as_ref()
            .map(ObjectiveConfig::to_objective)
            .ok_or_else(|| CliError::Config("an [objective] section is required".into()))
    }

    fn lipschitz_params(&self, system: &SystemModel) -> LipschitzParams {
        let mut p = LipschitzParams::defaults_for(system, self.seed);
        let c = &self.lipschitz;
        p.n_inner = c.n_inner.unwrap_or(p.n_inner);
        p.m_outer = c.m_outer.unwrap_or(p.m_outer);
        p.delta = c.delta.unwrap_or(p.delta);
        p.safety = c.safety.unwrap_or(p.safety);
        p
    }

    /// Per-input Lipschitz constants, fixed or estimated.
    pub fn lipschitz_constants(&self, setup: &Setup) -> Result<Vec<f64>, CliError> {
        let nu = setup.inputs.len();
        match &self.lipschitz.value {
            Some(v) if v.len() == 1 => Ok(vec![v[0]; nu]),
            Some(v) if v.len() == nu => Ok(v.clone()),
            Some(v) => Err(CliError::Config(format!("{} Lipschitz values given for {nu} inputs", v.len()))),
            None => {
                let e = estimate_lipschitz(&setup.system, &setup.inputs, &self.lipschitz_params(&setup.system))?;
                Ok((0..nu).map(|i| e.for_input(i)).collect())
            }
        }
    }

    pub fn build_options(&self, lipschitz: Vec<f64>) -> Result<BuildOptions, CliError> {
        let s = self.scenario()?;
        let mut o = BuildOptions::new(self.seed, lipschitz);
        o.gamma_mode = s.gamma_mode;
        o.gamma_override = s.gamma;
        o.samples_override = s.samples;
        o.strict = s.strict;
        Ok(o)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn check_unit(what: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} must lie in (0, 1), got {v}")))
    }
}

/// Real number with 17 significant digits.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals(v: &[f64]) -> String {
    v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(" ")
}

/// Ordered `key = value` report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Result of a subcommand: the report (also written to disk) and timings.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub report: Report,
    pub timings: Vec<(String, f64)>,
}

impl Outcome {
    fn time(&mut self, what: &str, start: Instant) {
        self.timings.push((what.to_string(), start.elapsed().as_secs_f64()));
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(CliError::io(path))
}

/// Writes `report` followed by the effective configuration.
fn write_summary(cfg: &RunConfig, name: &str, report: &Report) -> Result<(), CliError> {
    write_with(&cfg.path(name), |w| {
        write!(w, "{report}")?;
        writeln!(w, "\n# effective configuration")?;
        write!(w, "{}", cfg.to_toml())
    })
}

fn echo_scenario(r: &mut Report, cfg: &RunConfig, setup: &Setup, scenario: &ScenarioConfig) {
    r.push("system", setup.system.name());
    r.push("seed", cfg.seed);
    r.push("epsilon", real(scenario.epsilon));
    r.push("beta", real(scenario.beta));
    r.push("state_lower", reals(setup.system.state_box().lower()));
    r.push("state_upper", reals(setup.system.state_box().upper()));
    r.push("disturbance", reals(setup.system.disturbance_bound()));
    r.push("tau", real(setup.system.tau()));
    r.push("inputs", setup.inputs.len());
}

fn read_abstraction(path: &Path) -> Result<Abstraction, CliError> {
    let f = fs::File::open(path).map_err(CliError::io(path))?;
    Ok(Abstraction::read_text(BufReader::new(f))?)
}

fn load_controller(path: &Path) -> Result<(Controller, UniformGrid), CliError> {
    let f = fs::File::open(path).map_err(CliError::io(path))?;
    Ok(read_controller(BufReader::new(f))?)
}

/// Lipschitz estimation per input; writes `lipschitz.csv`.
pub fn cmd_estimate_lipschitz(cfg: &RunConfig) -> Result<(Outcome, LipschitzEstimate), CliError> {
    let setup = cfg.setup()?;
    ensure_dir(&cfg.output_dir)?;
    let params = cfg.lipschitz_params(&setup.system);
    let mut out = Outcome::default();
    let t = Instant::now();
    let est = estimate_lipschitz(&setup.system, &setup.inputs, &params)?;
    out.time("estimate", t);
    write_with(&cfg.path("lipschitz.csv"), |w| {
        let m = setup.inputs[0].len();
        let u: Vec<String> = (0..m).map(|i| format!("u{i}")).collect();
        writeln!(w, "input,{},lipschitz,location,scale,shape,log_likelihood,block_max,status", u.join(","))?;
        for (i, r) in est.per_input.iter().enumerate() {
            let us: Vec<String> = setup.inputs[i].iter().map(|v| real(*v)).collect();
            match r {
                Ok(e) => writeln!(
                    w,
                    "{i},{},{},{},{},{},{},{},{}",
                    us.join(","),
                    real(e.lipschitz),
                    real(e.fit.location),
                    real(e.fit.scale),
                    real(e.fit.shape),
                    real(e.fit.log_likelihood),
                    real(e.block_max),
                    if e.fit.valid { "ok" } else { "degenerate" }
                )?,
                Err(err) => writeln!(w, "{i},{},,,,,,,failed: {}", us.join(","), err.to_string().replace(',', ";"))?,
            }
        }
        Ok(())
    })?;
    let r = &mut out.report;
    r.push("system", setup.system.name());
    r.push("seed", params.seed);
    r.push("n_inner", params.n_inner);
    r.push("m_outer", params.m_outer);
    r.push("delta", real(params.delta));
    r.push("safety", real(params.safety));
    r.push("global_max", real(est.global_max));
    for i in 0..setup.inputs.len() {
        r.push(&format!("lipschitz_{i}"), real(est.for_input(i)));
    }
    write_summary(cfg, "lipschitz_summary.txt", &out.report)?;
    Ok((out, est))
}

/// First failed input of an estimate, as the error the CLI exits with.
pub fn lipschitz_failure(est: &LipschitzEstimate) -> Option<CliError> {
    est.per_input
        .iter()
        .enumerate()
        .find_map(|(i, r)| r.as_ref().err().map(|e| CliError::Numeric(format!("input {i}: {e}"))))
}

/// `N(ε, β, q)` from the scenario bound, or the PAC bound with `pac`.
pub fn cmd_sample_size(epsilon: f64, beta: f64, q: u64, pac: bool) -> Result<u64, CliError> {
    check_unit("epsilon", epsilon)?;
    check_unit("beta", beta)?;
    Ok(if pac { pac_sample_size(epsilon, beta, q)? } else { sample_size(epsilon, beta, q)? })
}

/// Builds and stores the abstraction; writes `abstraction.txt`.
pub fn cmd_abstract(cfg: &RunConfig) -> Result<(Outcome, Abstraction), CliError> {
    let setup = cfg.setup()?;
    let scenario = cfg.scenario_config()?;
    ensure_dir(&cfg.output_dir)?;
    let mut out = Outcome::default();
    let t = Instant::now();
    let lipschitz = cfg.lipschitz_constants(&setup)?;
    out.time("lipschitz", t);
    let t = Instant::now();
    let abs = build_abstraction(&setup.system, &setup.grid, &setup.inputs, &scenario, &cfg.build_options(lipschitz)?)?;
    out.time("build", t);
    write_with(&cfg.path("abstraction.txt"), |w| abs.write_text(w))?;
    let r = &mut out.report;
    echo_scenario(r, cfg, &setup, &scenario);
    r.push("eta", reals(setup.grid.radii()));
    r.push("cells", setup.grid.len());
    r.push("samples_per_pair", abs.meta.samples_per_pair);
    r.push("gamma_mode", abs.meta.gamma_mode.map_or("fixed".to_string(), gamma_mode_name));
    r.push("gamma", reals(&abs.meta.gamma));
    r.push("lipschitz", reals(&abs.meta.lipschitz));
    r.push("out_of_domain", abs.out_of_domain_count());
    r.push("unresolved", abs.meta.unresolved);
    write_summary(cfg, "abstract_summary.txt", &out.report)?;
    Ok((out, abs))
}

/// Synthesizes on a stored abstraction; writes `controller.txt`.
pub fn cmd_synthesize(cfg: &RunConfig, abstraction: Option<&Path>) -> Result<(Outcome, Controller), CliError> {
    let objective = cfg.objective()?;
    let path = abstraction.map_or_else(|| cfg.path("abstraction.txt"), Path::to_path_buf);
    let abs = read_abstraction(&path)?;
    ensure_dir(&cfg.output_dir)?;
    let mut out = Outcome::default();
    let t = Instant::now();
    let game = Game::new(&abs);
    let ctrl = solve_objective(&game, abs.grid(), &objective)?;
    out.time("synthesis", t);
    let (target, avoid) = objective_regions(abs.grid(), &objective);
    validate(&ctrl, &game, &target, &avoid)?;
    write_with(&cfg.path("controller.txt"), |w| write_controller(&ctrl, abs.grid(), w))?;
    let r = &mut out.report;
    r.push("abstraction", path.display());
    r.push("objective", objective.kind);
    r.push("cells", abs.num_cells());
    r.push("target_cells", target.count());
    r.push("avoid_cells", avoid.count());
    r.push("winning", ctrl.winning.count());
    if let Some(inv) = ctrl.invariant() {
        r.push("invariant", inv.count());
    }
    r.push("iterations", ctrl.iterations);
    if let Some(x0) = &objective.initial {
        let won = abs.grid().point_to_cell(x0).is_some_and(|c| ctrl.winning.contains(c));
        r.push("initial_winning", won);
    }
    write_summary(cfg, "synthesize_summary.txt", &out.report)?;
    Ok((out, ctrl))
}

/// Refinement loop from a coarse growth table; writes `controller.txt`,
/// `abstraction.txt` (last grid tried) and `refinement.csv`. An exhausted
/// loop is reported through `RefineOutcome::success`.
pub fn cmd_refine_synthesize(cfg: &RunConfig) -> Result<(Outcome, RefineOutcome), CliError> {
    let setup = cfg.setup()?;
    let scenario = cfg.scenario_config()?;
    let objective = cfg.objective()?;
    let refine = cfg
        .refinement
        .as_ref()
        .ok_or_else(|| CliError::Config("a [refinement] section is required".into()))?;
    if objective.initial.is_none() {
        return Err(CliError::Config("refinement needs objective.initial".into()));
    }
    ensure_dir(&cfg.output_dir)?;
    let coarse = UniformGrid::new(setup.system.state_box().clone(), refine.coarse_eta.clone())?;
    let mut out = Outcome::default();
    let t = Instant::now();
    let lipschitz = cfg.lipschitz_constants(&setup)?;
    out.time("lipschitz", t);
    let mut opts = cfg.build_options(lipschitz)?;
    let finest: Vec<f64> = refine.coarse_eta.iter().map(|r| r / f64::from(1u32 << refine.max_halvings.min(31))).collect();
    opts.weights = Some(ObjectiveWeights::radius(&finest));
    let t = Instant::now();
    let table = build_growth_table(&setup.system, &coarse, &setup.inputs, &scenario, &opts)?;
    out.time("growth_table", t);
    let t = Instant::now();
    let result = refine_and_synthesize(&setup.system, &table, &objective, refine.max_halvings, refine.max_pairs)?;
    out.time("refinement", t);
    write_with(&cfg.path("refinement.csv"), |w| {
        let n = coarse.dim();
        let eta: Vec<String> = (0..n).map(|i| format!("eta{i}")).collect();
        writeln!(w, "depth,{},cells,winning_cells,winning_volume,initial_winning", eta.join(","))?;
        for it in &result.reports {
            let e: Vec<String> = it.radii.iter().map(|v| real(*v)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                it.depth,
                e.join(","),
                it.cells,
                it.winning_cells,
                real(it.winning_volume),
                it.initial_winning
            )?;
        }
        Ok(())
    })?;
    write_with(&cfg.path("controller.txt"), |w| write_controller(&result.controller, result.abstraction.grid(), w))?;
    write_with(&cfg.path("abstraction.txt"), |w| result.abstraction.write_text(w))?;
    let r = &mut out.report;
    echo_scenario(r, cfg, &setup, &scenario);
    r.push("coarse_eta", reals(&refine.coarse_eta));
    r.push("max_halvings", refine.max_halvings);
    r.push("pairs_per_coarse_cell", table.meta.samples_per_pair / 2);
    r.push("gamma_mode", table.meta.gamma_mode.map_or("fixed".to_string(), gamma_mode_name));
    r.push("gamma", reals(&table.meta.gamma));
    r.push("lipschitz", reals(&table.meta.lipschitz));
    r.push("iterations", result.reports.len());
    r.push("final_eta", reals(result.abstraction.grid().radii()));
    r.push("winning", result.controller.winning.count());
    r.push("success", result.success);
    write_summary(cfg, "refine_summary.txt", &out.report)?;
    Ok((out, result))
}

/// Tally of a batch of closed-loop runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationTally {
    pub runs: usize,
    pub successes: usize,
    pub failures: Vec<(usize, String)>,
}

/// Closed-loop runs with seeds `seed, seed+1, …`; writes `trajectories.csv`.
pub fn cmd_simulate(
    cfg: &RunConfig,
    controller: Option<&Path>,
    abstraction: Option<&Path>,
) -> Result<(Outcome, SimulationTally), CliError> {
    let setup = cfg.setup()?;
    let objective = cfg.objective()?;
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("a [simulation] section is required".into()))?;
    let x0 = sim
        .initial
        .clone()
        .or_else(|| objective.initial.clone())
        .ok_or_else(|| CliError::Config("simulation needs an initial state".into()))?;
    let cpath = controller.map_or_else(|| cfg.path("controller.txt"), Path::to_path_buf);
    let apath = abstraction.map_or_else(|| cfg.path("abstraction.txt"), Path::to_path_buf);
    let (ctrl, grid) = load_controller(&cpath)?;
    let abs = read_abstraction(&apath)?;
    if &grid != abs.grid() {
        return Err(SynthesisError::GridMismatch.into());
    }
    ensure_dir(&cfg.output_dir)?;
    let mut out = Outcome::default();
    let t = Instant::now();
    let mut tally = SimulationTally { runs: sim.runs, successes: 0, failures: Vec::new() };
    let n = grid.dim();
    let m = abs.inputs().first().map_or(0, Vec::len);
    let mut runs = Vec::with_capacity(sim.runs);
    for run in 0..sim.runs {
        let seed = cfg.seed.wrapping_add(run as u64);
        let (rows, verdict) =
            simulate_closed_loop(&ctrl, &abs, &setup.system, &objective, &x0, sim.horizon, sim.disturbance, seed)?;
        match &verdict {
            Verdict::Success => tally.successes += 1,
            Verdict::Failure(reason) => tally.failures.push((run, reason.clone())),
        }
        runs.push(rows);
    }
    write_with(&cfg.path("trajectories.csv"), |w| {
        let xs: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let us: Vec<String> = (0..m).map(|i| format!("u{i}")).collect();
        writeln!(w, "run,t,{},{},cell,phase", xs.join(","), us.join(","))?;
        for (run, rows) in runs.iter().enumerate() {
            for row in rows {
                let x: Vec<String> = row.x.iter().map(|v| real(*v)).collect();
                let u: Vec<String> = match row.input {
                    Some(i) => abs.inputs()[i].iter().map(|v| real(*v)).collect(),
                    None => vec![String::new(); m],
                };
                let cell = row.cell.map_or(String::new(), |c| c.to_string());
                writeln!(w, "{run},{},{},{},{cell},{}", row.t, x.join(","), u.join(","), row.phase)?;
            }
        }
        Ok(())
    })?;
    out.time("simulation", t);
    let r = &mut out.report;
    r.push("controller", cpath.display());
    r.push("abstraction", apath.display());
    r.push("objective", objective.kind);
    r.push("initial", reals(&x0));
    r.push("runs", sim.runs);
    r.push("horizon", sim.horizon);
    r.push("disturbance_model", format!("{:?}", sim.disturbance).to_lowercase());
    r.push("seed", cfg.seed);
    r.push("successes", tally.successes);
    r.push("failures", tally.failures.len());
    if let Some((run, reason)) = tally.failures.first() {
        r.push("first_failure", format!("run {run}: {reason}"));
    }
    write_summary(cfg, "simulate_summary.txt", &out.report)?;
    Ok((out, tally))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub beta: f64,
    pub q: u64,
    pub samples: u64,
    pub gamma: Option<f64>,
}

pub fn sweep_rows(spec: &SweepConfig) -> Result<Vec<SweepRow>, CliError> {
    let need = |v: Option<f64>, what: &str| v.ok_or_else(|| CliError::Config(format!("sweep needs `{what}`")));
    spec.values
        .iter()
        .map(|&v| {
            let (epsilon, beta) = match spec.kind {
                SweepKind::BetaVsN => (need(spec.epsilon, "epsilon")?, v),
                SweepKind::EpsVsN | SweepKind::EpsVsGamma => (v, need(spec.beta, "beta")?),
            };
            let samples = cmd_sample_size(epsilon, beta, spec.q, false)?;
            let gamma = match spec.kind {
                SweepKind::EpsVsGamma => {
                    let l = need(spec.lipschitz, "lipschitz")?;
                    let eta = spec.eta.as_ref().ok_or_else(|| CliError::Config("sweep needs `eta`".into()))?;
                    let wbar = spec.disturbance.clone().unwrap_or_else(|| vec![0.0; eta.len()]);
                    let mode = spec.gamma_mode.unwrap_or_else(|| GammaMode::auto(&wbar, false));
                    Some(bias_gamma(l, epsilon, eta, &wbar, mode)?)
                }
                _ => None,
            };
            Ok(SweepRow { epsilon, beta, q: spec.q, samples, gamma })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "epsilon,beta,q,samples,gamma")?;
    for r in rows {
        let g = r.gamma.map_or(String::new(), real);
        writeln!(w, "{},{},{},{},{g}", real(r.epsilon), real(r.beta), r.q, r.samples)?;
    }
    Ok(())
}

/// Parameter sweep; writes `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(Outcome, Vec<SweepRow>), CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("a [sweep] section is required".into()))?;
    ensure_dir(&cfg.output_dir)?;
    let rows = sweep_rows(spec)?;
    write_with(&cfg.path("sweep.csv"), |w| write_sweep_csv(&rows, w))?;
    let mut out = Outcome::default();
    out.report.push("kind", format!("{:?}", spec.kind));
    out.report.push("points", rows.len());
    out.report.push("q", spec.q);
    write_summary(cfg, "sweep_summary.txt", &out.report)?;
    Ok((out, rows))
}

/// Scenario abstraction against a γ = 0 abstraction with PAC sample counts.
#[derive(Debug, Clone)]
pub struct PacComparison {
    pub n_scenario: u64,
    pub n_pac: u64,
    pub gamma: Vec<f64>,
    pub scenario: Controller,
    pub pac: Controller,
    pub scenario_abstraction: Abstraction,
    pub pac_abstraction: Abstraction,
    pub comparison: WinningComparison,
}

pub fn pac_compare(cfg: &RunConfig) -> Result<PacComparison, CliError> {
    let setup = cfg.setup()?;
    let scenario = cfg.scenario_config()?;
    let objective = cfg.objective()?;
    let lipschitz = cfg.lipschitz_constants(&setup)?;
    let n = setup.grid.dim();
    let pairs = setup.grid.len() * setup.inputs.len();
    let n_scenario = pair_sample_size(&scenario, setup.grid.len(), setup.inputs.len(), n)?;
    let n_pac = pac_sample_size(scenario.epsilon, scenario.beta / pairs as f64, (n * n + n) as u64)?;

    let base = cfg.build_options(lipschitz)?;
    let sc_abs = build_abstraction(&setup.system, &setup.grid, &setup.inputs, &scenario, &base)?;
    let mut pac_opts = base.clone();
    pac_opts.gamma_override = Some(0.0);
    pac_opts.samples_override = Some(n_pac);
    let pac_abs = build_abstraction(&setup.system, &setup.grid, &setup.inputs, &scenario, &pac_opts)?;

    let solve = |abs: &Abstraction| -> Result<Controller, CliError> {
        let game = Game::new(abs);
        let ctrl = solve_objective(&game, abs.grid(), &objective)?;
        let (t, a) = objective_regions(abs.grid(), &objective);
        validate(&ctrl, &game, &t, &a)?;
        Ok(ctrl)
    };
    let sc = solve(&sc_abs)?;
    let pac = solve(&pac_abs)?;
    let comparison = compare_winning(&sc.winning, &pac.winning)?;
    Ok(PacComparison {
        n_scenario,
        n_pac,
        gamma: sc_abs.meta.gamma.clone(),
        scenario: sc,
        pac,
        scenario_abstraction: sc_abs,
        pac_abstraction: pac_abs,
        comparison,
    })
}

fn comparison_report(r: &mut Report, c: &WinningComparison) {
    r.push("size_a", c.size_a);
    r.push("size_b", c.size_b);
    r.push("intersection", c.both);
    r.push("a_minus_b", c.only_a);
    r.push("b_minus_a", c.only_b);
    r.push("a_in_b_percent", format!("{:.2}", c.a_in_b_percent()));
    let b_in_a = if c.size_b == 0 { 100.0 } else { 100.0 * c.both as f64 / c.size_b as f64 };
    r.push("b_in_a_percent", format!("{b_in_a:.2}"));
}

/// Writes `controller_scenario.txt`, `controller_pac.txt` and `pac_compare.txt`.
pub fn cmd_pac_compare(cfg: &RunConfig) -> Result<(Outcome, PacComparison), CliError> {
    ensure_dir(&cfg.output_dir)?;
    let mut out = Outcome::default();
    let t = Instant::now();
    let p = pac_compare(cfg)?;
    out.time("pac_compare", t);
    let grid = p.scenario_abstraction.grid();
    write_with(&cfg.path("controller_scenario.txt"), |w| write_controller(&p.scenario, grid, w))?;
    write_with(&cfg.path("controller_pac.txt"), |w| write_controller(&p.pac, grid, w))?;
    let r = &mut out.report;
    r.push("seed", cfg.seed);
    r.push("epsilon", real(cfg.scenario()?.epsilon));
    r.push("beta", real(cfg.scenario()?.beta));
    r.push("cells", grid.len());
    r.push("eta", reals(grid.radii()));
    r.push("samples_scenario", p.n_scenario);
    r.push("samples_pac", p.n_pac);
    r.push("gamma_scenario", reals(&p.gamma));
    r.push("gamma_pac", 0);
    r.push("a", "scenario");
    r.push("b", "pac");
    comparison_report(r, &p.comparison);
    write_summary(cfg, "pac_compare.txt", &out.report)?;
    Ok((out, p))
}

/// Compares the winning sets of two controller files.
pub fn cmd_compare_winning(a: &Path, b: &Path) -> Result<(Report, WinningComparison), CliError> {
    let (ca, ga) = load_controller(a)?;
    let (cb, gb) = load_controller(b)?;
    if ga != gb {
        return Err(SynthesisError::GridMismatch.into());
    }
    let c = compare_winning(&ca.winning, &cb.winning)?;
    let mut r = Report::default();
    r.push("a", a.display());
    r.push("b", b.display());
    comparison_report(&mut r, &c);
    Ok((r, c))
}

#[derive(Debug, Parser)]
#[command(name = "ddabs", version, about = "Data-driven abstractions and controller synthesis")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate per-input Lipschitz constants.
    EstimateLipschitz { config: PathBuf },
    /// Print the scenario (or PAC) sample size.
    SampleSize {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        q: u64,
        #[arg(long)]
        pac: bool,
    },
    /// Build an abstraction.
    Abstract { config: PathBuf },
    /// Synthesize a controller on a stored abstraction.
    Synthesize {
        config: PathBuf,
        #[arg(long)]
        abstraction: Option<PathBuf>,
    },
    /// Refine the grid until the initial state is winning.
    RefineSynthesize { config: PathBuf },
    /// Simulate the closed loop.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        abstraction: Option<PathBuf>,
    },
    /// Sample size and bias term over a parameter range.
    Sweep { config: PathBuf },
    /// Scenario against PAC sample counts on one grid.
    PacCompare { config: PathBuf },
    /// Intersections and differences of two winning sets.
    CompareWinning {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn print_outcome(out: &Outcome) {
    print!("{}", out.report);
    for (what, secs) in &out.timings {
        println!("time_{what} = {secs:.3}s");
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::EstimateLipschitz { config } => {
            let (out, est) = cmd_estimate_lipschitz(&RunConfig::load(&config)?)?;
            print_outcome(&out);
            if let Some(e) = lipschitz_failure(&est) {
                return Err(e);
            }
        }
        Command::SampleSize { epsilon, beta, q, pac } => println!("{}", cmd_sample_size(epsilon, beta, q, pac)?),
        Command::Abstract { config } => print_outcome(&cmd_abstract(&RunConfig::load(&config)?)?.0),
        Command::Synthesize { config, abstraction } => {
            print_outcome(&cmd_synthesize(&RunConfig::load(&config)?, abstraction.as_deref())?.0)
        }
        Command::RefineSynthesize { config } => {
            let (out, result) = cmd_refine_synthesize(&RunConfig::load(&config)?)?;
            print_outcome(&out);
            if !result.success {
                let depth = result.reports.last().map_or(0, |r| r.depth);
                return Err(CliError::Empty(format!("initial state not winning after {depth} halvings")));
            }
        }
        Command::Simulate { config, controller, abstraction } => print_outcome(
            &cmd_simulate(&RunConfig::load(&config)?, controller.as_deref(), abstraction.as_deref())?.0,
        ),
        Command::Sweep { config } => print_outcome(&cmd_sweep(&RunConfig::load(&config)?)?.0),
        Command::PacCompare { config } => print_outcome(&cmd_pac_compare(&RunConfig::load(&config)?)?.0),
        Command::CompareWinning { a, b } => print!("{}", cmd_compare_winning(&a, &b)?.0),
    }
    Ok(())
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return 1;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DCDC: &str = r#"
seed = 3
output_dir = "out"

[system]
kind = "dcdc"
disturbance = [0.01, 0.0]

[state]
eta = [0.05, 0.05]

[scenario]
epsilon = 0.05
beta = 0.01

[objective]
kind = "reach_stay"
target = [{ lower = [1.1, 5.4], upper = [1.6, 5.9] }]
initial = [0.7, 5.4]
"#;

    #[test]
    fn parses_and_echoes_config() {
        let cfg = RunConfig::parse(DCDC).unwrap();
        assert_eq!(cfg.system.as_ref().unwrap().kind, SystemKind::Dcdc);
        assert!(cfg.scenario().unwrap().strict);
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let setup = cfg.setup().unwrap();
        assert_eq!(setup.grid.len(), 100);
        assert_eq!(setup.inputs, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_eps = DCDC.replace("epsilon = 0.05", "epsilon = 1.5");
        assert_eq!(RunConfig::parse(&bad_eps).unwrap().setup().unwrap_err().exit_code(), 1);
        let outside = DCDC.replace("initial = [0.7, 5.4]", "initial = [0.0, 5.4]");
        assert!(matches!(RunConfig::parse(&outside).unwrap().setup(), Err(CliError::Config(_))));
        let inverted = DCDC.replace("lower = [1.1, 5.4]", "lower = [1.7, 5.4]");
        assert!(RunConfig::parse(&inverted).is_err());
        let unknown = DCDC.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(RunConfig::parse(&unknown).is_err());
    }

    #[test]
    fn sample_size_command() {
        assert_eq!(cmd_sample_size(0.01, 0.01, 6, true).unwrap(), 2122);
        assert_eq!(
            cmd_sample_size(0.1, 0.01, 1, false).unwrap(),
            sample_size(0.1, 0.01, 1).unwrap()
        );
        assert_eq!(cmd_sample_size(0.0, 0.01, 1, false).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn sweep_single_point_matches_direct() {
        let spec = SweepConfig {
            kind: SweepKind::EpsVsGamma,
            values: vec![0.05],
            epsilon: None,
            beta: Some(0.01),
            q: 6,
            lipschitz: Some(1.0),
            eta: Some(vec![0.01, 0.01]),
            disturbance: None,
            gamma_mode: None,
        };
        let rows = sweep_rows(&spec).unwrap();
        assert_eq!(rows[0].samples, sample_size(0.05, 0.01, 6).unwrap());
        let g = bias_gamma(1.0, 0.05, &[0.01, 0.01], &[0.0, 0.0], GammaMode::NoDisturbanceN).unwrap();
        assert_eq!(rows[0].gamma, Some(g));
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("epsilon,beta,q,samples,gamma\n"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["ddabs", "sample-size", "--epsilon", "0.1", "--beta", "0.01", "--q", "1"]), 0);
        assert_eq!(run(["ddabs", "sample-size", "--epsilon", "2", "--beta", "0.01", "--q", "1"]), 1);
        assert_eq!(run(["ddabs", "no-such-command"]), 1);
        assert_eq!(run(["ddabs", "abstract", "/nonexistent/config.toml"]), 1);
    }
}
