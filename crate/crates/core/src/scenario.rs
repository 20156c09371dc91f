//! Sample complexity, the bias term γ, and the scenario growth-bound LPs.

pub mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::SampleBatch;
use simplex::{LinearProgram, LpError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample size exceeds 2^62")]
    Overflow,
    #[error("{0}")]
    Mode(String),
    #[error(
        "growth LP infeasible in output row {row}: a sample needs {residual:.3e} beyond the cap θ̄; raise θ̄ or lower γ/ε"
    )]
    Infeasible { row: usize, residual: f64 },
    #[error("growth LP solution violates a constraint by {0:.3e}")]
    Residual(f64),
    #[error(transparent)]
    Lp(#[from] LpError),
}

fn check_unit_open(name: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(ScenarioError::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// `ln Σ_{i<q} C(N,i) εⁱ (1-ε)^{N-i}`.
pub fn log_binomial_tail(n: u64, epsilon: f64, q: u64) -> f64 {
    let le = epsilon.ln();
    let l1e = (-epsilon).ln_1p();
    let top = q.min(n + 1);
    let mut terms = Vec::with_capacity(top as usize);
    let mut log_choose = 0.0;
    for i in 0..top {
        if i > 0 {
            log_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        terms.push(log_choose + i as f64 * le + (n - i) as f64 * l1e);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Neumaier-compensated sum of the shifted exponentials
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let v = (t - max).exp();
        let s = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
        sum = s;
    }
    max + (sum + comp).ln()
}

/// Smallest `N` with `Σ_{i<q} C(N,i) εⁱ (1-ε)^{N-i} ≤ β`.
pub fn sample_size(epsilon: f64, beta: f64, q: u64) -> Result<u64, ScenarioError> {
    check_unit_open("epsilon", epsilon)?;
    check_unit_open("beta", beta)?;
    if q == 0 {
        return Err(ScenarioError::InvalidParameter("q must be at least 1".into()));
    }
    let lb = beta.ln();
    let ok = |n: u64| log_binomial_tail(n, epsilon, q) <= lb;
    // below q samples the tail is the whole distribution
    let mut lo = q - 1;
    let mut hi = q.max(1);
    while !ok(hi) {
        lo = hi;
        hi = hi.checked_mul(2).filter(|h| *h < 1 << 62).ok_or(ScenarioError::Overflow)?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `⌈(2/ε)(ln(1/β) + q)⌉`.
pub fn pac_sample_size(epsilon: f64, beta: f64, q: u64) -> Result<u64, ScenarioError> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(ScenarioError::InvalidParameter(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(ScenarioError::InvalidParameter(format!("beta must lie in (0, 1], got {beta}")));
    }
    let v = 2.0 / epsilon * ((1.0 / beta).ln() + q as f64);
    // absorb round-off on exact integers such as ε=1, β=1/e
    Ok((v - 1e-9 * v.max(1.0)).ceil().max(0.0) as u64)
}

/// How the sample space dimension enters the bias term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `4L (ε ∏η ∏w̄)^{1/2n}`; every `w̄ᵢ > 0`.
    Full2n,
    /// `4L (ε ∏η)^{1/n}`.
    NoDisturbanceN,
    /// `4L (ε ∏η ∏_{w̄ᵢ>0} w̄ᵢ)^{1/(n+q)}`, `q = #{w̄ᵢ > 0}`.
    PartialNPlusQ,
    /// `8L (ε [∏η ∏w̄]²)^{1/4n}`; every `w̄ᵢ > 0`.
    Paired4n,
    /// `8L (ε (∏η)²)^{1/2n}`.
    PairedNoDisturbance,
    /// `8L (ε [∏η ∏_{w̄ᵢ>0} w̄ᵢ]²)^{1/2(n+q)}`.
    PairedPartial,
}

impl GammaMode {
    /// Mode matching the disturbance structure.
    pub fn auto(wbar: &[f64], paired: bool) -> Self {
        let positive = wbar.iter().filter(|w| **w > 0.0).count();
        match (paired, positive) {
            (false, 0) => Self::NoDisturbanceN,
            (false, p) if p == wbar.len() => Self::Full2n,
            (false, _) => Self::PartialNPlusQ,
            (true, 0) => Self::PairedNoDisturbance,
            (true, p) if p == wbar.len() => Self::Paired4n,
            (true, _) => Self::PairedPartial,
        }
    }

    pub fn is_paired(self) -> bool {
        matches!(self, Self::Paired4n | Self::PairedNoDisturbance | Self::PairedPartial)
    }
}

/// Constraint-tightening constant γ.
pub fn bias_gamma(l: f64, epsilon: f64, eta: &[f64], wbar: &[f64], mode: GammaMode) -> Result<f64, ScenarioError> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(ScenarioError::InvalidParameter(format!("Lipschitz constant must be nonnegative, got {l}")));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(ScenarioError::InvalidParameter(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if eta.iter().any(|e| !(*e > 0.0)) {
        return Err(ScenarioError::InvalidParameter("state radii must be positive".into()));
    }
    let n = eta.len() as f64;
    let pe: f64 = eta.iter().product();
    let positive: Vec<f64> = wbar.iter().copied().filter(|w| *w > 0.0).collect();
    let q = positive.len() as f64;
    let pw: f64 = positive.iter().product();
    let need_all = |name: &str| {
        if positive.len() == wbar.len() && !wbar.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Mode(format!(
                "{name} needs every disturbance bound to be positive; use a partial or no-disturbance mode"
            )))
        }
    };
    let g = match mode {
        GammaMode::Full2n => {
            need_all("full_2n")?;
            4.0 * l * (epsilon * pe * pw).powf(1.0 / (2.0 * n))
        }
        GammaMode::NoDisturbanceN => 4.0 * l * (epsilon * pe).powf(1.0 / n),
        GammaMode::PartialNPlusQ => 4.0 * l * (epsilon * pe * pw).powf(1.0 / (n + q)),
        GammaMode::Paired4n => {
            need_all("paired_4n")?;
            8.0 * l * (epsilon * (pe * pw).powi(2)).powf(1.0 / (4.0 * n))
        }
        GammaMode::PairedNoDisturbance => 8.0 * l * (epsilon * pe * pe).powf(1.0 / (2.0 * n)),
        GammaMode::PairedPartial => 8.0 * l * (epsilon * (pe * pw).powi(2)).powf(1.0 / (2.0 * (n + q))),
    };
    Ok(g)
}

/// Parameters shared by every scenario program of one abstraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub epsilon: f64,
    pub beta: f64,
    /// Uniform cap θ̄ on every decision variable; `None` means `10·max(1, L)`.
    pub theta_cap: Option<f64>,
}

impl ScenarioConfig {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self, ScenarioError> {
        let c = Self {
            epsilon,
            beta,
            theta_cap: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(ScenarioError::InvalidParameter(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        check_unit_open("beta", self.beta)?;
        if let Some(cap) = self.theta_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(ScenarioError::InvalidParameter(format!("theta cap must be positive, got {cap}")));
            }
        }
        Ok(())
    }

    pub fn cap_for(&self, lipschitz: f64) -> f64 {
        self.theta_cap.unwrap_or(10.0 * lipschitz.max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    Standard,
    Paired,
}

/// `κ(θ)(r) = θ₁ r + θ₂` plus the bias it was computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    n: usize,
    /// Row-major `n × n`.
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    pub gamma: f64,
    pub mode: GrowthMode,
}

impl GrowthBound {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>, gamma: f64, mode: GrowthMode) -> Result<Self, ScenarioError> {
        let n = theta2.len();
        if theta1.len() != n * n {
            return Err(ScenarioError::InvalidParameter("θ₁ must be n × n".into()));
        }
        if theta1.iter().chain(&theta2).any(|v| !(*v >= 0.0)) {
            return Err(ScenarioError::InvalidParameter("θ must be nonnegative".into()));
        }
        Ok(Self { n, theta1, theta2, gamma, mode })
    }

    pub fn zero(n: usize, mode: GrowthMode) -> Self {
        Self {
            n,
            theta1: vec![0.0; n * n],
            theta2: vec![0.0; n],
            gamma: 0.0,
            mode,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn theta1(&self, row: usize, col: usize) -> f64 {
        self.theta1[row * self.n + col]
    }

    pub fn theta1_row(&self, row: usize) -> &[f64] {
        &self.theta1[row * self.n..(row + 1) * self.n]
    }

    pub fn theta2(&self) -> &[f64] {
        &self.theta2
    }

    /// `θ₁ r + θ₂`.
    pub fn eval(&self, r: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                self.theta1_row(j).iter().zip(r).map(|(t, r)| t * r).sum::<f64>() + self.theta2[j]
            })
            .collect()
    }
}

pub fn eval_growth(gb: &GrowthBound, r: &[f64]) -> Vec<f64> {
    gb.eval(r)
}

/// Sampled constraints `d_ij ≥ ...` in absolute-difference form: row `i`
/// carries `r_i = |Δx|` and `d_i = |Δx'|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConstraints {
    n: usize,
    r: Vec<f64>,
    d: Vec<f64>,
}

impl GrowthConstraints {
    pub fn new(n: usize) -> Self {
        Self { n, r: Vec::new(), d: Vec::new() }
    }

    pub fn push(&mut self, r: &[f64], d: &[f64]) {
        debug_assert!(r.len() == self.n && d.len() == self.n);
        self.r.extend_from_slice(r);
        self.d.extend_from_slice(d);
    }

    pub fn len(&self) -> usize {
        self.r.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn r(&self, i: usize) -> &[f64] {
        &self.r[i * self.n..(i + 1) * self.n]
    }

    pub fn d(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Standard form: distances to the cell center and nominal successor.
    pub fn from_batch(batch: &SampleBatch, x_hat: &[f64], x_nominal: &[f64]) -> Self {
        let n = batch.dim();
        let mut c = Self::new(n);
        c.r.reserve(batch.len() * n);
        c.d.reserve(batch.len() * n);
        for t in batch.iter() {
            for k in 0..n {
                c.r.push((t.x[k] - x_hat[k]).abs());
            }
            for k in 0..n {
                c.d.push((t.x_next[k] - x_nominal[k]).abs());
            }
        }
        c
    }

    /// Paired form: consecutive samples `(2i, 2i+1)`.
    pub fn from_pairs(batch: &SampleBatch) -> Self {
        let n = batch.dim();
        let mut c = Self::new(n);
        for i in 0..batch.len() / 2 {
            let (a, b) = (batch.get(2 * i), batch.get(2 * i + 1));
            for k in 0..n {
                c.r.push((a.x[k] - b.x[k]).abs());
            }
            for k in 0..n {
                c.d.push((a.x_next[k] - b.x_next[k]).abs());
            }
        }
        c
    }

    /// Largest violation of `θ₁ r_i + θ₂ ≥ d_i + γ` over all rows and samples.
    pub fn max_violation(&self, gb: &GrowthBound) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let k = gb.eval(self.r(i));
            for (j, kj) in k.iter().enumerate() {
                worst = worst.max(self.d(i)[j] + gb.gamma - kj);
            }
        }
        worst
    }
}

/// Objective weights of one output row: `n` weights for the θ₁ entries and one for θ₂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights(pub Vec<f64>);

impl ObjectiveWeights {
    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n + 1])
    }

    /// θ₁ entries weighted by a target radius, so the optimum minimises `κ(r)`.
    pub fn radius(r: &[f64]) -> Self {
        let mut w = r.to_vec();
        w.push(1.0);
        Self(w)
    }
}

const RESIDUAL_TOL: f64 = 1e-9;

/// Solves the LP for one output row `j`:
/// minimise `wᵀt` s.t. `Σ_k r_ik t_k + t_n ≥ d_ij + γ`, `0 ≤ t ≤ cap`.
///
/// The LP is handled through its dual (whose origin is feasible, so no
/// phase one is needed), restricted to a working set of constraints that is
/// grown by the most violated samples until none is violated.
fn solve_row(c: &GrowthConstraints, j: usize, gamma: f64, cap: f64, w: &[f64]) -> Result<Vec<f64>, ScenarioError> {
    let n = c.dim();
    let m = c.len();
    let rhs = |i: usize| c.d(i)[j] + gamma;
    let lhs = |i: usize, t: &[f64]| c.r(i).iter().zip(t).map(|(r, t)| r * t).sum::<f64>() + t[n];

    // t = cap maximises every left-hand side
    let full = vec![cap; n + 1];
    let mut worst = (0, f64::NEG_INFINITY);
    for i in 0..m {
        let v = rhs(i) - lhs(i, &full);
        if v > worst.1 {
            worst = (i, v);
        }
    }
    if worst.1 > 0.0 {
        return Err(ScenarioError::Infeasible { row: j, residual: worst.1 });
    }

    let scale = 1.0 + (0..m).map(rhs).fold(0.0, f64::max);
    let first = (0..m).max_by(|a, b| rhs(*a).total_cmp(&rhs(*b))).expect("nonempty");
    let mut working = vec![first];
    let mut in_set = vec![false; m];
    in_set[first] = true;
    let mut viol: Vec<(f64, usize)> = Vec::new();
    loop {
        // dual: max Σ c_i y_i − cap Σ z_k  s.t.  Σ_i M_ik y_i − z_k ≤ w_k
        let s = working.len();
        let mut obj = Vec::with_capacity(s + n + 1);
        obj.extend(working.iter().map(|&i| rhs(i)));
        obj.extend(std::iter::repeat(-cap).take(n + 1));
        let mut lp = LinearProgram::maximize(obj);
        let mut row = vec![0.0; s + n + 1];
        for k in 0..=n {
            for (col, &i) in working.iter().enumerate() {
                row[col] = if k < n { c.r(i)[k] } else { 1.0 };
            }
            row[s..].fill(0.0);
            row[s + k] = -1.0;
            lp.add_le(&row, w[k])?;
        }
        let sol = lp.solve()?;
        let t: Vec<f64> = sol.duals.iter().map(|v| v.clamp(0.0, cap)).collect();

        viol.clear();
        for i in 0..m {
            if !in_set[i] {
                let v = rhs(i) - lhs(i, &t);
                if v > 1e-12 * scale {
                    viol.push((v, i));
                }
            }
        }
        if viol.is_empty() {
            return repair(c, j, gamma, t);
        }
        viol.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, i) in viol.iter().take(n + 1) {
            in_set[i] = true;
            working.push(i);
        }
    }
}

/// Closes round-off gaps by lifting the offset `t_n`, then re-checks.
fn repair(c: &GrowthConstraints, j: usize, gamma: f64, mut t: Vec<f64>) -> Result<Vec<f64>, ScenarioError> {
    let n = c.dim();
    let mut deficit: f64 = 0.0;
    for i in 0..c.len() {
        let l = c.r(i).iter().zip(&t).map(|(r, t)| r * t).sum::<f64>() + t[n];
        deficit = deficit.max(c.d(i)[j] + gamma - l);
    }
    if deficit > RESIDUAL_TOL {
        return Err(ScenarioError::Residual(deficit));
    }
    if deficit > 0.0 {
        t[n] += deficit;
    }
    Ok(t)
}

/// Solves the growth LP row by row; the rows share no variables.
pub fn solve_growth_constraints(
    c: &GrowthConstraints,
    gamma: f64,
    cap: f64,
    weights: &ObjectiveWeights,
    mode: GrowthMode,
) -> Result<GrowthBound, ScenarioError> {
    let n = c.dim();
    if c.is_empty() {
        return Err(ScenarioError::InvalidParameter("growth LP needs at least one sample".into()));
    }
    if !(gamma >= 0.0) {
        return Err(ScenarioError::InvalidParameter(format!("gamma must be nonnegative, got {gamma}")));
    }
    if weights.0.len() != n + 1 || weights.0.iter().any(|w| !(*w >= 0.0)) {
        return Err(ScenarioError::InvalidParameter("objective weights must be n + 1 nonnegative values".into()));
    }
    let mut theta1 = Vec::with_capacity(n * n);
    let mut theta2 = Vec::with_capacity(n);
    for j in 0..n {
        let t = solve_row(c, j, gamma, cap, &weights.0)?;
        theta1.extend_from_slice(&t[..n]);
        theta2.push(t[n]);
    }
    let gb = GrowthBound { n, theta1, theta2, gamma, mode };
    let v = c.max_violation(&gb);
    if v > RESIDUAL_TOL {
        return Err(ScenarioError::Residual(v));
    }
    Ok(gb)
}

/// Growth LP over a standard batch.
pub fn solve_growth_lp(
    batch: &SampleBatch,
    x_hat: &[f64],
    x_nominal: &[f64],
    gamma: f64,
    theta_cap: f64,
) -> Result<GrowthBound, ScenarioError> {
    let c = GrowthConstraints::from_batch(batch, x_hat, x_nominal);
    solve_growth_constraints(&c, gamma, theta_cap, &ObjectiveWeights::ones(batch.dim()), GrowthMode::Standard)
}

/// Growth LP over pairwise differences of a paired batch.
pub fn solve_growth_lp_paired(batch: &SampleBatch, gamma: f64, theta_cap: f64) -> Result<GrowthBound, ScenarioError> {
    if batch.len() % 2 != 0 {
        return Err(ScenarioError::InvalidParameter("paired batch must have even length".into()));
    }
    let c = GrowthConstraints::from_pairs(batch);
    solve_growth_constraints(&c, gamma, theta_cap, &ObjectiveWeights::ones(batch.dim()), GrowthMode::Paired)
}
