//! Dense two-phase tableau simplex for small linear programs.
//!
//! Solves `maximize cᵀx  s.t.  Ax ≤ b, x ≥ 0`. Pricing is Dantzig's rule;
//! after a run of degenerate pivots the solver switches to Bland's rule for
//! the rest of the solve, which rules out cycling.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("constraint row has {got} coefficients, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    c: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LinearProgram {
    /// Maximize `cᵀx` over `x ≥ 0`, no constraints yet.
    pub fn maximize(c: Vec<f64>) -> Self {
        Self {
            c,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    /// Adds `rowᵀx ≤ rhs`.
    pub fn add_le(&mut self, row: &[f64], rhs: f64) -> Result<(), LpError> {
        if row.len() != self.c.len() {
            return Err(LpError::Dimension {
                expected: self.c.len(),
                got: row.len(),
            });
        }
        self.a.extend_from_slice(row);
        self.b.push(rhs);
        Ok(())
    }

    /// Adds `rowᵀx ≥ rhs`.
    pub fn add_ge(&mut self, row: &[f64], rhs: f64) -> Result<(), LpError> {
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        self.add_le(&neg, -rhs)
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        Tableau::new(self).solve(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Dual value of each `≤` constraint (nonnegative at optimality).
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const PRICE_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

struct Tableau {
    rows: usize,
    width: usize,
    n: usize,
    n_art: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    degenerate: usize,
    bland: bool,
    limit: usize,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.num_constraints();
        let flipped: Vec<bool> = lp.b.iter().map(|b| *b < 0.0).collect();
        let n_art = flipped.iter().filter(|f| **f).count();
        let cols = n + m + n_art;
        let width = cols + 1;
        let mut t = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut art = n + m;
        for i in 0..m {
            let row = &mut t[i * width..(i + 1) * width];
            let sign = if flipped[i] { -1.0 } else { 1.0 };
            for j in 0..n {
                row[j] = sign * lp.a[i * n + j];
            }
            row[n + i] = sign;
            row[cols] = sign * lp.b[i];
            if flipped[i] {
                row[art] = 1.0;
                basis[i] = art;
                art += 1;
            } else {
                basis[i] = n + i;
            }
        }
        Self {
            rows: m,
            width,
            n,
            n_art,
            t,
            obj: vec![0.0; width],
            basis,
            iterations: 0,
            degenerate: 0,
            bland: false,
            limit: 200 * (m + cols) + 1000,
        }
    }

    fn cols(&self) -> usize {
        self.width - 1
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.cols()]
    }

    /// Rebuilds the reduced-cost row for objective `cost` (length `cols`).
    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        for j in 0..w {
            self.obj[j] = if j < cost.len() { -cost[j] } else { 0.0 };
        }
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    self.obj[j] += cb * self.t[i * w + j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for j in 0..w {
                    row[j] -= f * prow[j];
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for j in 0..w {
                self.obj[j] -= f * prow[j];
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn entering(&self, allowed: usize) -> Option<usize> {
        if self.bland {
            (0..allowed).find(|&j| self.obj[j] < -PRICE_TOL)
        } else {
            let mut best = None;
            let mut most = -PRICE_TOL;
            for j in 0..allowed {
                if self.obj[j] < most {
                    most = self.obj[j];
                    best = Some(j);
                }
            }
            best
        }
    }

    fn leaving(&self, c: usize) -> Option<usize> {
        let w = self.width;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows {
            let a = self.t[i * w + c];
            if a > PIVOT_TOL {
                let ratio = self.rhs(i).max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - 1e-13 || (ratio <= br + 1e-13 && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Runs simplex iterations; columns `>= allowed` never enter.
    fn optimize(&mut self, allowed: usize) -> Result<(), LpError> {
        loop {
            let Some(c) = self.entering(allowed) else {
                return Ok(());
            };
            let r = self.leaving(c).ok_or(LpError::Unbounded)?;
            if self.rhs(r) <= PIVOT_TOL {
                self.degenerate += 1;
                if self.degenerate >= DEGENERATE_RUN {
                    self.bland = true;
                }
            } else {
                self.degenerate = 0;
            }
            self.pivot(r, c);
            self.iterations += 1;
            if self.iterations > self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
        }
    }

    fn solve(mut self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        let n = self.n;
        let m = self.rows;
        let cols = self.cols();
        let real = n + m;
        if self.n_art > 0 {
            let mut cost = vec![0.0; cols];
            for c in cost.iter_mut().skip(real) {
                *c = -1.0;
            }
            self.price(&cost);
            self.optimize(cols)?;
            if self.obj[cols] < -FEAS_TOL * (1.0 + lp.b.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
                return Err(LpError::Infeasible);
            }
            // drive zero-level artificials out of the basis where possible
            for i in 0..m {
                if self.basis[i] >= real {
                    let w = self.width;
                    if let Some(j) = (0..real).find(|&j| self.t[i * w + j].abs() > 1e-9) {
                        self.pivot(i, j);
                    }
                }
            }
            self.bland = false;
            self.degenerate = 0;
        }
        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(&lp.c);
        self.price(&cost);
        self.optimize(real)?;

        let mut x = vec![0.0; n];
        for i in 0..m {
            if self.basis[i] < n {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        let duals = (0..m).map(|i| self.obj[n + i].max(0.0)).collect();
        let objective = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution {
            x,
            duals,
            objective,
            iterations: self.iterations,
        })
    }
}
