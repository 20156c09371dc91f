//! Reproducible i.i.d. trajectory samples over `cell × W`.
//!
//! Every `(cell, input, purpose)` triple owns its own ChaCha stream keyed by
//! the global seed, so batches can be generated in any order (or in
//! parallel) and still come out bit-identical.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{GeometryError, Hyperrect, UniformGrid};
use crate::systems::{SystemError, SystemModel};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("sample count must be at least 1")]
    Empty,
    #[error("oracle failed on sample {index}: {source}")]
    Oracle {
        index: usize,
        #[source]
        source: SystemError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Purpose tags keep the streams of different consumers apart.
pub mod purpose {
    pub const STANDARD: u8 = 1;
    pub const PAIRED: u8 = 2;
    pub const ANCHOR: u8 = 3;
    pub const LIPSCHITZ: u8 = 4;
    pub const REFINED_ANCHOR: u8 = 5;
    pub const SIMULATION: u8 = 6;
    pub const VALIDATION: u8 = 7;
}

/// Independent stream for one `(cell, input, purpose)` under a global seed.
///
/// The key is the global seed; the ChaCha stream id packs `cell` (40 bits),
/// `input` (20 bits) and `purpose` (4 bits).
pub fn stream_rng(seed: u64, cell: usize, input: usize, purpose: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = cell as u64;
    let input = input as u64;
    assert!(cell < 1 << 40 && input < 1 << 20 && purpose < 16, "stream id out of range");
    rng.set_stream((cell << 24) | (input << 4) | purpose as u64);
    rng
}

/// Uniform point of `[lo, hi]`, written into `out`.
pub fn draw_uniform(rng: &mut impl Rng, lo: &[f64], hi: &[f64], out: &mut [f64]) {
    for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
        *o = l + (h - l) * rng.random::<f64>();
    }
}

/// Uniform point of `[-bound, bound]`.
pub fn draw_symmetric(rng: &mut impl Rng, bound: &[f64], out: &mut [f64]) {
    for (o, b) in out.iter_mut().zip(bound) {
        *o = b * (2.0 * rng.random::<f64>() - 1.0);
    }
}

/// One observed transition. The disturbance that produced it is not kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTriple<'a> {
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub x_next: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    input: Vec<f64>,
    starts: Vec<f64>,
    successors: Vec<f64>,
    pub seed: u64,
    /// `(cell index, input index)`.
    pub pair: (usize, usize),
    pub paired: bool,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.starts.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn start(&self, i: usize) -> &[f64] {
        &self.starts[i * self.dim..(i + 1) * self.dim]
    }

    pub fn successor(&self, i: usize) -> &[f64] {
        &self.successors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> SampleTriple<'_> {
        SampleTriple {
            x: self.start(i),
            u: &self.input,
            x_next: self.successor(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SampleTriple<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.starts.truncate(n * self.dim);
        self.successors.truncate(n * self.dim);
    }

    /// CSV with columns `x0.., u0.., x_next0..`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = Vec::new();
        header.extend((0..self.dim).map(|i| format!("x{i}")));
        header.extend((0..self.input.len()).map(|i| format!("u{i}")));
        header.extend((0..self.dim).map(|i| format!("x_next{i}")));
        writeln!(out, "{}", header.join(","))?;
        for t in self.iter() {
            let row: Vec<String> = t
                .x
                .iter()
                .chain(t.u)
                .chain(t.x_next)
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Draws `n` transitions from `domain × W` using `rng`.
pub fn sample_box(
    system: &SystemModel,
    domain: &Hyperrect,
    u: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>), SamplingError> {
    if n == 0 {
        return Err(SamplingError::Empty);
    }
    let dim = system.state_dim();
    let wbar = system.disturbance_bound();
    let mut starts = vec![0.0; n * dim];
    let mut successors = vec![0.0; n * dim];
    let mut w = vec![0.0; dim];
    for i in 0..n {
        let x = &mut starts[i * dim..(i + 1) * dim];
        draw_uniform(rng, domain.lower(), domain.upper(), x);
        draw_symmetric(rng, wbar, &mut w);
        system
            .step_into(x, u, &w, &mut successors[i * dim..(i + 1) * dim])
            .map_err(|source| SamplingError::Oracle { index: i, source })?;
    }
    Ok((starts, successors))
}

fn batch(
    system: &SystemModel,
    grid: &UniformGrid,
    cell: usize,
    input_index: usize,
    u: &[f64],
    n: usize,
    seed: u64,
    tag: u8,
) -> Result<SampleBatch, SamplingError> {
    let domain = grid.cell_box(cell)?;
    let mut rng = stream_rng(seed, cell, input_index, tag);
    let (starts, successors) = sample_box(system, &domain, u, n, &mut rng)?;
    Ok(SampleBatch {
        dim: system.state_dim(),
        input: u.to_vec(),
        starts,
        successors,
        seed,
        pair: (cell, input_index),
        paired: tag == purpose::PAIRED,
    })
}

/// `n` samples uniform over `Ω(center(cell)) × W`.
pub fn sample_cell_batch(
    system: &SystemModel,
    grid: &UniformGrid,
    cell: usize,
    input_index: usize,
    u: &[f64],
    n: usize,
    seed: u64,
) -> Result<SampleBatch, SamplingError> {
    batch(system, grid, cell, input_index, u, n, seed, purpose::STANDARD)
}

/// `2·n_pairs` samples, consumed pairwise as `(2i, 2i+1)`.
pub fn sample_paired_batch(
    system: &SystemModel,
    grid: &UniformGrid,
    cell: usize,
    input_index: usize,
    u: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<SampleBatch, SamplingError> {
    if n_pairs == 0 {
        return Err(SamplingError::Empty);
    }
    batch(system, grid, cell, input_index, u, 2 * n_pairs, seed, purpose::PAIRED)
}

/// `φ(x̂, u, 0)`.
pub fn nominal_successor(system: &SystemModel, x_hat: &[f64], u: &[f64]) -> Result<Vec<f64>, SystemError> {
    system.step(x_hat, u, &vec![0.0; system.state_dim()])
}

/// `φ(x, u, w)` with `w` drawn uniformly from `W`.
pub fn disturbed_successor(
    system: &SystemModel,
    x: &[f64],
    u: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<f64>, SystemError> {
    let mut w = vec![0.0; system.state_dim()];
    draw_symmetric(rng, system.disturbance_bound(), &mut w);
    system.step(x, u, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin_power3a3m, identity_system, lti_exact_step, power3a3m};

    fn unit_identity(wbar: f64) -> SystemModel {
        identity_system(
            Hyperrect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            vec![vec![0.0]],
            vec![wbar, wbar],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_domain_gives_constant_samples() {
        let sys = unit_identity(0.0);
        let grid = UniformGrid::new(Hyperrect::new(vec![0.0], vec![1e-12]).unwrap(), vec![5e-13]).unwrap();
        let sys1 = identity_system(grid.bounds().clone(), vec![vec![0.0]], vec![0.0], 1.0).unwrap();
        let b = sample_cell_batch(&sys1, &grid, 0, 0, &[0.0], 50, 1).unwrap();
        let first = b.successor(0).to_vec();
        assert!(b.iter().all(|t| (t.x_next[0] - first[0]).abs() < 1e-12));
        assert_eq!(sys.state_dim(), 2);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let sys = unit_identity(0.1);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.125, 0.125]).unwrap();
        let a = sample_cell_batch(&sys, &grid, 5, 0, &[0.0], 100, 42).unwrap();
        let b = sample_cell_batch(&sys, &grid, 5, 0, &[0.0], 100, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_cell_batch(&sys, &grid, 6, 0, &[0.0], 100, 42).unwrap();
        assert_ne!(a.start(0), c.start(0));
        let p = sample_paired_batch(&sys, &grid, 5, 0, &[0.0], 50, 42).unwrap();
        assert_eq!(p.len(), 100);
        assert!(p.paired);
        assert_ne!(a.start(0), p.start(0));
    }

    #[test]
    fn shorter_batch_is_a_prefix() {
        let sys = unit_identity(0.1);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.25, 0.25]).unwrap();
        let long = sample_cell_batch(&sys, &grid, 3, 0, &[0.0], 300, 9).unwrap();
        let mut short = sample_cell_batch(&sys, &grid, 3, 0, &[0.0], 120, 9).unwrap();
        let mut trimmed = long.clone();
        trimmed.truncate(120);
        assert_eq!(trimmed, short);
        short.truncate(0);
        assert!(short.is_empty());
    }

    #[test]
    fn empty_request_is_rejected() {
        let sys = unit_identity(0.0);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.5, 0.5]).unwrap();
        assert!(matches!(sample_cell_batch(&sys, &grid, 0, 0, &[0.0], 0, 1), Err(SamplingError::Empty)));
        assert!(matches!(sample_paired_batch(&sys, &grid, 0, 0, &[0.0], 0, 1), Err(SamplingError::Empty)));
    }

    #[test]
    fn mean_of_starts_is_the_center() {
        let sys = unit_identity(0.0);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.25, 0.25]).unwrap();
        let n = 100_000;
        let b = sample_cell_batch(&sys, &grid, 2, 0, &[0.0], n, 5).unwrap();
        let center = grid.cell_center(2).unwrap();
        let sigma = 0.5 / 12f64.sqrt();
        for d in 0..2 {
            let mean = b.iter().map(|t| t.x[d]).sum::<f64>() / n as f64;
            assert!((mean - center[d]).abs() < 3.0 * sigma / (n as f64).sqrt() * 1.5);
        }
    }

    #[test]
    fn ks_uniformity_of_each_coordinate() {
        let sys = unit_identity(0.0);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.5, 0.5]).unwrap();
        let n = 10_000;
        let b = sample_cell_batch(&sys, &grid, 0, 0, &[0.0], n, 77).unwrap();
        for d in 0..2 {
            let mut xs: Vec<f64> = b.iter().map(|t| t.x[d]).collect();
            xs.sort_by(f64::total_cmp);
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let f = *x;
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
        }
    }

    #[test]
    fn paired_start_distance_is_bounded() {
        let sys = unit_identity(0.05);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.125, 0.125]).unwrap();
        let b = sample_paired_batch(&sys, &grid, 9, 0, &[0.0], 500, 3).unwrap();
        for i in 0..500 {
            let (p, q) = (b.start(2 * i), b.start(2 * i + 1));
            for d in 0..2 {
                assert!((p[d] - q[d]).abs() <= 2.0 * 0.125);
            }
        }
    }

    #[test]
    fn nominal_successor_cases() {
        let id = unit_identity(0.3);
        assert_eq!(nominal_successor(&id, &[0.2, 0.7], &[0.0]).unwrap(), vec![0.2, 0.7]);
        let power = builtin_power3a3m().unwrap();
        assert_eq!(nominal_successor(&power, &[0.0; 3], &[0.0]).unwrap(), vec![0.0; 3]);
        let x = [0.01, 0.02, -0.03];
        let got = nominal_successor(&power, &x, &[0.25]).unwrap();
        let want = lti_exact_step(&power3a3m::a(), &power3a3m::b(), &power3a3m::e(), &x, &[0.25], &[0.0, 0.0], 0.4).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let sys = unit_identity(0.0);
        let grid = UniformGrid::new(sys.state_box().clone(), vec![0.5, 0.5]).unwrap();
        let b = sample_cell_batch(&sys, &grid, 0, 0, &[0.0], 3, 1).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1,u0,x_next0,x_next1");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 5);
    }
}
