//! Axis-aligned boxes and uniform grids over them.
//!
//! Cells are infinity-norm balls `Ω_η(c)` with per-dimension radius `η`.
//! Flat cell indices are row-major with dimension 0 varying fastest:
//! `k = j_0 + counts[0] * (j_1 + counts[1] * (j_2 + ...))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when checking that a box splits into whole cells.
const GRID_FIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid box in dimension {dim}: lower {lower} > upper {upper}")]
    InvertedBox { dim: usize, lower: f64, upper: f64 },
    #[error("cell radius must be positive and finite, got {radius} in dimension {dim}")]
    BadRadius { dim: usize, radius: f64 },
    #[error("box width {width} in dimension {dim} is not a multiple of the cell width {cell}")]
    NotAMultiple { dim: usize, width: f64, cell: f64 },
    #[error("cell index {index} out of range (grid has {len} cells)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("point lies outside the grid box")]
    OutOfDomain,
}

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Hyperrect {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for Hyperrect {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        Self::new(raw.lower, raw.upper)
    }
}

impl Hyperrect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() {
            return Err(GeometryError::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (dim, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) {
                return Err(GeometryError::InvertedBox {
                    dim,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-half, half]`.
    pub fn symmetric(half: &[f64]) -> Result<Self, GeometryError> {
        Self::new(half.iter().map(|h| -h).collect(), half.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(p, (l, u))| *l <= *p && *p <= *u)
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains_box(&self, other: &Hyperrect) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// True when the closed boxes share at least one point.
    pub fn intersects(&self, other: &Hyperrect) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] <= other.upper[i] && other.lower[i] <= self.upper[i])
    }

    /// The infinity-norm ball `Ω_radius(center)` as a box.
    pub fn ball(center: &[f64], radius: &[f64]) -> Self {
        Self {
            lower: center.iter().zip(radius).map(|(c, r)| c - r).collect(),
            upper: center.iter().zip(radius).map(|(c, r)| c + r).collect(),
        }
    }

    pub fn corners(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
                .collect()
        })
    }
}

/// Inclusive per-dimension index range of grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRange {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    counts: Vec<usize>,
    empty: bool,
}

impl CellRange {
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn len(&self) -> usize {
        if self.empty {
            return 0;
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l + 1)
            .product()
    }

    /// Flat indices of every cell in the range, dimension 0 fastest.
    pub fn iter(&self) -> CellRangeIter<'_> {
        CellRangeIter {
            range: self,
            cursor: if self.empty {
                None
            } else {
                Some(self.lo.clone())
            },
        }
    }
}

pub struct CellRangeIter<'a> {
    range: &'a CellRange,
    cursor: Option<Vec<usize>>,
}

impl Iterator for CellRangeIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let cur = self.cursor.as_mut()?;
        let mut flat = 0;
        let mut stride = 1;
        for (j, c) in cur.iter().zip(&self.range.counts) {
            flat += j * stride;
            stride *= c;
        }
        let mut dim = 0;
        loop {
            if dim == cur.len() {
                self.cursor = None;
                break;
            }
            if cur[dim] < self.range.hi[dim] {
                cur[dim] += 1;
                break;
            }
            cur[dim] = self.range.lo[dim];
            dim += 1;
        }
        Some(flat)
    }
}

/// Uniform rectangular partition of a box into cells of radius `radii`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    bounds: Hyperrect,
    radii: Vec<f64>,
    counts: Vec<usize>,
}

impl UniformGrid {
    /// Builds the grid, rejecting boxes that are not whole multiples of `2 * radii`.
    pub fn new(bounds: Hyperrect, radii: Vec<f64>) -> Result<Self, GeometryError> {
        if radii.len() != bounds.dim() {
            return Err(GeometryError::Dimension {
                expected: bounds.dim(),
                got: radii.len(),
            });
        }
        let mut counts = Vec::with_capacity(radii.len());
        for (dim, &r) in radii.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(GeometryError::BadRadius { dim, radius: r });
            }
            let width = bounds.width(dim);
            let cell = 2.0 * r;
            let count = (width / cell).round();
            if count < 1.0 || (count * cell - width).abs() > GRID_FIT_TOL * width.max(1.0) {
                return Err(GeometryError::NotAMultiple { dim, width, cell });
            }
            counts.push(count as usize);
        }
        Ok(Self {
            bounds,
            radii,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.radii.len()
    }

    pub fn bounds(&self) -> &Hyperrect {
        &self.bounds
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.radii.iter().map(|r| 2.0 * r).product()
    }

    fn coord_center(&self, dim: usize, j: usize) -> f64 {
        self.bounds.lower[dim] + (2 * j + 1) as f64 * self.radii[dim]
    }

    /// Splits a flat index into per-dimension indices.
    pub fn unflatten(&self, index: usize) -> Result<Vec<usize>, GeometryError> {
        if index >= self.len() {
            return Err(GeometryError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let mut rest = index;
        Ok(self
            .counts
            .iter()
            .map(|&c| {
                let j = rest % c;
                rest /= c;
                j
            })
            .collect())
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        let mut stride = 1;
        for (j, c) in multi.iter().zip(&self.counts) {
            flat += j * stride;
            stride *= c;
        }
        flat
    }

    pub fn cell_center(&self, index: usize) -> Result<Vec<f64>, GeometryError> {
        let multi = self.unflatten(index)?;
        Ok(multi
            .iter()
            .enumerate()
            .map(|(d, &j)| self.coord_center(d, j))
            .collect())
    }

    pub fn cell_box(&self, index: usize) -> Result<Hyperrect, GeometryError> {
        Ok(Hyperrect::ball(&self.cell_center(index)?, &self.radii))
    }

    /// Cell containing `point`. Shared faces belong to the cell with the
    /// larger index; the upper face of the box belongs to the last cell.
    pub fn point_to_cell(&self, point: &[f64]) -> Option<usize> {
        if !self.bounds.contains(point) {
            return None;
        }
        let mut flat = 0;
        let mut stride = 1;
        for d in 0..self.dim() {
            let offset = (point[d] - self.bounds.lower[d]) / (2.0 * self.radii[d]);
            let j = (offset.floor() as usize).min(self.counts[d] - 1);
            flat += j * stride;
            stride *= self.counts[d];
        }
        Some(flat)
    }

    /// Cells whose closed cell box meets the infinity-norm ball `Ω_radius(center)`.
    /// `clipped` is set when the ball reaches outside the grid box.
    pub fn cells_overlapping_ball(&self, center: &[f64], radius: &[f64]) -> (CellRange, bool) {
        let n = self.dim();
        let mut lo = vec![0; n];
        let mut hi = vec![0; n];
        let mut clipped = false;
        let mut empty = false;
        for d in 0..n {
            let (c, rho, eta) = (center[d], radius[d], self.radii[d]);
            let lower = self.bounds.lower[d];
            if c - rho < lower || c + rho > self.bounds.upper[d] {
                clipped = true;
            }
            let hits = |j: i64| -> bool {
                j >= 0
                    && (j as usize) < self.counts[d]
                    && (c - self.coord_center(d, j as usize)).abs() - eta <= rho
            };
            let last = self.counts[d] as i64 - 1;
            let mut a = (((c - rho - lower) / (2.0 * eta)) - 1.0).ceil().clamp(-1.0, last as f64 + 1.0) as i64;
            let mut b = ((c + rho - lower) / (2.0 * eta)).floor().clamp(-1.0, last as f64 + 1.0) as i64;
            // Snap endpoints onto the exact membership test.
            while a > 0 && hits(a - 1) {
                a -= 1;
            }
            while a <= b && !hits(a) {
                a += 1;
            }
            while b < last && hits(b + 1) {
                b += 1;
            }
            while b >= a && !hits(b) {
                b -= 1;
            }
            if a > b {
                empty = true;
                lo[d] = 0;
                hi[d] = 0;
            } else {
                lo[d] = a as usize;
                hi[d] = b as usize;
            }
        }
        (
            CellRange {
                lo,
                hi,
                counts: self.counts.clone(),
                empty,
            },
            clipped,
        )
    }

    /// Same box, half the radius, twice the cells per dimension.
    pub fn refine(&self) -> UniformGrid {
        UniformGrid {
            bounds: self.bounds.clone(),
            radii: self.radii.iter().map(|r| r / 2.0).collect(),
            counts: self.counts.iter().map(|c| c * 2).collect(),
        }
    }

    /// Coarse cell containing a point (typically a fine-cell center).
    pub fn parent_cell(&self, fine_center: &[f64]) -> Result<usize, GeometryError> {
        self.point_to_cell(fine_center)
            .ok_or(GeometryError::OutOfDomain)
    }

    /// Number of `refine` steps taking `self` to `fine`, if `fine` is such a refinement.
    pub fn refinement_depth(&self, fine: &UniformGrid) -> Option<u32> {
        if fine.bounds != self.bounds || fine.dim() != self.dim() {
            return None;
        }
        let ratio = fine.counts[0] / self.counts[0];
        if ratio == 0 || !ratio.is_power_of_two() {
            return None;
        }
        let consistent = self
            .counts
            .iter()
            .zip(&fine.counts)
            .all(|(c, f)| c * ratio == *f)
            && self
                .radii
                .iter()
                .zip(&fine.radii)
                .all(|(c, f)| ((c / ratio as f64) - f).abs() <= 1e-12 * c);
        consistent.then(|| ratio.trailing_zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(eta: f64) -> UniformGrid {
        UniformGrid::new(Hyperrect::new(vec![0.0], vec![1.0]).unwrap(), vec![eta]).unwrap()
    }

    fn brute_force(grid: &UniformGrid, center: &[f64], radius: &[f64]) -> Vec<usize> {
        (0..grid.len())
            .filter(|&k| {
                let cc = grid.cell_center(k).unwrap();
                (0..grid.dim())
                    .all(|i| (center[i] - cc[i]).abs() - grid.radii()[i] <= radius[i])
            })
            .collect()
    }

    #[test]
    fn centers() {
        assert_eq!(unit_grid(0.25).cell_center(0).unwrap(), vec![0.25]);
        assert_eq!(unit_grid(0.125).cell_center(3).unwrap(), vec![0.875]);
        let g = UniformGrid::new(
            Hyperrect::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(g.counts(), &[5, 5]);
        let g = UniformGrid::new(
            Hyperrect::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            vec![0.5, 0.5],
        )
        .unwrap();
        // 10 cells per row: index 11 is j = (1, 1)
        assert_eq!(g.cell_center(11).unwrap(), vec![1.5, 1.5]);
        assert!(matches!(
            unit_grid(0.25).cell_center(2),
            Err(GeometryError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn hand_layout_with_unit_radius() {
        // [0,10]^2 with unit radius has 5 cells per row; index 11 = (1, 2).
        let g = UniformGrid::new(
            Hyperrect::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(),
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(g.cell_center(11).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn point_lookup_and_ties() {
        let g = unit_grid(0.25);
        assert_eq!(g.point_to_cell(&[0.1]), Some(0));
        assert_eq!(g.point_to_cell(&[0.5]), Some(1));
        assert_eq!(g.point_to_cell(&[1.0]), Some(1));
        assert_eq!(g.point_to_cell(&[0.0]), Some(0));
        assert_eq!(g.point_to_cell(&[1.0001]), None);
        assert_eq!(g.point_to_cell(&[-0.0001]), None);
    }

    #[test]
    fn rejects_non_multiple_boxes() {
        let b = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(
            UniformGrid::new(b.clone(), vec![0.3]),
            Err(GeometryError::NotAMultiple { .. })
        ));
        assert!(matches!(
            UniformGrid::new(b, vec![0.0]),
            Err(GeometryError::BadRadius { .. })
        ));
        assert!(Hyperrect::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn ball_overlap_examples() {
        let g = unit_grid(0.125);
        let (r, clipped) = g.cells_overlapping_ball(&[0.5], &[0.1]);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![1, 2]);
        assert!(!clipped);

        let g = unit_grid(0.25);
        let (r, clipped) = g.cells_overlapping_ball(&[0.9], &[0.3]);
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![1]);
        assert!(clipped);

        for k in 0..4 {
            let g = unit_grid(0.125);
            let c = g.cell_center(k).unwrap();
            let (r, clipped) = g.cells_overlapping_ball(&c, &[0.0]);
            assert_eq!(r.iter().collect::<Vec<_>>(), vec![k]);
            assert!(!clipped);
        }
    }

    #[test]
    fn ball_fully_outside_is_empty_and_clipped() {
        let g = unit_grid(0.25);
        let (r, clipped) = g.cells_overlapping_ball(&[3.0], &[0.1]);
        assert!(r.is_empty());
        assert_eq!(r.len(), 0);
        assert!(clipped);
    }

    #[test]
    fn refine_and_parent() {
        let g = unit_grid(0.25);
        let f = g.refine();
        assert_eq!(f.radii(), &[0.125]);
        assert_eq!(f.counts(), &[4]);
        assert_eq!(g.refine().refine().radii(), &[0.0625]);
        assert_eq!(g.refinement_depth(&g), Some(0));
        assert_eq!(g.refinement_depth(&f.refine()), Some(2));
        for k in 0..f.len() {
            let c = f.cell_center(k).unwrap();
            let p = g.parent_cell(&c).unwrap();
            assert!(g.cell_box(p).unwrap().contains_box(&f.cell_box(k).unwrap()));
        }
        assert_eq!(g.parent_cell(&g.cell_center(1).unwrap()).unwrap(), 1);
        assert_eq!(g.parent_cell(&[2.0]), Err(GeometryError::OutOfDomain));
    }

    #[test]
    fn tiling_volume() {
        let g = UniformGrid::new(
            Hyperrect::new(vec![0.65, 4.95], vec![1.65, 5.95]).unwrap(),
            vec![0.025, 0.05],
        )
        .unwrap();
        let total = g.len() as f64 * g.cell_volume();
        assert!((total - g.bounds().volume()).abs() <= 1e-9 * g.bounds().volume());
    }

    proptest! {
        #[test]
        fn round_trip(counts in prop::collection::vec(1usize..7, 1..4), seed in 0usize..1000) {
            let n = counts.len();
            let lower: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * 0.3).collect();
            let radii: Vec<f64> = (0..n).map(|i| 0.1 + 0.05 * i as f64).collect();
            let upper: Vec<f64> = (0..n).map(|i| lower[i] + 2.0 * radii[i] * counts[i] as f64).collect();
            let g = UniformGrid::new(Hyperrect::new(lower, upper).unwrap(), radii).unwrap();
            let k = seed % g.len();
            let c = g.cell_center(k).unwrap();
            prop_assert_eq!(g.point_to_cell(&c), Some(k));
            prop_assert!(g.bounds().contains(&c));
        }

        #[test]
        fn overlap_matches_brute_force(
            cx in -0.3f64..1.3, cy in -0.3f64..1.3,
            rx in 0.0f64..0.6, ry in 0.0f64..0.6,
            snap in 0usize..3,
        ) {
            let g = UniformGrid::new(
                Hyperrect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
                vec![0.05, 0.125],
            ).unwrap();
            // snap some radii onto exact tie values
            let (rx, ry) = match snap {
                0 => (rx, ry),
                1 => ((rx * 10.0).round() / 10.0, (ry * 4.0).round() / 4.0),
                _ => (0.0, 0.0),
            };
            let center = [cx, cy];
            let radius = [rx, ry];
            let (range, clipped) = g.cells_overlapping_ball(&center, &radius);
            let mut got: Vec<usize> = range.iter().collect();
            got.sort_unstable();
            prop_assert_eq!(got, brute_force(&g, &center, &radius));
            let exits = cx - rx < 0.0 || cx + rx > 1.0 || cy - ry < 0.0 || cy + ry > 1.0;
            prop_assert_eq!(clipped, exits);
        }
    }
}
