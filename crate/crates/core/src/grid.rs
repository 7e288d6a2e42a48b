//! Uniform node-centered grids on intervals and rectangles.
//!
//! Fields living on a grid are flat `Vec<f64>` in row-major order: the x
//! index runs fastest, so node `(i, j)` sits at `j * nx + i`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Closed interval `[lo, hi]` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub lo: f64,
    pub hi: f64,
}

impl Extent {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    Boundary,
}

/// Discrete geometry of an interval or a rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    extents: Vec<Extent>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
}

impl GridDomain {
    /// Builds a 1D or 2D grid; every axis needs at least three nodes.
    pub fn new(extents: &[Extent], points_per_axis: &[usize]) -> Result<Self> {
        if extents.is_empty() || extents.len() > 2 {
            return Err(LabError::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                extents.len()
            )));
        }
        if extents.len() != points_per_axis.len() {
            return Err(LabError::InvalidGrid(format!(
                "{} extents but {} point counts",
                extents.len(),
                points_per_axis.len()
            )));
        }
        let mut spacing = Vec::with_capacity(extents.len());
        for (axis, (e, &n)) in extents.iter().zip(points_per_axis).enumerate() {
            if n < 3 {
                return Err(LabError::InvalidGrid(format!(
                    "axis {axis}: need at least 3 points for an interior node, got {n}"
                )));
            }
            if !(e.lo.is_finite() && e.hi.is_finite()) || e.hi <= e.lo {
                return Err(LabError::InvalidGrid(format!(
                    "axis {axis}: degenerate extent [{}, {}]",
                    e.lo, e.hi
                )));
            }
            spacing.push((e.hi - e.lo) / (n - 1) as f64);
        }
        Ok(Self {
            extents: extents.to_vec(),
            counts: points_per_axis.to_vec(),
            spacing,
        })
    }

    pub fn interval(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(&[Extent::new(lo, hi)], &[n])
    }

    pub fn rectangle(x: Extent, y: Extent, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[x, y], &[nx, ny])
    }

    pub fn unit_interval(n: usize) -> Result<Self> {
        Self::interval(0.0, 1.0, n)
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::rectangle(Extent::unit(), Extent::unit(), n, n)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn extents(&self) -> &[Extent] {
        &self.extents
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn nx(&self) -> usize {
        self.counts[0]
    }

    pub fn ny(&self) -> usize {
        if self.dim() == 2 {
            self.counts[1]
        } else {
            1
        }
    }

    pub fn hx(&self) -> f64 {
        self.spacing[0]
    }

    pub fn hy(&self) -> f64 {
        if self.dim() == 2 {
            self.spacing[1]
        } else {
            f64::NAN
        }
    }

    /// Smallest spacing over all axes.
    pub fn h_min(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Volume element of the node quadrature (`h` or `hx * hy`).
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    /// Inverse of [`GridDomain::index`].
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx(), idx / self.nx())
    }

    /// Node coordinate along one axis; the last node lands on `hi` exactly.
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let e = self.extents[axis];
        if i + 1 == self.counts[axis] {
            e.hi
        } else {
            e.lo + self.spacing[axis] * i as f64
        }
    }

    /// Physical coordinates of a node (`y` is 0 in 1D).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        let x = self.axis_coord(0, i);
        let y = if self.dim() == 2 { self.axis_coord(1, j) } else { 0.0 };
        [x, y]
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        let (i, j) = self.ij(idx);
        let on_x = i == 0 || i + 1 == self.nx();
        let on_y = self.dim() == 2 && (j == 0 || j + 1 == self.ny());
        if on_x || on_y {
            NodeKind::Boundary
        } else {
            NodeKind::Interior
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.kind(idx) == NodeKind::Boundary
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.is_boundary(k)).collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_boundary(k)).collect()
    }

    pub fn interior_count(&self) -> usize {
        self.counts.iter().map(|n| n - 2).product()
    }

    /// Distance from a node to the nearest face.
    ///
    /// Computed from index offsets times spacing so that coinciding nodes of
    /// nested grids produce identical bits.
    pub fn distance_at(&self, idx: usize) -> f64 {
        if self.is_boundary(idx) {
            return 0.0;
        }
        let (i, j) = self.ij(idx);
        let along = |axis: usize, k: usize| {
            let n = self.counts[axis];
            let h = self.spacing[axis];
            let lo = h * k as f64;
            let hi = h * (n - 1 - k) as f64;
            lo.min(hi)
        };
        let mut d = along(0, i);
        if self.dim() == 2 {
            d = d.min(along(1, j));
        }
        d
    }

    /// Samples `f(x, y)` at every node (`y = 0` in 1D).
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let [x, y] = self.coords(k);
                f(x, y)
            })
            .collect()
    }

    /// Trapezoid-rule weights, scaled by the cell volume.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let axis_w = |axis: usize, k: usize| {
            let n = self.counts[axis];
            let h = self.spacing[axis];
            if k == 0 || k + 1 == n {
                0.5 * h
            } else {
                h
            }
        };
        (0..self.len())
            .map(|idx| {
                let (i, j) = self.ij(idx);
                let mut w = axis_w(0, i);
                if self.dim() == 2 {
                    w *= axis_w(1, j);
                }
                w
            })
            .collect()
    }

    pub fn same_shape(&self, other: &GridDomain) -> bool {
        self.counts == other.counts && self.extents == other.extents
    }
}

/// Distance-to-boundary field `δ(x)`, zero on boundary nodes.
pub fn boundary_distance(grid: &GridDomain) -> Vec<f64> {
    (0..grid.len()).map(|k| grid.distance_at(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_interval() {
        let g = GridDomain::unit_interval(3).unwrap();
        assert_eq!(g.hx(), 0.5);
        let xs: Vec<f64> = (0..3).map(|k| g.coords(k)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert_eq!(g.interior_indices(), vec![1]);
    }

    #[test]
    fn five_by_five_square() {
        let g = GridDomain::unit_square(5).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.interior_indices().len(), 9);
        assert_eq!(g.interior_count(), 9);
        assert_eq!(g.hx(), 0.25);
        assert_eq!(g.hy(), 0.25);
    }

    #[test]
    fn interval_of_length_two() {
        let g = GridDomain::interval(0.0, 2.0, 5).unwrap();
        assert_eq!(g.hx(), 0.5);
        let interior: Vec<f64> = g.interior_indices().iter().map(|&k| g.coords(k)[0]).collect();
        assert_eq!(interior, vec![0.5, 1.0, 1.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GridDomain::unit_interval(2).is_err());
        assert!(GridDomain::interval(1.0, 1.0, 5).is_err());
        assert!(GridDomain::interval(1.0, 0.0, 5).is_err());
        assert!(GridDomain::new(&[], &[]).is_err());
        assert!(GridDomain::new(&[Extent::unit()], &[3, 3]).is_err());
    }

    #[test]
    fn distance_examples() {
        let g = GridDomain::unit_interval(11).unwrap();
        let d = boundary_distance(&g);
        assert!((d[3] - 0.3).abs() < 1e-15);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[10], 0.0);

        let sq = GridDomain::unit_square(5).unwrap();
        let k = sq.index(1, 2);
        assert_eq!(sq.coords(k), [0.25, 0.5]);
        assert_eq!(sq.distance_at(k), 0.25);
        for k in sq.boundary_indices() {
            assert_eq!(sq.distance_at(k), 0.0);
        }
    }

    #[test]
    fn distance_is_one_lipschitz() {
        let g = GridDomain::rectangle(Extent::new(0.0, 2.0), Extent::new(-1.0, 0.5), 13, 9).unwrap();
        let d = boundary_distance(&g);
        for a in 0..g.len() {
            for b in 0..g.len() {
                let [xa, ya] = g.coords(a);
                let [xb, yb] = g.coords(b);
                let dist = ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt();
                assert!((d[a] - d[b]).abs() <= dist + 1e-14);
            }
        }
    }

    #[test]
    fn refinement_keeps_distance_bits() {
        let coarse = GridDomain::interval(0.0, 1.3, 14).unwrap();
        let fine = GridDomain::interval(0.0, 1.3, 27).unwrap();
        for i in 0..14 {
            assert_eq!(coarse.distance_at(i).to_bits(), fine.distance_at(2 * i).to_bits());
        }
        let c2 = GridDomain::unit_square(9).unwrap();
        let f2 = GridDomain::unit_square(17).unwrap();
        for j in 0..9 {
            for i in 0..9 {
                let a = c2.distance_at(c2.index(i, j));
                let b = f2.distance_at(f2.index(2 * i, 2 * j));
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn trapezoid_weights_integrate_constants() {
        let g = GridDomain::rectangle(Extent::new(0.0, 2.0), Extent::new(0.0, 3.0), 7, 5).unwrap();
        let total: f64 = g.trapezoid_weights().iter().sum();
        assert!((total - 6.0).abs() < 1e-12);
    }
}
