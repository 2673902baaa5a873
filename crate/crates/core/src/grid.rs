//! Uniform Cartesian lattice on the box `[-L, L]^dim`.

use crate::error::{PmedError, Result};

/// Smallest admissible number of cells per axis.
pub const MIN_CELLS: usize = 8;

/// Cell-centred grid with equal spacing on every axis.
///
/// Cells are stored row-major with the x index fastest:
/// `index = iy * n + ix` in 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    spacing: f64,
    half_width: f64,
    cells_per_axis: usize,
}

impl Grid {
    /// `half_width / spacing` must resolve to an integer cell count (up to rounding).
    pub fn new(dim: usize, half_width: f64, spacing: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(PmedError::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(PmedError::InvalidGrid(format!("spacing must be > 0, got {spacing}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(PmedError::InvalidGrid(format!(
                "half-width must be > 0, got {half_width}"
            )));
        }
        let ratio = 2.0 * half_width / spacing;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(PmedError::InvalidGrid(format!(
                "2L/h = {ratio} is not an integer"
            )));
        }
        let n = n as usize;
        if n < MIN_CELLS {
            return Err(PmedError::InvalidGrid(format!(
                "need at least {MIN_CELLS} cells per axis, got {n}"
            )));
        }
        Ok(Self {
            dim,
            spacing,
            half_width,
            cells_per_axis: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Coordinate of the centre of cell `i` along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing
    }

    /// Nearest axis index for a coordinate (clamped to the grid).
    pub fn axis_index(&self, x: f64) -> usize {
        let i = ((x + self.half_width) / self.spacing - 0.5).round();
        i.clamp(0.0, (self.cells_per_axis - 1) as f64) as usize
    }

    /// Per-axis indices of a flat cell index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n = self.cells_per_axis;
        match self.dim {
            1 => [idx, 0],
            _ => [idx % n, idx / n],
        }
    }

    pub fn flat_index(&self, ix: usize, iy: usize) -> usize {
        match self.dim {
            1 => ix,
            _ => iy * self.cells_per_axis + ix,
        }
    }

    /// Cell centre as a 2-vector; the second component is 0 in 1D.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let [ix, iy] = self.multi_index(idx);
        match self.dim {
            1 => [self.center(ix), 0.0],
            _ => [self.center(ix), self.center(iy)],
        }
    }

    /// Flat-index stride for one step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.cells_per_axis
        }
    }

    /// Distance in cells from `idx` to the nearest box face.
    pub fn edge_distance(&self, idx: usize) -> usize {
        let n = self.cells_per_axis;
        let [ix, iy] = self.multi_index(idx);
        let dx = ix.min(n - 1 - ix);
        match self.dim {
            1 => dx,
            _ => dx.min(iy.min(n - 1 - iy)),
        }
    }

    /// Flat indices of the neighbours of `idx` (up to `2 * dim`).
    pub fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.cells_per_axis;
        let mi = self.multi_index(idx);
        (0..self.dim).flat_map(move |axis| {
            let s = self.stride(axis);
            let lo = (mi[axis] > 0).then(|| idx - s);
            let hi = (mi[axis] + 1 < n).then(|| idx + s);
            lo.into_iter().chain(hi)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::new(3, 1.0, 0.1).is_err());
        assert!(Grid::new(1, 1.0, 0.0).is_err());
        assert!(Grid::new(1, -1.0, 0.1).is_err());
        assert!(Grid::new(1, 1.0, 0.3).is_err());
        assert!(Grid::new(1, 1.0, 0.5).is_err());
        assert_eq!(Grid::new(1, 4.0, 0.05).unwrap().cells_per_axis(), 160);
    }

    #[test]
    fn centres_round_trip() {
        let g = Grid::new(2, 3.0, 0.1).unwrap();
        for i in 0..g.cells_per_axis() {
            let x = g.center(i);
            assert_eq!(g.axis_index(x), i);
            let expected = -3.0 + (i as f64 + 0.5) * 0.1;
            assert!((x - expected).abs() <= 4.0 * f64::EPSILON * 3.0);
        }
        for idx in [0, 17, 899, g.len() - 1] {
            let [ix, iy] = g.multi_index(idx);
            assert_eq!(g.flat_index(ix, iy), idx);
        }
    }

    #[test]
    fn edges_and_neighbours() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        assert_eq!(g.edge_distance(0), 0);
        assert_eq!(g.edge_distance(g.flat_index(3, 4)), 3);
        assert_eq!(g.neighbours(0).count(), 2);
        assert_eq!(g.neighbours(g.flat_index(3, 3)).count(), 4);
    }
}
