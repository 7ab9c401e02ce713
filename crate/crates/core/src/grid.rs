//! Positioner sampling grids and their traversal orders.

use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::model::Position3;

/// A rectangular lattice in the horizontal plane at height `origin.z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    /// Node `(0, 0)`; the grid grows towards `+x` and `+y`.
    pub origin: Position3,
    pub x_extent_mm: f64,
    pub y_extent_mm: f64,
    pub resolution_mm: f64,
    pub positioner_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Traversal {
    /// Every row scanned along `+x`.
    #[default]
    Raster,
    /// Alternate rows reversed (boustrophedon).
    Serpentine,
}

impl FromStr for Traversal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raster" => Ok(Traversal::Raster),
            "serpentine" => Ok(Traversal::Serpentine),
            other => Err(invalid(format!("unknown traversal `{other}`"))),
        }
    }
}

/// Nodes along an axis; tolerates extents that are an integer multiple of
/// the resolution up to float noise.
fn axis_nodes(extent: f64, resolution: f64) -> usize {
    ((extent / resolution) + 1e-9).floor() as usize + 1
}

impl SampleGrid {
    pub fn new(
        origin: Position3,
        x_extent_mm: f64,
        y_extent_mm: f64,
        resolution_mm: f64,
        positioner_id: u8,
    ) -> Result<Self> {
        let grid = Self { origin, x_extent_mm, y_extent_mm, resolution_mm, positioner_id };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid of `nodes x nodes` with the given pitch.
    pub fn square(origin: Position3, nodes: usize, resolution_mm: f64) -> Result<Self> {
        if nodes == 0 {
            return Err(invalid("grid needs at least one node per axis"));
        }
        let extent = (nodes - 1) as f64 * resolution_mm;
        Self::new(origin, extent, extent, resolution_mm, 0)
    }

    /// Square grid of `nodes x nodes` centred on `centre`.
    pub fn centred(centre: Position3, nodes: usize, resolution_mm: f64) -> Result<Self> {
        let half = (nodes.max(1) - 1) as f64 * resolution_mm / 2.0;
        Self::square(centre - Position3::new(half, half, 0.0), nodes, resolution_mm)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.origin.is_finite() {
            return Err(invalid("grid origin must be finite"));
        }
        if !(self.x_extent_mm >= 0.0 && self.y_extent_mm >= 0.0)
            || !self.x_extent_mm.is_finite()
            || !self.y_extent_mm.is_finite()
        {
            return Err(invalid("grid extents must be finite and nonnegative"));
        }
        if !(self.resolution_mm.is_finite() && self.resolution_mm > 0.0) {
            return Err(invalid(format!("grid resolution must be positive, got {}", self.resolution_mm)));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        axis_nodes(self.x_extent_mm, self.resolution_mm)
    }

    pub fn ny(&self) -> usize {
        axis_nodes(self.y_extent_mm, self.resolution_mm)
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, ix: usize, iy: usize) -> Position3 {
        self.origin
            + Position3::new(ix as f64 * self.resolution_mm, iy as f64 * self.resolution_mm, 0.0)
    }

    /// Index pairs `(ix, iy)` in traversal order.
    pub fn indices(&self, order: Traversal) -> Vec<(usize, usize)> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let reversed = order == Traversal::Serpentine && iy % 2 == 1;
            for step in 0..nx {
                let ix = if reversed { nx - 1 - step } else { step };
                out.push((ix, iy));
            }
        }
        out
    }

    /// Grid node closest to `p` in the horizontal plane.
    pub fn nearest_node(&self, p: &Position3) -> (usize, usize) {
        let snap = |offset: f64, n: usize| {
            let i = (offset / self.resolution_mm).round();
            i.clamp(0.0, (n - 1) as f64) as usize
        };
        (snap(p.x - self.origin.x, self.nx()), snap(p.y - self.origin.y, self.ny()))
    }
}

/// Every node of `grid` exactly once, in the requested order.
pub fn grid_positions(grid: &SampleGrid, order: Traversal) -> Vec<Position3> {
    grid.indices(order).into_iter().map(|(ix, iy)| grid.node(ix, iy)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn grid(extent: f64, res: f64) -> SampleGrid {
        SampleGrid::new(Position3::ORIGIN, extent, extent, res, 0).unwrap()
    }

    #[test]
    fn dense_positioner_grid() {
        let g = grid(1250.0, 5.0);
        assert_eq!((g.nx(), g.ny()), (251, 251));
        assert_eq!(grid_positions(&g, Traversal::Raster).len(), 63_001);
    }

    #[test]
    fn degenerate_extent_is_single_point() {
        let origin = Position3::new(3.0, 4.0, 5.0);
        let g = SampleGrid::new(origin, 0.0, 0.0, 5.0, 0).unwrap();
        assert_eq!(grid_positions(&g, Traversal::Serpentine), vec![origin]);
    }

    #[test]
    fn small_grid() {
        assert_eq!(grid_positions(&grid(10.0, 5.0), Traversal::Raster).len(), 9);
    }

    #[test]
    fn serpentine_two_by_two() {
        let g = grid(5.0, 5.0);
        assert_eq!(g.indices(Traversal::Serpentine), vec![(0, 0), (1, 0), (1, 1), (0, 1)]);
    }

    #[test]
    fn invalid_grids() {
        assert!(SampleGrid::new(Position3::ORIGIN, -1.0, 0.0, 5.0, 0).is_err());
        assert!(SampleGrid::new(Position3::ORIGIN, 1.0, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn nearest_node_snaps_and_clamps() {
        let g = grid(100.0, 5.0);
        assert_eq!(g.nearest_node(&Position3::new(12.4, 2.6, 0.0)), (2, 1));
        assert_eq!(g.nearest_node(&Position3::new(-50.0, 500.0, 0.0)), (0, 20));
    }

    proptest! {
        #[test]
        fn count_and_uniqueness(
            xe in 0.0f64..200.0,
            ye in 0.0f64..200.0,
            res in 0.5f64..40.0,
            serp in any::<bool>(),
        ) {
            let g = SampleGrid::new(Position3::ORIGIN, xe, ye, res, 0).unwrap();
            let order = if serp { Traversal::Serpentine } else { Traversal::Raster };
            let idx = g.indices(order);
            let expected = ((xe / res + 1e-9).floor() as usize + 1) * ((ye / res + 1e-9).floor() as usize + 1);
            prop_assert_eq!(idx.len(), expected);
            let unique: HashSet<_> = idx.iter().copied().collect();
            prop_assert_eq!(unique.len(), expected);
        }
    }
}
