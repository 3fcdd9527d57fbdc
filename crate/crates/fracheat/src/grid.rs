//! Uniform time grid and sampled scalar paths on it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform partition of [0, T] with N steps (N+1 nodes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, N + 1.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.steps as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Grid with the step count doubled (refinement studies).
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * 2,
        }
    }
}

/// A scalar function of time sampled at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl CoefficientPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "path has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("path contains non-finite value {bad}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().iter().map(|&t| f(t)).collect())
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// sup |self - other|.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// self + scale·other.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Self::new(self.grid, values)
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch(
                "paths live on different grids".to_string(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_are_uniform() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.len(), 5);
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
    }

    #[test]
    fn path_length_must_match() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        assert!(CoefficientPath::new(g, vec![1.0, 2.0]).is_err());
        assert!(CoefficientPath::new(g, vec![1.0, f64::NAN, 2.0]).is_err());
        let p = CoefficientPath::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.min(), 1.0);
        assert_eq!(p.max(), 3.0);
    }

    #[test]
    fn arithmetic_helpers() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let a = CoefficientPath::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        let b = CoefficientPath::new(g, vec![0.5, 0.5, 0.5]).unwrap();
        let c = a.add_scaled(&b, 2.0).unwrap();
        assert_eq!(c.values(), &[2.0, 3.0, 4.0]);
        assert_eq!(a.sup_distance(&b).unwrap(), 2.5);
    }
}
