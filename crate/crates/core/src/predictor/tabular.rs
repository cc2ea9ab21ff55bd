//! Piecewise-constant regression on a regular grid.
//!
//! The unrestricted least-squares fit of a piecewise-constant model is the
//! (weighted) mean of the targets in each cell, so these fits estimate the
//! conditional mean of the target given the cell.

use crate::error::{Error, Result};

/// Uniform partition of `[lo, hi)` into `bins` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::Config(format!("invalid axis [{lo}, {hi}) with {bins} bins")));
        }
        Ok(Self { lo, hi, bins })
    }

    fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        Some((((x - self.lo) / self.width()) as usize).min(self.bins - 1))
    }

    fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }
}

/// A 1-D or 2-D grid; cells are numbered row-major over the axes.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularGrid {
    axes: Vec<Axis>,
}

impl TabularGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config("tabular grids are 1-D or 2-D".into()));
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn cell_of(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.axes.len() {
            return None;
        }
        let mut idx = 0;
        for (a, &x) in self.axes.iter().zip(point) {
            idx = idx * a.bins + a.index(x)?;
        }
        Some(idx)
    }

    pub fn cell_center(&self, mut cell: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            out[k] = a.center(cell % a.bins);
            cell /= a.bins;
        }
        out
    }
}

/// One regression example.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Streaming accumulator of per-cell weighted target sums.
#[derive(Debug, Clone)]
pub struct TabularAccumulator {
    grid: TabularGrid,
    target_dim: usize,
    weighted_sum: Vec<f64>,
    weight_sum: Vec<f64>,
    counts: Vec<usize>,
}

impl TabularAccumulator {
    pub fn new(grid: TabularGrid, target_dim: usize) -> Self {
        let cells = grid.num_cells();
        Self {
            grid,
            target_dim,
            weighted_sum: vec![0.0; cells * target_dim],
            weight_sum: vec![0.0; cells * target_dim],
            counts: vec![0; cells],
        }
    }

    pub fn add(&mut self, input: &[f64], target: &[f64]) -> Result<()> {
        let ones = vec![1.0; self.target_dim];
        self.add_weighted(input, target, &ones)
    }

    /// Adds an example whose squared error on coordinate `k` carries weight
    /// `weights[k]`. Points outside the grid are ignored.
    pub fn add_weighted(&mut self, input: &[f64], target: &[f64], weights: &[f64]) -> Result<()> {
        if target.len() != self.target_dim || weights.len() != self.target_dim {
            return Err(Error::Dimension(format!(
                "expected {}-dimensional targets and weights",
                self.target_dim
            )));
        }
        if input.len() != self.grid.dim() {
            return Err(Error::Dimension(format!(
                "expected {}-dimensional inputs, got {}",
                self.grid.dim(),
                input.len()
            )));
        }
        if let Some(cell) = self.grid.cell_of(input) {
            let base = cell * self.target_dim;
            for k in 0..self.target_dim {
                self.weighted_sum[base + k] += weights[k] * target[k];
                self.weight_sum[base + k] += weights[k];
            }
            self.counts[cell] += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> TabularField {
        let d = self.target_dim;
        let values = (0..self.grid.num_cells())
            .map(|c| {
                (self.counts[c] > 0).then(|| {
                    (0..d)
                        .map(|k| self.weighted_sum[c * d + k] / self.weight_sum[c * d + k])
                        .collect()
                })
            })
            .collect();
        TabularField {
            grid: self.grid,
            values,
            counts: self.counts,
        }
    }
}

/// Fitted piecewise-constant field. Cells that received no samples are undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularField {
    pub grid: TabularGrid,
    pub values: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl TabularField {
    pub fn evaluate(&self, point: &[f64]) -> Option<&[f64]> {
        self.values[self.grid.cell_of(point)?].as_deref()
    }

    pub fn count_at(&self, point: &[f64]) -> usize {
        self.grid.cell_of(point).map_or(0, |c| self.counts[c])
    }
}

/// Unweighted least-squares fit: per-cell mean of the targets.
pub fn tabular_predictor_fit(grid: &TabularGrid, samples: &[TabularSample]) -> Result<TabularField> {
    let dim = samples.first().map_or(1, |s| s.target.len());
    let mut acc = TabularAccumulator::new(grid.clone(), dim);
    for s in samples {
        acc.add(&s.input, &s.target)?;
    }
    Ok(acc.finish())
}
