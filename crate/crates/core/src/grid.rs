//! Regular grids and d-multilinear interpolation.

use crate::error::{Error, Result};
use crate::problem::BoxDomain;

/// Largest state dimension supported by the grid routines.
pub const MAX_DIM: usize = 6;

/// Regular grid `N₁ × … × N_d` over a box.
///
/// Node coordinates are exactly `lower + index·k` per axis. Nodes are stored
/// with the first axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    counts: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    total: usize,
}

impl Grid {
    /// Grid with the same cell size `k` along every axis.
    pub fn uniform(domain: &BoxDomain, counts: &[usize]) -> Result<Grid> {
        let grid = Grid::anisotropic(domain, counts)?;
        let k0 = grid.spacing[0];
        if grid.spacing.iter().any(|k| (k - k0).abs() > 1e-12 * k0) {
            return Err(Error::NonUniformSpacing { spacings: grid.spacing.clone() });
        }
        Ok(grid)
    }

    /// Grid with per-axis cell sizes `(upperᵢ − lowerᵢ)/(Nᵢ − 1)`.
    pub fn anisotropic(domain: &BoxDomain, counts: &[usize]) -> Result<Grid> {
        let d = domain.dim();
        if counts.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: counts.len() });
        }
        if d > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dimension {d} exceeds {MAX_DIM}")));
        }
        if counts.iter().any(|&n| n < 2) {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes per axis, got {counts:?}")));
        }
        let spacing: Vec<f64> = (0..d).map(|i| (domain.upper[i] - domain.lower[i]) / (counts[i] - 1) as f64).collect();
        let mut strides = vec![1; d];
        for i in 1..d {
            strides[i] = strides[i - 1] * counts[i - 1];
        }
        let total = counts.iter().product();
        Ok(Grid {
            counts: counts.to_vec(),
            lower: domain.lower.clone(),
            upper: domain.upper.clone(),
            spacing,
            strides,
            total,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Cell size; the largest per-axis spacing on anisotropic grids.
    pub fn k(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_uniform(&self) -> bool {
        let k0 = self.spacing[0];
        self.spacing.iter().all(|k| (k - k0).abs() <= 1e-12 * k0)
    }

    pub fn node_count(&self) -> usize {
        self.total
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain { lower: self.lower.clone(), upper: self.upper.clone() }
    }

    pub fn multi_index(&self, mut i: usize, out: &mut [usize]) {
        for (a, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = i % self.counts[a];
            i /= self.counts[a];
        }
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn coord_into(&self, i: usize, out: &mut [f64]) {
        let mut rest = i;
        for a in 0..self.dim() {
            let j = rest % self.counts[a];
            rest /= self.counts[a];
            out[a] = self.lower[a] + j as f64 * self.spacing[a];
        }
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coord_into(i, &mut x);
        x
    }

    /// Point-in-box test with a round-off allowance of `1e-12` cells.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| {
            let tol = 1e-12 * self.spacing[a];
            x[a] >= self.lower[a] - tol && x[a] <= self.upper[a] + tol
        })
    }

    /// d-multilinear interpolation of node values; `None` outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let d = self.dim();
        if !self.contains(x) {
            return None;
        }
        let mut base = 0usize;
        let mut frac = [0.0f64; MAX_DIM];
        for a in 0..d {
            let s = ((x[a] - self.lower[a]) / self.spacing[a]).max(0.0);
            let cell = (s.floor() as usize).min(self.counts[a] - 2);
            frac[a] = (s - cell as f64).clamp(0.0, 1.0);
            base += cell * self.strides[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += self.strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        Some(acc)
    }
}
