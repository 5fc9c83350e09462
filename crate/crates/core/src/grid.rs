//! Periodic box discretization and 3-d FFT plumbing.
//!
//! Fields live on the uniform N^3 grid over [0, L)^3, stored flat with the
//! z index fastest: `idx = (ix * N + iy) * N + iz`. Dual frequencies are
//! `k / L` with integer components in [-N/2, N/2).

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Discretization parameters of the periodic box and the time mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    /// Side length L of the box [0, L)^3.
    pub box_length: f64,
    /// Number of points per axis (even).
    pub points_per_axis: usize,
    /// Time step.
    pub dt: f64,
    /// Number of time steps; the horizon is `dt * n_steps`.
    pub n_steps: usize,
}

impl PeriodicGrid {
    pub fn new(box_length: f64, points_per_axis: usize, dt: f64, n_steps: usize) -> Result<Self> {
        let grid = Self { box_length, points_per_axis, dt, n_steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.box_length > 0.0) || !self.box_length.is_finite() {
            return Err(Error::Config(format!("box_length must be positive, got {}", self.box_length)));
        }
        if self.points_per_axis == 0 || self.points_per_axis % 2 != 0 {
            return Err(Error::Config(format!(
                "points_per_axis must be a positive even integer, got {}",
                self.points_per_axis
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.points_per_axis
    }

    #[inline]
    pub fn cells(&self) -> usize {
        let n = self.points_per_axis;
        n * n * n
    }

    /// Physical spacing between grid points.
    #[inline]
    pub fn spacing(&self) -> f64 {
        self.box_length / self.points_per_axis as f64
    }

    /// Volume element of one grid cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// Simulated horizon T = dt * n_steps.
    #[inline]
    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let n = self.points_per_axis;
        (ix * n + iy) * n + iz
    }

    /// Signed integer frequency for a lattice index, in [-N/2, N/2).
    #[inline]
    pub fn signed_mode(&self, i: usize) -> i64 {
        let n = self.points_per_axis;
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Dual frequency vector xi_k = k / L for a flat cell index.
    pub fn frequency(&self, cell: usize) -> [f64; 3] {
        let n = self.points_per_axis;
        let iz = cell % n;
        let iy = (cell / n) % n;
        let ix = cell / (n * n);
        [
            self.signed_mode(ix) as f64 / self.box_length,
            self.signed_mode(iy) as f64 / self.box_length,
            self.signed_mode(iz) as f64 / self.box_length,
        ]
    }

    /// Position of a grid point.
    pub fn position(&self, cell: usize) -> [f64; 3] {
        let n = self.points_per_axis;
        let iz = cell % n;
        let iy = (cell / n) % n;
        let ix = cell / (n * n);
        let h = self.spacing();
        [ix as f64 * h, iy as f64 * h, iz as f64 * h]
    }

    /// Minimum-image distance between two points of the box.
    pub fn periodic_distance(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        let l = self.box_length;
        let mut acc = 0.0;
        for d in 0..3 {
            let mut t = (a[d] - b[d]).abs() % l;
            if t > l / 2.0 {
                t = l - t;
            }
            acc += t * t;
        }
        acc.sqrt()
    }

    /// Flat index of the Hermitian partner cell (-k mod N per axis).
    #[inline]
    pub fn conjugate_cell(&self, cell: usize) -> usize {
        let n = self.points_per_axis;
        let iz = cell % n;
        let iy = (cell / n) % n;
        let ix = cell / (n * n);
        let neg = |i: usize| if i == 0 { 0 } else { n - i };
        (neg(ix) * n + neg(iy)) * n + neg(iz)
    }
}

/// Real scalar field on the grid (one time slice).
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    /// Wrap raw values; rejects non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self { values: vec![0.0; grid.cells()] }
    }

    pub fn constant(grid: &PeriodicGrid, value: f64) -> Self {
        Self { values: vec![value; grid.cells()] }
    }

    /// Evaluate a pointwise function of the position.
    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.cells()).map(|c| f(grid.position(c))).collect();
        Self::new(values)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_len(&self, grid: &PeriodicGrid) -> Result<()> {
        if self.values.len() != grid.cells() {
            return Err(Error::GridMismatch { expected: grid.cells(), got: self.values.len() });
        }
        Ok(())
    }
}

/// Three-dimensional complex FFT on flat buffers, one plan per axis length.
///
/// The forward transform is `sum_j f_j exp(-2 pi i k.j / N)` and the inverse
/// is unnormalized (`sum_k F_k exp(+2 pi i k.j / N)`); callers divide by N^3
/// where needed.
pub struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            line: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// Unnormalized inverse transform.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    fn transform(&mut self, data: &mut [Complex64], forward: bool) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n, "buffer does not match the grid");
        let plan = if forward { &self.forward } else { &self.inverse };

        // z axis: contiguous rows
        for row in data.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut self.scratch);
        }
        // y axis: stride n
        for ix in 0..n {
            for iz in 0..n {
                let base = ix * n * n + iz;
                for iy in 0..n {
                    self.line[iy] = data[base + iy * n];
                }
                plan.process_with_scratch(&mut self.line, &mut self.scratch);
                for iy in 0..n {
                    data[base + iy * n] = self.line[iy];
                }
            }
        }
        // x axis: stride n^2
        for iy in 0..n {
            for iz in 0..n {
                let base = iy * n + iz;
                for ix in 0..n {
                    self.line[ix] = data[base + ix * n * n];
                }
                plan.process_with_scratch(&mut self.line, &mut self.scratch);
                for ix in 0..n {
                    data[base + ix * n * n] = self.line[ix];
                }
            }
        }
    }
}

impl Clone for Fft3 {
    fn clone(&self) -> Self {
        Fft3::new(self.n)
    }
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}
