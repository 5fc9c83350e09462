//! Spatially correlated, temporally white Gaussian noise and the Hilbert
//! geometry it induces.
//!
//! The spatial covariance is the Riesz kernel `f(x) = a |x|^(-beta)` with
//! `beta` in (0, 2). Its spectral measure has density
//! `a c(beta) |xi|^(beta-3)` where, under the `exp(-2 pi i xi.x)` Fourier
//! convention,
//!
//! ```text
//! c(beta) = pi^(beta - 3/2) Gamma((3 - beta)/2) / Gamma(beta/2).
//! ```
//!
//! On the dual lattice `xi_k = k / L` the measure is discretized per cell.
//! The density is not integrable-sampled at the origin (it diverges like
//! `|xi|^(beta-3)`), so cells near zero carry their exact cell mass
//! `int_cell density` instead of the midpoint value: the midpoint rule with a
//! zeroed origin loses O(L^-beta) of mass, which is far too much for the
//! Parseval checks this crate has to satisfy.

use crate::error::{Error, Result};
use crate::grid::{Fft3, GridFunction, PeriodicGrid};
use crate::rng::{stream, StreamKey};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use statrs::function::gamma::gamma;
use std::sync::Arc;

/// Lattice cells with all integer components within this radius use
/// cell-integrated spectral weights; the rest use the midpoint density.
const REFINE_RADIUS: i64 = 4;

/// The Riesz covariance kernel `f(x) = amplitude * |x|^(-beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialCovariance {
    beta: f64,
    amplitude: f64,
}

impl SpatialCovariance {
    pub fn new(beta: f64) -> Result<Self> {
        Self::with_amplitude(beta, 1.0)
    }

    pub fn with_amplitude(beta: f64, amplitude: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 || beta >= 2.0 {
            return Err(Error::InvalidBeta(beta));
        }
        if !amplitude.is_finite() || amplitude <= 0.0 {
            return Err(Error::Config(format!("covariance amplitude must be positive, got {amplitude}")));
        }
        Ok(Self { beta, amplitude })
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Kernel value f(x) for x != 0.
    pub fn kernel(&self, r: f64) -> f64 {
        self.amplitude * r.powf(-self.beta)
    }

    /// Normalization of the spectral density. Validated against the
    /// real-space kernel by the Parseval tests rather than trusted.
    pub fn riesz_constant(&self) -> f64 {
        let b = self.beta;
        std::f64::consts::PI.powf(b - 1.5) * gamma((3.0 - b) / 2.0) / gamma(b / 2.0)
    }
}

/// Spectral density of the covariance measure at a frequency vector.
///
/// Returns `a c(beta) |xi|^(beta-3)`; the zero frequency maps to 0 and is
/// handled by the cell-integrated lattice weight instead.
pub fn spectral_density(xi: [f64; 3], cov: &SpatialCovariance) -> f64 {
    let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    cov.amplitude() * cov.riesz_constant() * r.powf(cov.beta() - 3.0)
}

/// One time slab of the discretized noise.
///
/// `slab` holds the real field representing `M((t, t+dt], .)` integrated
/// against grid cells; `spectral` is its DFT (kept because the solver works
/// in Fourier space).
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    pub slab: GridFunction,
    pub(crate) spectral: Vec<Complex64>,
    pub seed_tag: StreamKey,
}

#[derive(Debug)]
struct SpectralTables {
    /// |xi_k| per cell.
    freq_norm: Vec<f64>,
    /// Cell mass of the spectral measure (mu of the dual cell).
    weight: Vec<f64>,
    /// Effective density weight * L^3; multiplies a DFT to convolve with f.
    density_eff: Vec<f64>,
}

/// Grid, covariance, and the precomputed lattice tables tying them together.
///
/// Cloning shares the tables and allocates fresh FFT scratch, so replicas can
/// each own an instance without rebuilding the weights.
#[derive(Debug, Clone)]
pub struct SpectralSpace {
    grid: PeriodicGrid,
    cov: SpatialCovariance,
    tables: Arc<SpectralTables>,
    fft: Fft3,
    buf: Vec<Complex64>,
}

impl SpectralSpace {
    pub fn new(grid: PeriodicGrid, cov: SpatialCovariance) -> Result<Self> {
        grid.validate()?;
        let n = grid.n();
        let cells = grid.cells();
        let l = grid.box_length;
        let corner = corner_constant(cov.beta());
        let half = 0.5 / l;
        let scale = cov.amplitude() * cov.riesz_constant();

        let mut freq_norm = vec![0.0; cells];
        let mut weight = vec![0.0; cells];
        for cell in 0..cells {
            let xi = grid.frequency(cell);
            let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            freq_norm[cell] = r;

            let iz = (cell % n) as i64;
            let iy = ((cell / n) % n) as i64;
            let ix = (cell / (n * n)) as i64;
            let k = [signed(ix, n), signed(iy, n), signed(iz, n)];
            let within = k.iter().all(|c| c.abs() <= REFINE_RADIUS);
            weight[cell] = if k == [0, 0, 0] {
                // the singular cell: eight corner cubes touching the origin
                scale * 8.0 * half.powf(cov.beta()) * corner
            } else if within {
                let center = [k[0] as f64 / l, k[1] as f64 / l, k[2] as f64 / l];
                scale * cell_mass(cov.beta(), center, half, 0)
            } else {
                scale * r.powf(cov.beta() - 3.0) / (l * l * l)
            };
        }
        let density_eff = weight.iter().map(|w| w * l * l * l).collect();
        Ok(Self {
            grid,
            cov,
            tables: Arc::new(SpectralTables { freq_norm, weight, density_eff }),
            fft: Fft3::new(n),
            buf: vec![Complex64::default(); cells],
        })
    }

    #[inline]
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    #[inline]
    pub fn covariance(&self) -> &SpatialCovariance {
        &self.cov
    }

    /// |xi_k| table, indexed by flat cell.
    #[inline]
    pub(crate) fn freq_norm(&self) -> &[f64] {
        &self.tables.freq_norm
    }

    /// Spectral cell masses, indexed by flat cell.
    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.tables.weight
    }

    /// Effective density (weight * L^3); multiplying a DFT by this table
    /// convolves the field with the covariance kernel.
    #[inline]
    pub(crate) fn density_eff(&self) -> &[f64] {
        &self.tables.density_eff
    }

    /// Forward DFT of a real field.
    pub(crate) fn to_spectral(&mut self, field: &GridFunction) -> Vec<Complex64> {
        for (slot, &v) in self.buf.iter_mut().zip(field.values()) {
            *slot = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        self.buf.clone()
    }

    /// Real part of the normalized inverse DFT.
    pub(crate) fn to_physical(&mut self, spectral: &[Complex64]) -> Vec<f64> {
        self.buf.copy_from_slice(spectral);
        self.fft.inverse(&mut self.buf);
        let scale = 1.0 / self.grid.cells() as f64;
        self.buf.iter().map(|c| c.re * scale).collect()
    }

    /// Largest |imaginary part| of the normalized inverse DFT, relative to
    /// the field scale; used by realness checks.
    pub(crate) fn imag_defect(&mut self, spectral: &[Complex64]) -> f64 {
        self.buf.copy_from_slice(spectral);
        self.fft.inverse(&mut self.buf);
        let scale = 1.0 / self.grid.cells() as f64;
        let mut max_im: f64 = 0.0;
        let mut max_re: f64 = 0.0;
        for c in &self.buf {
            max_im = max_im.max((c.im * scale).abs());
            max_re = max_re.max((c.re * scale).abs());
        }
        if max_re > 0.0 {
            max_im / max_re
        } else {
            max_im
        }
    }

    /// Covariance inner product `<phi, psi>_H`, evaluated spectrally:
    /// `sum_k w_k Fphi(xi_k) conj(Fpsi(xi_k))` with `Fphi = (L/N)^3 DFT`.
    pub fn h_inner(&mut self, phi: &GridFunction, psi: &GridFunction) -> Result<f64> {
        phi.check_len(&self.grid)?;
        psi.check_len(&self.grid)?;
        let a = self.to_spectral(phi);
        let b = self.to_spectral(psi);
        Ok(self.h_inner_spectral(&a, &b))
    }

    /// Same pairing from precomputed DFTs.
    pub(crate) fn h_inner_spectral(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for (w, (x, y)) in self.tables.weight.iter().zip(a.iter().zip(b.iter())) {
            acc += w * (x * y.conj()).re;
        }
        let n = self.grid.cells() as f64;
        let l3 = self.grid.box_length.powi(3);
        acc * (l3 / n) * (l3 / n)
    }

    /// Squared H_T norm of a space-time field given by one slab per step
    /// (left-endpoint rule in time).
    pub fn ht_norm_sq(&mut self, slabs: &[GridFunction]) -> Result<f64> {
        if slabs.len() != self.grid.n_steps {
            return Err(Error::GridMismatch { expected: self.grid.n_steps, got: slabs.len() });
        }
        let mut acc = 0.0;
        for slab in slabs {
            acc += self.h_inner(slab, slab)? * self.grid.dt;
        }
        Ok(acc)
    }

    /// Grid L^2 pairing `int a b dx` (cell volume times dot product).
    pub fn pair_physical(&self, a: &GridFunction, b: &GridFunction) -> Result<f64> {
        a.check_len(&self.grid)?;
        b.check_len(&self.grid)?;
        let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
        Ok(dot * self.grid.cell_volume())
    }

    /// Draw one noise slab by spectral synthesis: independent complex
    /// Gaussians per dual frequency with variance `dt * w_k` (series scale),
    /// Hermitian symmetry enforced so the slab is real.
    pub fn sample_noise(&mut self, key: StreamKey) -> NoiseIncrement {
        let cells = self.grid.cells();
        let n3 = cells as f64;
        let mut rng = stream(key);
        let mut spectral = vec![Complex64::default(); cells];
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for cell in 0..cells {
            let partner = self.grid.conjugate_cell(cell);
            if cell > partner {
                continue;
            }
            let sigma = (self.grid.dt * self.tables.weight[cell]).sqrt() * n3;
            if cell == partner {
                let z: f64 = rng.sample(StandardNormal);
                spectral[cell] = Complex64::new(sigma * z, 0.0);
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let v = Complex64::new(re, im) * (sigma * inv_sqrt2);
                spectral[cell] = v;
                spectral[partner] = v.conj();
            }
        }
        let phys = self.to_physical(&spectral);
        let slab = GridFunction::new(phys).expect("synthesized noise slab must be finite");
        NoiseIncrement { slab, spectral, seed_tag: key }
    }
}

#[inline]
fn signed(i: i64, n: usize) -> i64 {
    let n = n as i64;
    if i < n / 2 {
        i
    } else {
        i - n
    }
}

/// `int_{[0,1]^3} |u|^(beta-3) du`: exact octant-ball part plus a midpoint
/// sum over the region outside the unit ball, where the integrand is smooth.
fn corner_constant(beta: f64) -> f64 {
    let ball = std::f64::consts::PI / (2.0 * beta);
    let n = 64usize;
    let h = 1.0 / n as f64;
    let mut outside = 0.0;
    for ix in 0..n {
        let x = (ix as f64 + 0.5) * h;
        for iy in 0..n {
            let y = (iy as f64 + 0.5) * h;
            for iz in 0..n {
                let z = (iz as f64 + 0.5) * h;
                let r2 = x * x + y * y + z * z;
                if r2 > 1.0 {
                    outside += r2.powf((beta - 3.0) / 2.0);
                }
            }
        }
    }
    ball + outside * h * h * h
}

/// Mass of `|xi|^(beta-3)` over a cube not containing the origin,
/// subdividing while the cube is close to the singularity.
fn cell_mass(beta: f64, center: [f64; 3], half: f64, depth: usize) -> f64 {
    let dist = (center[0] * center[0] + center[1] * center[1] + center[2] * center[2]).sqrt();
    if dist > 6.0 * 3.0_f64.sqrt() * half || depth >= 4 {
        // 4^3 midpoint rule
        let m = 4usize;
        let h = 2.0 * half / m as f64;
        let mut acc = 0.0;
        for ix in 0..m {
            let x = center[0] - half + (ix as f64 + 0.5) * h;
            for iy in 0..m {
                let y = center[1] - half + (iy as f64 + 0.5) * h;
                for iz in 0..m {
                    let z = center[2] - half + (iz as f64 + 0.5) * h;
                    acc += (x * x + y * y + z * z).powf((beta - 3.0) / 2.0);
                }
            }
        }
        return acc * h * h * h;
    }
    let mut acc = 0.0;
    let q = half / 2.0;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                acc += cell_mass(
                    beta,
                    [center[0] + sx * q, center[1] + sy * q, center[2] + sz * q],
                    q,
                    depth + 1,
                );
            }
        }
    }
    acc
}
