//! The measure-change coupling: a deterministic drift shift h turns the
//! noise law P into an absolutely continuous law Q. Both equations are
//! driven by the same noise path; the shifted one carries the extra forcing
//! `<G(t-s, x-.), h(s, .)>_H`, which in Fourier space is the shift spectrum
//! multiplied by the spectral density table (convolution with the covariance
//! kernel) propagated through the sinc multiplier.
//!
//! The log Radon-Nikodym weight of Q against P is
//! `sum_steps <h(t_i), dW_i> - ||h||^2_{H_T} / 2` with the plain grid L^2
//! pairing in the stochastic term, so its variance is exactly the squared
//! H_T norm; the relative entropy of a deterministic shift is half that
//! norm.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::rng::{lane, StreamKey};
use crate::solver::{Drift, InitialData, WaveSolver};
use crate::spectral::{NoiseIncrement, SpectralSpace};
use crate::transport::Probe;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Separable shift `h(s, x) = amplitude * g(s) * psi(x)` with a Gaussian
/// bump `psi` and piecewise-constant `g` over equal subintervals of [0, T].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub amplitude: f64,
    pub width: f64,
    pub center: [f64; 3],
    /// Values of g on equal subintervals; a single entry means g == const.
    pub g_steps: Vec<f64>,
}

impl ShiftSpec {
    pub fn bump(amplitude: f64, width: f64, center: [f64; 3]) -> Self {
        Self { amplitude, width, center, g_steps: vec![1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::Config(format!("shift amplitude must be finite, got {}", self.amplitude)));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::Config(format!("shift width must be positive, got {}", self.width)));
        }
        if self.g_steps.is_empty() {
            return Err(Error::Config("shift g_steps must not be empty".into()));
        }
        if self.g_steps.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("shift g_steps must be finite".into()));
        }
        Ok(())
    }

    /// Value of g on step i of n_steps (piecewise-constant over equal
    /// subintervals).
    pub fn g_at(&self, step: usize, n_steps: usize) -> f64 {
        let m = self.g_steps.len();
        let idx = (step * m / n_steps.max(1)).min(m - 1);
        self.g_steps[idx]
    }

    /// Parse a CLI shift description like
    /// `amp=1.0,width=0.5,center=2:2:2,g=1:0.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut amplitude = 1.0;
        let mut width = 0.5;
        let mut center: Option<[f64; 3]> = None;
        let mut g_steps = vec![1.0];
        for part in text.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad shift component `{part}`")))?;
            match key.trim() {
                "amp" | "amplitude" => {
                    amplitude = value.parse().map_err(|_| Error::Config(format!("bad amplitude `{value}`")))?
                }
                "width" => {
                    width = value.parse().map_err(|_| Error::Config(format!("bad width `{value}`")))?
                }
                "center" => {
                    let coords: Vec<f64> = value
                        .split(':')
                        .map(|c| c.parse().map_err(|_| Error::Config(format!("bad center `{value}`"))))
                        .collect::<Result<_>>()?;
                    if coords.len() != 3 {
                        return Err(Error::Config(format!("center needs 3 coordinates, got {}", coords.len())));
                    }
                    center = Some([coords[0], coords[1], coords[2]]);
                }
                "g" => {
                    g_steps = value
                        .split(':')
                        .map(|c| c.parse().map_err(|_| Error::Config(format!("bad g value `{value}`"))))
                        .collect::<Result<_>>()?;
                }
                other => return Err(Error::Config(format!("unknown shift key `{other}`"))),
            }
        }
        let spec = Self {
            amplitude,
            width,
            center: center.unwrap_or([0.0; 3]),
            g_steps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Materialized shift: one slab per time step plus the cached squared H_T
/// norm and the per-step smoothed forcing spectra the solver consumes.
#[derive(Debug, Clone)]
pub struct DriftShift {
    slabs: Vec<GridFunction>,
    norm_sq: f64,
    forcing: Vec<Vec<Complex64>>,
}

impl DriftShift {
    pub fn from_spec(space: &mut SpectralSpace, spec: &ShiftSpec) -> Result<Self> {
        spec.validate()?;
        let grid = *space.grid();
        let mut center = spec.center;
        if center == [0.0; 3] {
            center = [grid.box_length / 2.0; 3];
        }
        let psi = GridFunction::from_fn(&grid, |p| {
            let r = grid.periodic_distance(p, center);
            spec.amplitude * (-r * r / (2.0 * spec.width * spec.width)).exp()
        })?;
        let slabs: Vec<GridFunction> = (0..grid.n_steps)
            .map(|step| {
                let g = spec.g_at(step, grid.n_steps);
                GridFunction::new(psi.values().iter().map(|v| g * v).collect())
            })
            .collect::<Result<_>>()?;
        Self::from_slabs(space, slabs)
    }

    /// Build from arbitrary slabs (one per step).
    pub fn from_slabs(space: &mut SpectralSpace, slabs: Vec<GridFunction>) -> Result<Self> {
        let grid = *space.grid();
        if slabs.len() != grid.n_steps {
            return Err(Error::GridMismatch { expected: grid.n_steps, got: slabs.len() });
        }
        let mut norm_sq = 0.0;
        let mut forcing = Vec::with_capacity(slabs.len());
        for slab in &slabs {
            slab.check_len(&grid)?;
            let spec = space.to_spectral(slab);
            norm_sq += space.h_inner_spectral(&spec, &spec) * grid.dt;
            let smoothed: Vec<Complex64> = spec
                .iter()
                .zip(space.density_eff())
                .map(|(z, &d)| z * d)
                .collect();
            forcing.push(smoothed);
        }
        if !norm_sq.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self { slabs, norm_sq, forcing })
    }

    pub fn slabs(&self) -> &[GridFunction] {
        &self.slabs
    }

    /// Cached `||h||^2_{H_T}`.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// H-smoothed forcing spectrum for one step.
    pub fn forcing(&self, step: usize) -> &[Complex64] {
        &self.forcing[step]
    }

    pub fn is_zero(&self) -> bool {
        self.norm_sq == 0.0
    }
}

/// Relative entropy `H(Q | P) = ||h||^2_{H_T} / 2` of the shifted law.
pub fn relative_entropy(shift: &DriftShift) -> f64 {
    0.5 * shift.norm_sq()
}

/// Log Radon-Nikodym weight of a noise path under the shift:
/// `sum_i <h(t_i), W_i>_{L^2} - ||h||^2 / 2`.
pub fn rn_log_weight(space: &SpectralSpace, shift: &DriftShift, noise_path: &[NoiseIncrement]) -> Result<f64> {
    if noise_path.len() != shift.slabs.len() {
        return Err(Error::GridMismatch { expected: shift.slabs.len(), got: noise_path.len() });
    }
    let mut stochastic = 0.0;
    for (slab, noise) in shift.slabs.iter().zip(noise_path) {
        stochastic += space.pair_physical(&noise.slab, slab)?;
    }
    Ok(stochastic - 0.5 * shift.norm_sq())
}

/// Per-replica diagnostics of one coupled run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub replica: u64,
    /// sup over steps and grid points of |u - v|^2.
    pub eta_t: f64,
    /// sup of the squared drift-difference term I1.
    pub i1_max: f64,
    /// sup of the squared shift-response term I2.
    pub i2_max: f64,
    pub rn_log_weight: f64,
    pub norm_sq: f64,
}

/// Coupled paths sampled at the probe set.
#[derive(Debug, Clone)]
pub struct CoupledOutput {
    pub record: CouplingRecord,
    /// Shifted path u at the probes (law Q).
    pub probe_u: Vec<f64>,
    /// Unshifted path v at the probes (law P).
    pub probe_v: Vec<f64>,
}

/// Step the pair (u, v) of the shifted and unshifted equations under the
/// same noise stream and collect the decomposition diagnostics. The shift
/// response I2 is tracked by a third, linear evolution, so I1 = (u - v) - I2
/// needs no extra solve.
pub fn simulate_coupled(
    base: &SpectralSpace,
    init: &InitialData,
    drift: Drift,
    shift: &DriftShift,
    seed: u64,
    replica: u64,
    probes: &[Probe],
) -> Result<CoupledOutput> {
    let grid = *base.grid();
    let mut solver_u = WaveSolver::new(base.clone(), drift);
    let mut solver_v = WaveSolver::new(base.clone(), drift);
    let mut solver_r = WaveSolver::new(base.clone(), Drift::zero());
    let mut noise_space = base.clone();

    let mut state_u = solver_u.initial_state(init)?;
    let mut state_v = solver_v.initial_state(init)?;
    let mut state_r = solver_r.initial_state(&InitialData::zero(&grid))?;

    let mut eta: f64 = 0.0;
    let mut i1_max: f64 = 0.0;
    let mut i2_max: f64 = 0.0;
    let mut stochastic = 0.0;
    let mut probe_u = vec![0.0; probes.len()];
    let mut probe_v = vec![0.0; probes.len()];

    for step in 0..grid.n_steps {
        let key = StreamKey::new(seed, lane::COUPLE, replica, step as u64);
        let noise = noise_space.sample_noise(key);
        stochastic += noise_space.pair_physical(&noise.slab, &shift.slabs[step])?;

        let forcing = shift.forcing(step);
        solver_u.step(&mut state_u, Some(&noise), Some(forcing))?;
        solver_v.step(&mut state_v, Some(&noise), None)?;
        solver_r.step(&mut state_r, None, Some(forcing))?;

        let u_phys = solver_u.u_physical(&state_u);
        let v_phys = solver_v.u_physical(&state_v);
        let r_phys = solver_r.u_physical(&state_r);
        for cell in 0..grid.cells() {
            let du = u_phys.values()[cell] - v_phys.values()[cell];
            let i2 = r_phys.values()[cell];
            eta = eta.max(du * du);
            i2_max = i2_max.max(i2 * i2);
            let i1 = du - i2;
            i1_max = i1_max.max(i1 * i1);
        }
        for (slot, probe) in probes.iter().enumerate() {
            if probe.step == step + 1 {
                let idx = grid.idx(probe.ix, probe.iy, probe.iz);
                probe_u[slot] = u_phys.values()[idx];
                probe_v[slot] = v_phys.values()[idx];
            }
        }
    }

    Ok(CoupledOutput {
        record: CouplingRecord {
            replica,
            eta_t: eta,
            i1_max,
            i2_max,
            rn_log_weight: stochastic - 0.5 * shift.norm_sq(),
            norm_sq: shift.norm_sq(),
        },
        probe_u,
        probe_v,
    })
}

/// Pure shift response (u - v for the linear equation): the third evolution
/// of `simulate_coupled` run on its own. Deterministic in the shift.
pub fn shift_response(base: &SpectralSpace, shift: &DriftShift) -> Result<Vec<GridFunction>> {
    let grid = *base.grid();
    let mut solver = WaveSolver::new(base.clone(), Drift::zero());
    let mut state = solver.initial_state(&InitialData::zero(&grid))?;
    let mut out = Vec::with_capacity(grid.n_steps);
    for step in 0..grid.n_steps {
        solver.step(&mut state, None, Some(shift.forcing(step)))?;
        out.push(solver.u_physical(&state));
    }
    Ok(out)
}

/// Aggregate certificate over a batch of replicas.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub replicas: usize,
    pub mean_eta: f64,
    pub norm_sq: f64,
    /// Transport constant `T M(T) exp(T^4 K^2 / 2)`.
    pub c_const: f64,
    /// mean_eta / (C * norm_sq); `None` in the degenerate h == 0 case.
    pub ratio: Option<f64>,
    pub degenerate: bool,
    /// Whether `mean_eta <= C * norm_sq`.
    pub mean_bound_pass: bool,
    /// Whether the pathwise bound `i2_max <= T M(T) ||h||^2 (1 + slack)`
    /// holds on every replica.
    pub i2_pathwise_pass: bool,
    pub max_i2_over_bound: f64,
    pub i2_slack: f64,
}

/// Check the decomposition bounds across records at a given horizon T,
/// Lipschitz constant K, and kernel mass M(T).
pub fn gronwall_certificate(
    records: &[CouplingRecord],
    t_horizon: f64,
    k_lipschitz: f64,
    m_t: f64,
) -> Result<CertificateReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let i2_slack = 0.02;
    let norm_sq = records[0].norm_sq;
    if records.iter().any(|r| (r.norm_sq - norm_sq).abs() > 1e-12 * norm_sq.abs().max(1.0)) {
        return Err(Error::Config("records come from different shift configurations".into()));
    }
    let mean_eta = records.iter().map(|r| r.eta_t).sum::<f64>() / records.len() as f64;
    let c_const = t_horizon * m_t * (t_horizon.powi(4) * k_lipschitz * k_lipschitz / 2.0).exp();
    let degenerate = norm_sq == 0.0;
    let ratio = if degenerate { None } else { Some(mean_eta / (c_const * norm_sq)) };
    let mean_bound_pass = if degenerate { mean_eta == 0.0 } else { mean_eta <= c_const * norm_sq };
    let i2_bound = t_horizon * m_t * norm_sq;
    let mut max_i2_over_bound: f64 = 0.0;
    let mut i2_pathwise_pass = true;
    for r in records {
        if degenerate {
            if r.i2_max != 0.0 {
                i2_pathwise_pass = false;
            }
            continue;
        }
        let over = r.i2_max / i2_bound;
        max_i2_over_bound = max_i2_over_bound.max(over);
        if r.i2_max > i2_bound * (1.0 + i2_slack) {
            i2_pathwise_pass = false;
        }
    }
    Ok(CertificateReport {
        replicas: records.len(),
        mean_eta,
        norm_sq,
        c_const,
        ratio,
        degenerate,
        mean_bound_pass,
        i2_pathwise_pass,
        max_i2_over_bound,
        i2_slack,
    })
}
