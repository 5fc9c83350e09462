//! Spectral time stepping of the damped-free wave equation in mild form.
//!
//! Each Fourier mode obeys `u_k'' = -(2 pi |xi_k|)^2 u_k + forcing`, so the
//! linear group is advanced exactly by the rotation
//!
//! ```text
//! [ u ]   [ cos(w dt)        sin(w dt)/w ] [ u ]
//! [ v ] = [ -w sin(w dt)     cos(w dt)   ] [ v ]
//! ```
//!
//! with `w = 2 pi |xi_k|`. Drift, Girsanov shift, and the noise increment
//! enter through the same rotation applied to `[0; g]` (a stochastic
//! trigonometric integrator): no CFL restriction, exact eigenmodes, exact
//! energy conservation for the free equation.

use crate::error::{Error, Result};
use crate::grid::{GridFunction, PeriodicGrid};
use crate::spectral::{NoiseIncrement, SpatialCovariance, SpectralSpace};
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

/// Pointwise drift b(u) with a declared Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftKind {
    Zero,
    Constant(f64),
    /// b(u) = K sin(u); globally Lipschitz with constant exactly K.
    SineK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub kind: DriftKind,
    /// Declared Lipschitz constant K; must dominate the true constant.
    pub lipschitz: f64,
}

impl Drift {
    pub fn new(kind: DriftKind, lipschitz: f64) -> Result<Self> {
        if !lipschitz.is_finite() || lipschitz < 0.0 {
            return Err(Error::Config(format!("Lipschitz constant must be nonnegative, got {lipschitz}")));
        }
        Ok(Self { kind, lipschitz })
    }

    pub fn zero() -> Self {
        Self { kind: DriftKind::Zero, lipschitz: 0.0 }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Constant(c) => c,
            DriftKind::SineK => self.lipschitz * u.sin(),
        }
    }

    /// True Lipschitz constant of the drift term.
    pub fn true_lipschitz(&self) -> f64 {
        match self.kind {
            DriftKind::Zero | DriftKind::Constant(_) => 0.0,
            DriftKind::SineK => self.lipschitz,
        }
    }
}

/// Initial position/velocity pair with the recorded support radius used by
/// the wrap-around precondition.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub nu1: GridFunction,
    pub nu2: GridFunction,
    pub support_radius: f64,
}

impl InitialData {
    pub fn new(grid: &PeriodicGrid, nu1: GridFunction, nu2: GridFunction, support_radius: f64) -> Result<Self> {
        nu1.check_len(grid)?;
        nu2.check_len(grid)?;
        Ok(Self { nu1, nu2, support_radius })
    }

    pub fn zero(grid: &PeriodicGrid) -> Self {
        Self {
            nu1: GridFunction::zeros(grid),
            nu2: GridFunction::zeros(grid),
            support_radius: 0.0,
        }
    }

    /// Plane-wave eigenmode `nu1 = amp cos(2 pi k.x / L)`, `nu2 = 0`.
    pub fn cosine_mode(grid: &PeriodicGrid, k: [i64; 3], amp: f64) -> Result<Self> {
        let l = grid.box_length;
        let nu1 = GridFunction::from_fn(grid, |p| {
            let phase = 2.0 * PI * (k[0] as f64 * p[0] + k[1] as f64 * p[1] + k[2] as f64 * p[2]) / l;
            amp * phase.cos()
        })?;
        Ok(Self { nu1, nu2: GridFunction::zeros(grid), support_radius: 0.0 })
    }

    /// Compactly supported C^(order-1) bump `amp (1 - (r/r0)^2)^order` in the
    /// position component, centered in the box.
    pub fn compact_bump(grid: &PeriodicGrid, amp: f64, r0: f64, order: i32) -> Result<Self> {
        let c = [grid.box_length / 2.0; 3];
        let nu1 = GridFunction::from_fn(grid, |p| {
            let r = grid.periodic_distance(p, c);
            let s = r / r0;
            if s < 1.0 {
                amp * (1.0 - s * s).powi(order)
            } else {
                0.0
            }
        })?;
        Ok(Self { nu1, nu2: GridFunction::zeros(grid), support_radius: r0 })
    }
}

/// Exact spectral tables for one time increment.
#[derive(Debug, Clone)]
pub struct WaveMultipliers {
    pub dt: f64,
    /// cos(2 pi |xi| dt)
    pub cos_t: Vec<f64>,
    /// sin(2 pi |xi| dt) / (2 pi |xi|), with the zero-frequency limit dt
    pub sinc_t: Vec<f64>,
    /// (2 pi |xi|) sin(2 pi |xi| dt)
    pub wsin_t: Vec<f64>,
}

/// Build the multiplier tables for an arbitrary increment t.
pub fn wave_multipliers(space: &SpectralSpace, t: f64) -> WaveMultipliers {
    let freq = space.freq_norm();
    let mut cos_t = Vec::with_capacity(freq.len());
    let mut sinc_t = Vec::with_capacity(freq.len());
    let mut wsin_t = Vec::with_capacity(freq.len());
    for &r in freq {
        let w = 2.0 * PI * r;
        cos_t.push((w * t).cos());
        sinc_t.push(if w == 0.0 { t } else { (w * t).sin() / w });
        wsin_t.push(w * (w * t).sin());
    }
    WaveMultipliers { dt: t, cos_t, sinc_t, wsin_t }
}

/// Fourier-space state of the pair (u, du/dt).
#[derive(Debug, Clone)]
pub struct WaveState {
    pub t: f64,
    pub step: usize,
    pub(crate) u_hat: Vec<Complex64>,
    pub(crate) v_hat: Vec<Complex64>,
}

impl WaveState {
    pub fn u_hat(&self) -> &[Complex64] {
        &self.u_hat
    }

    pub fn v_hat(&self) -> &[Complex64] {
        &self.v_hat
    }
}

/// One replica's integrator: owns its spectral space (FFT scratch included)
/// and the per-dt multiplier tables.
#[derive(Debug, Clone)]
pub struct WaveSolver {
    space: SpectralSpace,
    mult: WaveMultipliers,
    drift: Drift,
}

impl WaveSolver {
    pub fn new(space: SpectralSpace, drift: Drift) -> Self {
        let mult = wave_multipliers(&space, space.grid().dt);
        Self { space, mult, drift }
    }

    pub fn space(&self) -> &SpectralSpace {
        &self.space
    }

    pub fn space_mut(&mut self) -> &mut SpectralSpace {
        &mut self.space
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn multipliers(&self) -> &WaveMultipliers {
        &self.mult
    }

    pub fn initial_state(&mut self, init: &InitialData) -> Result<WaveState> {
        init.nu1.check_len(self.space.grid())?;
        init.nu2.check_len(self.space.grid())?;
        let u_hat = self.space.to_spectral(&init.nu1);
        let v_hat = self.space.to_spectral(&init.nu2);
        Ok(WaveState { t: 0.0, step: 0, u_hat, v_hat })
    }

    /// Advance one step. `noise` is the integrated increment over the slab;
    /// `shift_forcing` is the H-smoothed Girsanov shift spectrum for this
    /// step (already multiplied by the spectral density table).
    pub fn step(
        &mut self,
        state: &mut WaveState,
        noise: Option<&NoiseIncrement>,
        shift_forcing: Option<&[Complex64]>,
    ) -> Result<()> {
        let cells = self.space.grid().cells();
        if state.u_hat.len() != cells || state.v_hat.len() != cells {
            return Err(Error::GridMismatch { expected: cells, got: state.u_hat.len() });
        }
        let dt = self.space.grid().dt;

        // pointwise drift on the physical grid
        let b_hat: Option<Vec<Complex64>> = match self.drift.kind {
            DriftKind::Zero => None,
            _ => {
                let u_phys = self.space.to_physical(&state.u_hat);
                let vals: Vec<f64> = u_phys.iter().map(|&u| self.drift.eval(u)).collect();
                let field = GridFunction::new(vals).map_err(|_| Error::BlowUp { step: state.step })?;
                Some(self.space.to_spectral(&field))
            }
        };

        for cell in 0..cells {
            let mut g = Complex64::default();
            if let Some(b) = &b_hat {
                g += b[cell] * dt;
            }
            if let Some(h) = shift_forcing {
                g += h[cell] * dt;
            }
            if let Some(w) = noise {
                g += w.spectral[cell];
            }
            let u = state.u_hat[cell];
            let v = state.v_hat[cell];
            let c = self.mult.cos_t[cell];
            let s = self.mult.sinc_t[cell];
            let ws = self.mult.wsin_t[cell];
            state.u_hat[cell] = c * u + s * (v + g);
            state.v_hat[cell] = -ws * u + c * (v + g);
        }
        state.step += 1;
        state.t += dt;

        if state.u_hat.iter().chain(state.v_hat.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::BlowUp { step: state.step });
        }
        Ok(())
    }

    /// Physical field u at the current state.
    pub fn u_physical(&mut self, state: &WaveState) -> GridFunction {
        let vals = self.space.to_physical(&state.u_hat);
        GridFunction::new(vals).expect("state checked finite after each step")
    }

    pub fn v_physical(&mut self, state: &WaveState) -> GridFunction {
        let vals = self.space.to_physical(&state.v_hat);
        GridFunction::new(vals).expect("state checked finite after each step")
    }

    /// Relative size of the imaginary residue of u; Hermitian spectra keep
    /// this at rounding level.
    pub fn realness_defect(&mut self, state: &WaveState) -> f64 {
        self.space.imag_defect(&state.u_hat)
    }

    /// Discrete energy (1/2)||v||^2 + (1/2)||grad u||^2 over the box.
    pub fn energy(&self, state: &WaveState) -> f64 {
        let grid = self.space.grid();
        let n6 = (grid.cells() as f64) * (grid.cells() as f64);
        let l3 = grid.box_length.powi(3);
        let mut acc = 0.0;
        for (cell, &r) in self.space.freq_norm().iter().enumerate() {
            let w = 2.0 * PI * r;
            acc += state.v_hat[cell].norm_sqr() + w * w * state.u_hat[cell].norm_sqr();
        }
        0.5 * acc * l3 / n6
    }

    /// Evolution of the initial data alone:
    /// `w(t) = cos(2 pi t |xi|) nu1_hat + sinc nu2_hat`, evaluated directly.
    pub fn deterministic_part(&mut self, init: &InitialData, t: f64) -> Result<GridFunction> {
        if t < 0.0 {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        init.nu1.check_len(self.space.grid())?;
        init.nu2.check_len(self.space.grid())?;
        let mult = wave_multipliers(&self.space, t);
        let nu1 = self.space.to_spectral(&init.nu1);
        let nu2 = self.space.to_spectral(&init.nu2);
        let spec: Vec<Complex64> = (0..nu1.len())
            .map(|c| nu1[c] * mult.cos_t[c] + nu2[c] * mult.sinc_t[c])
            .collect();
        let vals = self.space.to_physical(&spec);
        GridFunction::new(vals)
    }
}

/// Apply the wave kernel at time t to the constant function 1 and return the
/// spatial mean. The sphere average of the fundamental solution integrates
/// to exactly t, so the contract is `result == t` up to rounding.
pub fn spherical_mass_check(space: &mut SpectralSpace, t: f64) -> Result<f64> {
    let grid = *space.grid();
    if t < 0.0 || t >= grid.box_length / 2.0 {
        return Err(Error::Domain(format!(
            "kernel time {t} must lie in [0, L/2) = [0, {}) to avoid wrap-around",
            grid.box_length / 2.0
        )));
    }
    let mult = wave_multipliers(space, t);
    let ones = GridFunction::constant(&grid, 1.0);
    let mut spec = space.to_spectral(&ones);
    for (cell, v) in spec.iter_mut().enumerate() {
        *v *= mult.sinc_t[cell];
    }
    let phys = space.to_physical(&spec);
    Ok(phys.iter().sum::<f64>() / phys.len() as f64)
}

/// Controls for the radial quadrature behind `m_of_t`.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub max_depth: usize,
    /// Number of time-mesh points over which the sup is taken.
    pub time_mesh: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_depth: 44, time_mesh: 32 }
    }
}

/// `sup_{t <= T} int |FG(t)(xi)|^2 mu(dxi)`, evaluated on a uniform time mesh
/// with the radial integral
/// `int_0^inf [sin(2 pi t rho)/(2 pi rho)]^2 a c(beta) rho^(beta-3) 4 pi rho^2 drho`
/// done by series + adaptive Simpson + tail expansion.
pub fn m_of_t(t_max: f64, cov: &SpatialCovariance, quad: &QuadratureSpec) -> Result<f64> {
    if t_max < 0.0 {
        return Err(Error::Domain(format!("horizon must be nonnegative, got {t_max}")));
    }
    if t_max == 0.0 {
        return Ok(0.0);
    }
    let mesh = quad.time_mesh.max(1);
    let mut sup = 0.0_f64;
    for i in 1..=mesh {
        let t = t_max * i as f64 / mesh as f64;
        sup = sup.max(kernel_spectral_mass(t, cov, quad)?);
    }
    Ok(sup)
}

/// `int |FG(t)(xi)|^2 mu(dxi)` for a single time.
pub fn kernel_spectral_mass(t: f64, cov: &SpatialCovariance, quad: &QuadratureSpec) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let beta = cov.beta();
    let prefactor = cov.amplitude() * cov.riesz_constant() / PI;
    let a = 2.0 * PI * t;
    // integrand without prefactor: sin^2(a rho) rho^(beta-3)
    let f = |rho: f64| (a * rho).sin().powi(2) * rho.powf(beta - 3.0);

    // [0, delta]: series sin^2(x) = x^2 - x^4/3 + 2 x^6/45 - x^8/315 ...
    let delta = 0.1 / a;
    let head = a * a * delta.powf(beta) / beta
        - a.powi(4) * delta.powf(beta + 2.0) / (3.0 * (beta + 2.0))
        + 2.0 * a.powi(6) * delta.powf(beta + 4.0) / (45.0 * (beta + 4.0))
        - a.powi(8) * delta.powf(beta + 6.0) / (315.0 * (beta + 6.0));

    // [delta, r_cut]: adaptive Simpson per panel, panel length tied to the
    // oscillation wavelength; r_cut grows as the frequency drops so the
    // integration-by-parts tail remainder stays negligible
    let r_cut = 200.0 * (1.0_f64).max(1.0 / a);
    let panel = (1.0_f64).max(0.5 / a);
    let mut body = 0.0;
    let mut lo = delta;
    while lo < r_cut {
        let hi = (lo + panel).min(r_cut);
        body += adaptive_simpson(&f, lo, hi, quad.rel_tol, quad.max_depth)?;
        lo = hi;
    }

    // [r_cut, inf): sin^2 = (1 - cos(2 a rho)) / 2; the monotone part is
    // exact, the oscillatory part is expanded by parts twice and the
    // remainder bounded
    let monotone = 0.5 * r_cut.powf(beta - 2.0) / (2.0 - beta);
    let two_a = 2.0 * a;
    let ibp1 = (two_a * r_cut).sin() * r_cut.powf(beta - 3.0) / two_a;
    let ibp2 = -(3.0 - beta) * (two_a * r_cut).cos() * r_cut.powf(beta - 4.0) / (two_a * two_a);
    let remainder_bound =
        (3.0 - beta) * (4.0 - beta) * r_cut.powf(beta - 4.0) / (two_a * two_a * (4.0 - beta));
    let tail = monotone + 0.5 * (ibp1 + ibp2);
    let total = prefactor * (head + body + tail);
    let rem_rel = prefactor * 0.5 * remainder_bound / total.abs().max(f64::MIN_POSITIVE);
    if !total.is_finite() {
        return Err(Error::Quadrature(format!("non-finite result for t={t}, beta={beta}")));
    }
    if rem_rel > 1e-6 {
        return Err(Error::Quadrature(format!(
            "tail remainder {rem_rel:.2e} too large for t={t}, beta={beta}"
        )));
    }
    Ok(total)
}

fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_depth: usize,
) -> Result<f64> {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> std::result::Result<f64, ()> {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol || (b - a) < 1e-14 {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(());
        }
        let l = recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)?;
        let r = recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)?;
        Ok(l + r)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    let tol = rel_tol * whole.abs().max(1e-12);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, max_depth)
        .map_err(|_| Error::Quadrature(format!("adaptive refinement exhausted on [{a}, {b}]")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{lane, stream, StreamKey};
    use rand::Rng;

    fn space(n: usize, l: f64, dt: f64, steps: usize, beta: f64) -> SpectralSpace {
        let grid = PeriodicGrid::new(l, n, dt, steps).unwrap();
        SpectralSpace::new(grid, SpatialCovariance::new(beta).unwrap()).unwrap()
    }

    #[test]
    fn multiplier_zero_mode_limits() {
        let sp = space(8, 2.0, 0.1, 4, 1.0);
        let mult = wave_multipliers(&sp, 0.1);
        let zero = 0usize; // cell 0 is the zero frequency
        assert_eq!(mult.cos_t[zero], 1.0);
        assert_eq!(mult.sinc_t[zero], 0.1);
        assert_eq!(mult.wsin_t[zero], 0.0);
        // dt -> 0 limit
        let tiny = wave_multipliers(&sp, 0.0);
        assert!(tiny.cos_t.iter().all(|&c| c == 1.0));
        assert!(tiny.sinc_t.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn multiplier_trig_identity() {
        let sp = space(16, 3.0, 0.07, 4, 1.0);
        let mult = wave_multipliers(&sp, 0.07);
        for (cell, &r) in sp.freq_norm().iter().enumerate() {
            let w = 2.0 * PI * r;
            let c = mult.cos_t[cell];
            let s = mult.sinc_t[cell];
            let id = c * c + (w * s) * (w * s);
            // zero mode degenerates to cos^2 = 1
            let expect = if w == 0.0 { 1.0 } else { 1.0 };
            assert!((id - expect).abs() < 1e-12, "cell {cell}: {id}");
        }
    }

    #[test]
    fn eigenmode_evolves_exactly() {
        // nu1 = cos(2 pi k.x / L), nu2 = 0, free equation:
        // u(t, x) = cos(2 pi |k| t / L) cos(2 pi k.x / L)
        let sp = space(16, 2.0, 0.01, 4, 1.0);
        let grid = *sp.grid();
        let k = [2i64, 1, 0];
        let init = InitialData::cosine_mode(&grid, k, 1.0).unwrap();
        let mut solver = WaveSolver::new(sp, Drift::zero());
        let mut state = solver.initial_state(&init).unwrap();
        for _ in 0..100 {
            solver.step(&mut state, None, None).unwrap();
        }
        let knorm = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
        let omega = 2.0 * PI * knorm / grid.box_length;
        let amp = (omega * state.t).cos();
        let u = solver.u_physical(&state);
        let expect = |p: [f64; 3]| {
            let phase =
                2.0 * PI * (k[0] as f64 * p[0] + k[1] as f64 * p[1] + k[2] as f64 * p[2]) / grid.box_length;
            amp * phase.cos()
        };
        for cell in 0..grid.cells() {
            let want = expect(grid.position(cell));
            assert!(
                (u.values()[cell] - want).abs() < 1e-10,
                "cell {cell}: {} vs {want}",
                u.values()[cell]
            );
        }
        assert!(solver.realness_defect(&state) < 1e-10);
    }

    #[test]
    fn free_energy_is_conserved() {
        let sp = space(16, 2.0, 0.02, 4, 1.0);
        let grid = *sp.grid();
        let mut rng = stream(StreamKey::new(4, lane::SOLVE, 0, 0));
        let nu1 = GridFunction::new((0..grid.cells()).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
        let nu2 = GridFunction::new((0..grid.cells()).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
        let init = InitialData::new(&grid, nu1, nu2, 0.0).unwrap();
        let mut solver = WaveSolver::new(sp, Drift::zero());
        let mut state = solver.initial_state(&init).unwrap();
        let e0 = solver.energy(&state);
        for _ in 0..100 {
            solver.step(&mut state, None, None).unwrap();
        }
        let e1 = solver.energy(&state);
        assert!(((e1 - e0) / e0).abs() < 1e-10, "energy drift {e0} -> {e1}");
    }

    #[test]
    fn constant_drift_matches_duhamel() {
        // b = 1, zero data: continuum solution t^2/2; the left-endpoint
        // scheme lands exactly on t (t + dt) / 2
        let sp = space(8, 2.0, 0.05, 4, 1.0);
        let grid = *sp.grid();
        let init = InitialData::zero(&grid);
        let drift = Drift::new(DriftKind::Constant(1.0), 0.0).unwrap();
        let mut solver = WaveSolver::new(sp, drift);
        let mut state = solver.initial_state(&init).unwrap();
        for _ in 0..20 {
            solver.step(&mut state, None, None).unwrap();
        }
        let t = state.t;
        let exact_discrete = t * (t + grid.dt) / 2.0;
        let u = solver.u_physical(&state);
        for &v in u.values() {
            assert!((v - exact_discrete).abs() < 1e-12, "{v} vs {exact_discrete}");
            // O(dt) from the continuum Duhamel value
            assert!((v - t * t / 2.0).abs() <= t * grid.dt, "{v} vs {}", t * t / 2.0);
        }
    }

    #[test]
    fn deterministic_part_examples() {
        let sp = space(8, 2.0, 0.05, 4, 1.0);
        let grid = *sp.grid();
        let mut rng = stream(StreamKey::new(6, lane::SOLVE, 0, 0));
        let nu1 = GridFunction::new((0..grid.cells()).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
        let init = InitialData::new(&grid, nu1.clone(), GridFunction::zeros(&grid), 0.0).unwrap();
        let mut solver = WaveSolver::new(sp, Drift::zero());
        // t = 0 reproduces nu1 exactly
        let w0 = solver.deterministic_part(&init, 0.0).unwrap();
        for (a, b) in w0.values().iter().zip(nu1.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // nu1 = 0, nu2 = c: w(t) = c t
        let c = 0.7;
        let init2 = InitialData::new(
            &grid,
            GridFunction::zeros(&grid),
            GridFunction::constant(&grid, c),
            0.0,
        )
        .unwrap();
        let w = solver.deterministic_part(&init2, 0.45).unwrap();
        for &v in w.values() {
            assert!((v - c * 0.45).abs() < 1e-12, "{v}");
        }
        assert!(solver.deterministic_part(&init, -0.1).is_err());
    }

    #[test]
    fn deterministic_part_matches_stepping() {
        let sp = space(8, 2.0, 0.005, 200, 1.0);
        let grid = *sp.grid();
        let smooth = |phase: f64| {
            GridFunction::from_fn(&grid, |p| {
                (2.0 * PI * p[0] / grid.box_length + phase).sin()
                    * (2.0 * PI * p[1] / grid.box_length).cos()
                    + 0.3 * (4.0 * PI * p[2] / grid.box_length).cos()
            })
            .unwrap()
        };
        let init = InitialData::new(&grid, smooth(0.0), smooth(0.7), 0.0).unwrap();
        let mut solver = WaveSolver::new(sp, Drift::zero());
        let mut state = solver.initial_state(&init).unwrap();
        for _ in 0..200 {
            solver.step(&mut state, None, None).unwrap();
        }
        let direct = solver.deterministic_part(&init, state.t).unwrap();
        let stepped = solver.u_physical(&state);
        for (a, b) in direct.values().iter().zip(stepped.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn spherical_mass_identity() {
        let mut sp = space(16, 2.0, 0.05, 4, 1.0);
        assert_eq!(spherical_mass_check(&mut sp, 0.0).unwrap(), 0.0);
        let v = spherical_mass_check(&mut sp, 0.5).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
        // scaling consistency: t * (kernel mass at t) = t^2, the total
        // sphere-measure mass divided by 4 pi t
        let t = 0.8;
        let m = spherical_mass_check(&mut sp, t).unwrap();
        assert!((t * m - t * t).abs() < 1e-12);
        // wrap-around precondition
        assert!(spherical_mass_check(&mut sp, 1.0).is_err());
        assert!(spherical_mass_check(&mut sp, -0.2).is_err());
    }

    #[test]
    fn finite_propagation_speed() {
        // order-8 compact bump: the band-limited leakage outside the light
        // cone stays below 1e-8 at this resolution
        let grid = PeriodicGrid::new(4.0, 128, 1.0, 1).unwrap();
        let sp = SpectralSpace::new(grid, SpatialCovariance::new(1.0).unwrap()).unwrap();
        let r0 = 0.6;
        let t = 1.0;
        let init = InitialData::compact_bump(&grid, 1.0, r0, 8).unwrap();
        let mut solver = WaveSolver::new(sp, Drift::zero());
        let u = solver.deterministic_part(&init, t).unwrap();
        let c = [grid.box_length / 2.0; 3];
        let mut max_outside = 0.0_f64;
        for cell in 0..grid.cells() {
            let r = grid.periodic_distance(grid.position(cell), c);
            if r > r0 + t {
                max_outside = max_outside.max(u.values()[cell].abs());
            }
        }
        assert!(max_outside <= 1e-8, "leakage {max_outside}");
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let sp = space(8, 2.0, 0.05, 4, 1.0);
        let grid = *sp.grid();
        // a drift with a huge constant does not blow up; inject a non-finite
        // state through an overflowing amplitude instead
        let init = InitialData::new(
            &grid,
            GridFunction::constant(&grid, 1e308),
            GridFunction::constant(&grid, 1e308),
            0.0,
        )
        .unwrap();
        let drift = Drift::new(DriftKind::Constant(1e308), 0.0).unwrap();
        let mut solver = WaveSolver::new(sp, drift);
        let mut state = solver.initial_state(&init).unwrap();
        let mut saw = None;
        for _ in 0..50 {
            match solver.step(&mut state, None, None) {
                Ok(()) => {}
                Err(Error::BlowUp { step }) => {
                    saw = Some(step);
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(saw.is_some(), "overflow never detected");
    }

    #[test]
    fn drift_lipschitz_spot_check() {
        let k = 1.7;
        let drift = Drift::new(DriftKind::SineK, k).unwrap();
        let mut rng = stream(StreamKey::new(13, lane::SOLVE, 0, 0));
        for _ in 0..200 {
            let x = 20.0 * (rng.gen::<f64>() - 0.5);
            let y = 20.0 * (rng.gen::<f64>() - 0.5);
            let lhs = (drift.eval(x) - drift.eval(y)).abs();
            // 4-significant-digit slack on the declared constant
            assert!(lhs <= k * (x - y).abs() * 1.0001 + 1e-12);
        }
        assert_eq!(drift.true_lipschitz(), k);
        assert!(Drift::new(DriftKind::SineK, -1.0).is_err());
    }

    #[test]
    fn m_of_t_closed_forms() {
        // Gamma-function closed form of the radial integral (worked out
        // independently):
        //   M(1, 1/2) = 2 sqrt(2) / 3,  M(1, 1) = 1,  M(1, 3/2) = sqrt(2)
        let quad = QuadratureSpec::default();
        let cases = [
            (0.5, 2.0 * std::f64::consts::SQRT_2 / 3.0),
            (1.0, 1.0),
            (1.5, std::f64::consts::SQRT_2),
        ];
        for (beta, expect) in cases {
            let cov = SpatialCovariance::new(beta).unwrap();
            let got = m_of_t(1.0, &cov, &quad).unwrap();
            assert!((got - expect).abs() < 1e-6, "beta={beta}: {got} vs {expect}");
        }
        // T = 0
        let cov = SpatialCovariance::new(1.0).unwrap();
        assert_eq!(m_of_t(0.0, &cov, &quad).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_failure_carries_diagnostics() {
        let cov = SpatialCovariance::new(1.0).unwrap();
        let quad = QuadratureSpec { rel_tol: 1e-300, max_depth: 1, time_mesh: 1 };
        match m_of_t(1.0, &cov, &quad) {
            Err(Error::Quadrature(msg)) => assert!(!msg.is_empty()),
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }

    #[test]
    fn m_of_t_monotone() {
        let quad = QuadratureSpec::default();
        for beta in [0.5, 1.0, 1.7] {
            let cov = SpatialCovariance::new(beta).unwrap();
            let mut prev = 0.0;
            for i in 1..=10 {
                let t = 0.2 * i as f64;
                let m = m_of_t(t, &cov, &quad).unwrap();
                assert!(m >= prev - 1e-12, "beta={beta}, t={t}: {m} < {prev}");
                prev = m;
            }
        }
    }

    #[test]
    fn moment_growth_is_stable() {
        // empirical moments at a fixed point stay bounded when the replica
        // count doubles
        let grid = PeriodicGrid::new(2.0, 8, 0.0625, 8).unwrap();
        let cov = SpatialCovariance::new(1.0).unwrap();
        let base = SpectralSpace::new(grid, cov).unwrap();
        let drift = Drift::new(DriftKind::SineK, 1.0).unwrap();
        let probe = grid.idx(4, 4, 4);
        let run = |replicas: usize| -> (f64, f64) {
            let mut m2 = 0.0;
            let mut m4 = 0.0;
            for rep in 0..replicas {
                let mut solver = WaveSolver::new(base.clone(), drift);
                let mut state = solver.initial_state(&InitialData::zero(&grid)).unwrap();
                for step in 0..grid.n_steps {
                    let noise = solver
                        .space_mut()
                        .sample_noise(StreamKey::new(314, lane::SOLVE, rep as u64, step as u64));
                    solver.step(&mut state, Some(&noise), None).unwrap();
                }
                let u = solver.u_physical(&state).values()[probe];
                m2 += u * u;
                m4 += u.powi(4);
            }
            (m2 / replicas as f64, m4 / replicas as f64)
        };
        let (m2a, m4a) = run(1000);
        let (m2b, m4b) = run(2000);
        for (a, b) in [(m2a, m2b), (m4a, m4b)] {
            let ratio = b / a;
            assert!((0.8..=1.25).contains(&ratio), "moment ratio {ratio}");
        }
    }

    #[test]
    fn lipschitz_stability_follows_gronwall_envelope() {
        // two runs, identical noise, initial positions differing by a
        // constant delta: the sup difference stays under the discrete
        // envelope e_n = delta + K sum (t_n - t_i) e_i dt
        let grid = PeriodicGrid::new(4.0, 16, 0.0625, 16).unwrap();
        let cov = SpatialCovariance::new(1.0).unwrap();
        let base = SpectralSpace::new(grid, cov).unwrap();
        let k = 1.0;
        let drift = Drift::new(DriftKind::SineK, k).unwrap();
        let delta = 0.05;

        let mut sa = WaveSolver::new(base.clone(), drift);
        let mut sb = WaveSolver::new(base.clone(), drift);
        let mut state_a = sa.initial_state(&InitialData::zero(&grid)).unwrap();
        let init_b = InitialData::new(
            &grid,
            GridFunction::constant(&grid, delta),
            GridFunction::zeros(&grid),
            0.0,
        )
        .unwrap();
        let mut state_b = sb.initial_state(&init_b).unwrap();

        let mut envelope = vec![delta];
        let mut noise_space = base.clone();
        for step in 0..grid.n_steps {
            let noise = noise_space.sample_noise(StreamKey::new(99, lane::SOLVE, 0, step as u64));
            sa.step(&mut state_a, Some(&noise), None).unwrap();
            sb.step(&mut state_b, Some(&noise), None).unwrap();

            let t_next = state_a.t;
            let mut e = delta;
            for (i, ei) in envelope.iter().enumerate() {
                let ti = grid.dt * i as f64;
                e += k * (t_next - ti) * ei * grid.dt;
            }
            envelope.push(e);

            let ua = sa.u_physical(&state_a);
            let ub = sb.u_physical(&state_b);
            let diff = ua
                .values()
                .iter()
                .zip(ub.values())
                .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(
                diff <= e * 1.05,
                "step {step}: diff {diff} exceeds envelope {e}"
            );
        }
    }
}
