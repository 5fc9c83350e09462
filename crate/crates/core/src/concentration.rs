//! Monte-Carlo checks of the concentration consequences of the transport
//! inequality: the exponential-moment bound
//! `E exp(lambda (U - EU)) <= exp(C lambda^2 ||U||_Lip^2 / 2)` for Lipschitz
//! functionals of the path, and the Hoeffding-type tail bound
//! `P(A - EA > r) <= exp(-r^2 / (2 C ||V||_Lip^2))` for the time-averaged
//! spatial sup of V(u).
//!
//! The sup over the box stands in for the sup over all of space: compact
//! data plus unit propagation speed keep the dynamics inside the box for
//! horizons below L/2.

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::solver::{Drift, InitialData, WaveSolver};
use crate::spectral::SpectralSpace;
use crate::transport::Probe;
use rayon::prelude::*;
use serde::Serialize;

/// Pointwise map V in the time-averaged functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VMap {
    Identity,
    Zero,
    Scaled(f64),
}

impl VMap {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            VMap::Identity => u,
            VMap::Zero => 0.0,
            VMap::Scaled(a) => a * u,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            VMap::Identity => 1.0,
            VMap::Zero => 0.0,
            VMap::Scaled(a) => a.abs(),
        }
    }
}

/// Lipschitz functional of the discretized path.
#[derive(Debug, Clone)]
pub enum FunctionalKind {
    /// Average of the field over a probe set; 1-Lipschitz for the sup norm.
    ProbeAverage(Vec<Probe>),
    /// `(1/T) sum_i dt max_x |V(u(t_i, x))|`; Lipschitz constant ||V||_Lip.
    TimeAverageSup(VMap),
    /// Constant functional (diagnostics; Lipschitz constant 0).
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct LipFunctional {
    pub kind: FunctionalKind,
}

impl LipFunctional {
    pub fn probe_average(probes: Vec<Probe>) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::Config("probe average needs at least one probe".into()));
        }
        Ok(Self { kind: FunctionalKind::ProbeAverage(probes) })
    }

    pub fn time_average_sup(v: VMap) -> Self {
        Self { kind: FunctionalKind::TimeAverageSup(v) }
    }

    pub fn constant(c: f64) -> Self {
        Self { kind: FunctionalKind::Constant(c) }
    }

    /// Lipschitz constant of the inner pointwise map (1 for probe averages).
    pub fn v_lip(&self) -> f64 {
        match &self.kind {
            FunctionalKind::ProbeAverage(_) => 1.0,
            FunctionalKind::TimeAverageSup(v) => v.lipschitz(),
            FunctionalKind::Constant(_) => 0.0,
        }
    }

    /// Induced Lipschitz constant with respect to the uniform norm.
    pub fn u_lip(&self) -> f64 {
        match &self.kind {
            FunctionalKind::ProbeAverage(_) => 1.0,
            FunctionalKind::TimeAverageSup(v) => v.lipschitz(),
            FunctionalKind::Constant(_) => 0.0,
        }
    }
}

/// Simulate `replicas` independent paths and evaluate the functional on
/// each. Replicas are embarrassingly parallel; the output order is fixed by
/// the replica index.
pub fn evaluate_functional_samples(
    base: &SpectralSpace,
    init: &InitialData,
    drift: Drift,
    functional: &LipFunctional,
    replicas: usize,
    seed: u64,
    lane: u32,
) -> Result<Vec<f64>> {
    if replicas == 0 {
        return Err(Error::Config("need at least one replica".into()));
    }
    let grid = *base.grid();
    (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let mut solver = WaveSolver::new(base.clone(), drift);
            let mut state = solver.initial_state(init)?;
            let mut probe_acc = 0.0;
            let mut time_avg = 0.0;
            for step in 0..grid.n_steps {
                let noise = solver
                    .space_mut()
                    .sample_noise(StreamKey::new(seed, lane, rep as u64, step as u64));
                solver.step(&mut state, Some(&noise), None)?;
                match &functional.kind {
                    FunctionalKind::Constant(_) => {}
                    FunctionalKind::ProbeAverage(probes) => {
                        let u = solver.u_physical(&state);
                        for probe in probes {
                            if probe.step == step + 1 {
                                probe_acc += u.values()[grid.idx(probe.ix, probe.iy, probe.iz)];
                            }
                        }
                    }
                    FunctionalKind::TimeAverageSup(v) => {
                        let u = solver.u_physical(&state);
                        let sup = u
                            .values()
                            .iter()
                            .fold(0.0_f64, |acc, &x| acc.max(v.eval(x).abs()));
                        time_avg += grid.dt * sup;
                    }
                }
            }
            Ok(match &functional.kind {
                FunctionalKind::Constant(c) => *c,
                FunctionalKind::ProbeAverage(probes) => probe_acc / probes.len() as f64,
                FunctionalKind::TimeAverageSup(_) => time_avg / grid.horizon(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MgfEntry {
    pub lambda: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub bound: f64,
    pub pass: bool,
    pub overflow: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MgfReport {
    pub entries: Vec<MgfEntry>,
    pub all_pass: bool,
    pub c_const: f64,
    pub u_lip: f64,
    pub centered_mean: f64,
    /// Residual of the least-squares quadratic fit to log MGF(lambda):
    /// sub-Gaussian behaviour keeps it small.
    pub quad_fit_residual: f64,
}

/// Compare the empirical moment generating function of `U - mean(U)` with
/// `exp(C lambda^2 u_lip^2 / 2)` on a lambda grid. PASS needs the estimate
/// under the bound plus three standard errors for every lambda; overflowing
/// lambdas are reported and excluded from the verdict.
pub fn mgf_report_from_samples(samples: &[f64], lambda_grid: &[f64], c_const: f64, u_lip: f64) -> Result<MgfReport> {
    if samples.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut entries = Vec::with_capacity(lambda_grid.len());
    let mut all_pass = true;
    for &lambda in lambda_grid {
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        let mut overflow = false;
        for &s in samples {
            let e = (lambda * (s - mean)).exp();
            if !e.is_finite() || e > 1e300 {
                overflow = true;
                break;
            }
            acc += e;
            acc_sq += e * e;
        }
        let bound = (c_const * lambda * lambda * u_lip * u_lip / 2.0).exp();
        if overflow {
            entries.push(MgfEntry { lambda, estimate: f64::INFINITY, std_err: f64::INFINITY, bound, pass: false, overflow: true });
            continue;
        }
        let estimate = acc / n;
        let var = (acc_sq / n - estimate * estimate).max(0.0);
        let std_err = (var / n).sqrt();
        let pass = estimate <= bound + 3.0 * std_err;
        all_pass &= pass;
        entries.push(MgfEntry { lambda, estimate, std_err, bound, pass, overflow: false });
    }
    // least-squares fit log MGF ~ a lambda^2 over the finite entries
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| !e.overflow && e.estimate > 0.0)
        .map(|e| (e.lambda, e.estimate.ln()))
        .collect();
    let quad_fit_residual = if pts.len() >= 2 {
        let sxx: f64 = pts.iter().map(|(l, _)| l.powi(4)).sum();
        let sxy: f64 = pts.iter().map(|(l, y)| l * l * y).sum();
        let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        pts.iter().map(|(l, y)| (y - a * l * l).powi(2)).sum::<f64>().sqrt()
    } else {
        0.0
    };
    Ok(MgfReport { entries, all_pass, c_const, u_lip, centered_mean: mean, quad_fit_residual })
}

/// Simulate and check in one call.
pub fn mgf_bound_check(
    base: &SpectralSpace,
    init: &InitialData,
    drift: Drift,
    functional: &LipFunctional,
    replicas: usize,
    seed: u64,
    lambda_grid: &[f64],
    c_const: f64,
) -> Result<MgfReport> {
    let samples = evaluate_functional_samples(
        base,
        init,
        drift,
        functional,
        replicas,
        seed,
        crate::rng::lane::CONCENTRATION,
    )?;
    mgf_report_from_samples(&samples, lambda_grid, c_const, functional.u_lip())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailEntry {
    pub r: f64,
    pub frequency: f64,
    pub bound: f64,
    pub sigma: f64,
    pub pass: bool,
    /// Bound below 1/replicas: unfalsifiable at this sample size.
    pub vacuous: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub entries: Vec<TailEntry>,
    pub all_pass: bool,
    pub c_const: f64,
    pub v_lip: f64,
    pub centered_mean: f64,
}

/// Empirical tail frequencies of `A - mean(A)` against
/// `exp(-r^2 / (2 C v_lip^2))`, with a binomial three-sigma allowance.
pub fn tail_report_from_samples(samples: &[f64], r_grid: &[f64], c_const: f64, v_lip: f64) -> Result<TailReport> {
    if samples.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut entries = Vec::with_capacity(r_grid.len());
    let mut all_pass = true;
    for &r in r_grid {
        let count = samples.iter().filter(|&&s| s - mean > r).count();
        let frequency = count as f64 / n;
        let bound = if v_lip == 0.0 {
            if r > 0.0 {
                0.0
            } else {
                1.0
            }
        } else {
            (-r * r / (2.0 * c_const * v_lip * v_lip)).exp()
        };
        let sigma = (frequency * (1.0 - frequency) / n).sqrt().max(1.0 / n);
        let pass = frequency <= bound + 3.0 * sigma;
        let vacuous = bound < 1.0 / n;
        all_pass &= pass;
        entries.push(TailEntry { r, frequency, bound, sigma, pass, vacuous });
    }
    Ok(TailReport { entries, all_pass, c_const, v_lip, centered_mean: mean })
}

/// Simulate and check the Hoeffding-type tail in one call.
pub fn hoeffding_tail_check(
    base: &SpectralSpace,
    init: &InitialData,
    drift: Drift,
    functional: &LipFunctional,
    replicas: usize,
    seed: u64,
    r_grid: &[f64],
    c_const: f64,
) -> Result<TailReport> {
    let samples = evaluate_functional_samples(
        base,
        init,
        drift,
        functional,
        replicas,
        seed,
        crate::rng::lane::CONCENTRATION,
    )?;
    tail_report_from_samples(&samples, r_grid, c_const, functional.v_lip())
}

/// Default deviation grid `{0.25, 0.5, 1, 1.5, 2} sqrt(C)`.
pub fn default_r_grid(c_const: f64) -> Vec<f64> {
    [0.25, 0.5, 1.0, 1.5, 2.0].iter().map(|f| f * c_const.sqrt()).collect()
}

/// Default lambda grid `{0.25, 0.5, 1, 2}`.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use crate::rng::{lane, stream};
    use crate::solver::DriftKind;
    use crate::spectral::SpatialCovariance;
    use rand::Rng;

    #[test]
    fn constant_functional_passes() {
        let samples = vec![3.0; 100];
        let report = mgf_report_from_samples(&samples, &[0.5, 1.0, 2.0], 0.5, 0.0).unwrap();
        assert!(report.all_pass);
        for e in &report.entries {
            assert!((e.estimate - 1.0).abs() < 1e-12);
            assert!(e.bound >= 1.0);
        }
    }

    #[test]
    fn lambda_zero_is_trivial() {
        let mut rng = stream(StreamKey::new(1, lane::CONCENTRATION, 0, 0));
        let samples: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let report = mgf_report_from_samples(&samples, &[0.0], 0.5, 1.0).unwrap();
        assert!((report.entries[0].estimate - 1.0).abs() < 1e-12);
        assert_eq!(report.entries[0].bound, 1.0);
        assert!(report.entries[0].pass);
    }

    #[test]
    fn overflow_is_flagged() {
        // heavy-tail overflow is reported as truncation, not as a verdict
        // failure: the offending lambda drops out of the grid
        let samples = vec![0.0, 1e4];
        let report = mgf_report_from_samples(&samples, &[0.5], 0.5, 1.0).unwrap();
        assert!(report.entries[0].overflow);
        assert!(!report.entries[0].pass);
        assert!(report.all_pass);
    }

    #[test]
    fn tail_r_zero_and_zero_map() {
        let mut rng = stream(StreamKey::new(2, lane::CONCENTRATION, 0, 0));
        let samples: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let report = tail_report_from_samples(&samples, &[0.0], 0.5, 1.0).unwrap();
        assert_eq!(report.entries[0].bound, 1.0);
        assert!(report.entries[0].pass);
        // V == 0: all deviations vanish
        let zeros = vec![0.0; 100];
        let report = tail_report_from_samples(&zeros, &[0.0, 0.3], 0.5, 0.0).unwrap();
        assert!(report.all_pass);
    }

    #[test]
    fn bound_monotonicity() {
        let samples = vec![0.0; 10];
        let rs = [0.1, 0.2, 0.5, 1.0, 2.0];
        let report = tail_report_from_samples(&samples, &rs, 0.5, 1.0).unwrap();
        for pair in report.entries.windows(2) {
            assert!(pair[1].bound <= pair[0].bound);
        }
        let lo = tail_report_from_samples(&samples, &rs, 0.25, 1.0).unwrap();
        let hi = tail_report_from_samples(&samples, &rs, 1.0, 1.0).unwrap();
        for (a, b) in lo.entries.iter().zip(&hi.entries) {
            assert!(b.bound >= a.bound);
        }
    }

    #[test]
    fn vacuous_bounds_are_reported() {
        let samples = vec![0.0; 100];
        let report = tail_report_from_samples(&samples, &[10.0], 0.01, 1.0).unwrap();
        assert!(report.entries[0].vacuous);
        assert!(report.entries[0].pass);
    }

    #[test]
    fn bound_formulas_at_reference_constants() {
        // tail bound exp(-r^2 / (2 C)) at r = 1.5, C = (1/pi) e^(1/2)
        let c = (1.0 / std::f64::consts::PI) * 0.5_f64.exp();
        let samples = vec![0.0; 10];
        let tail = tail_report_from_samples(&samples, &[1.5], c, 1.0).unwrap();
        assert!((tail.entries[0].bound - 0.1172).abs() < 2e-4, "{}", tail.entries[0].bound);
        // mgf bound exp(C lambda^2 / 2) at lambda = 1
        let mgf = mgf_report_from_samples(&samples, &[1.0], c, 1.0).unwrap();
        assert!((mgf.entries[0].bound - (0.26240_f64).exp()).abs() < 2e-4);
    }

    #[test]
    fn centering_is_recomputed() {
        let samples_a = vec![1.0, 2.0, 3.0];
        let samples_b = vec![101.0, 102.0, 103.0];
        let ra = mgf_report_from_samples(&samples_a, &[1.0], 0.5, 1.0).unwrap();
        let rb = mgf_report_from_samples(&samples_b, &[1.0], 0.5, 1.0).unwrap();
        assert!((ra.centered_mean - 2.0).abs() < 1e-12);
        assert!((rb.centered_mean - 102.0).abs() < 1e-12);
        assert!((ra.entries[0].estimate - rb.entries[0].estimate).abs() < 1e-9);
    }

    #[test]
    fn functional_evaluation_shapes() {
        let grid = PeriodicGrid::new(2.0, 8, 0.1, 4).unwrap();
        let base = SpectralSpace::new(grid, SpatialCovariance::new(1.0).unwrap()).unwrap();
        let drift = Drift::new(DriftKind::SineK, 1.0).unwrap();
        let init = InitialData::zero(&grid);
        let probes = vec![Probe { step: 4, ix: 4, iy: 4, iz: 4 }, Probe { step: 2, ix: 1, iy: 2, iz: 3 }];
        let f = LipFunctional::probe_average(probes).unwrap();
        let samples =
            evaluate_functional_samples(&base, &init, drift, &f, 16, 50, lane::CONCENTRATION).unwrap();
        assert_eq!(samples.len(), 16);
        assert!(samples.iter().all(|s| s.is_finite()));
        // reproducible across calls
        let again =
            evaluate_functional_samples(&base, &init, drift, &f, 16, 50, lane::CONCENTRATION).unwrap();
        assert_eq!(samples, again);

        let g = LipFunctional::time_average_sup(VMap::Identity);
        let sup_samples =
            evaluate_functional_samples(&base, &init, drift, &g, 8, 51, lane::CONCENTRATION).unwrap();
        assert!(sup_samples.iter().all(|s| *s >= 0.0));
        assert_eq!(g.u_lip(), 1.0);
        assert_eq!(f.u_lip(), 1.0);
    }

    #[test]
    fn sub_gaussian_quadratic_fit() {
        // Gaussian samples: log MGF is quadratic, so the residual is small
        let mut rng = stream(StreamKey::new(5, lane::CONCENTRATION, 0, 0));
        let samples: Vec<f64> = (0..20_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let report = mgf_report_from_samples(&samples, &[0.25, 0.5, 1.0], 2.0, 1.0).unwrap();
        assert!(report.quad_fit_residual < 0.05, "residual {}", report.quad_fit_residual);
        assert!(report.all_pass);
    }
}
