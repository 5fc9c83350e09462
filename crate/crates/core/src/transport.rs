//! Wasserstein-2 estimation on finite-dimensional projections of the path
//! laws, and the transport-entropy verdict.
//!
//! Path-space W2 under the uniform norm is not computable; coordinate
//! projections are 1-Lipschitz, so the projected distance lower-bounds the
//! path distance and `D <= sqrt(2 C H)` is a necessary-condition check of
//! the transport inequality, never a proof.

use crate::error::{Error, Result};
use crate::girsanov::{relative_entropy, simulate_coupled, DriftShift};
use crate::grid::PeriodicGrid;
use crate::rng::{lane, stream, StreamKey};
use crate::solver::{m_of_t, Drift, InitialData, QuadratureSpec};
use crate::spectral::SpectralSpace;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One observation point (t, x) on the simulated mesh: the state after
/// `step` steps at grid indices (ix, iy, iz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub step: usize,
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
}

impl Probe {
    pub fn validate(&self, grid: &PeriodicGrid) -> Result<()> {
        let n = grid.points_per_axis;
        if self.step == 0 || self.step > grid.n_steps {
            return Err(Error::Config(format!(
                "probe step {} outside 1..={}",
                self.step, grid.n_steps
            )));
        }
        if self.ix >= n || self.iy >= n || self.iz >= n {
            return Err(Error::Config(format!(
                "probe index ({}, {}, {}) outside the {n}^3 grid",
                self.ix, self.iy, self.iz
            )));
        }
        Ok(())
    }
}

/// A finite-dimensional marginal: up to 32 probes.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    probes: Vec<Probe>,
}

impl Projection {
    pub fn new(probes: Vec<Probe>, grid: &PeriodicGrid) -> Result<Self> {
        if probes.is_empty() || probes.len() > 32 {
            return Err(Error::Config(format!(
                "projection needs between 1 and 32 probes, got {}",
                probes.len()
            )));
        }
        for p in &probes {
            p.validate(grid)?;
        }
        Ok(Self { probes })
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn dim(&self) -> usize {
        self.probes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LawTag {
    P,
    Q,
}

/// Empirical law of a projection: n samples of an m-vector.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw {
    samples: Vec<Vec<f64>>,
    pub tag: LawTag,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<Vec<f64>>, tag: LawTag) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Config(format!("empirical law needs n >= 2 samples, got {}", samples.len())));
        }
        let m = samples[0].len();
        if m == 0 {
            return Err(Error::Config("empirical law needs at least one coordinate".into()));
        }
        for s in &samples {
            if s.len() != m {
                return Err(Error::GridMismatch { expected: m, got: s.len() });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { samples, tag })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// Closed-form W2 between Gaussians:
/// `sqrt(|m1 - m2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2))`.
pub fn w2_gaussian_exact(
    mean1: &[f64],
    cov1: &DMatrix<f64>,
    mean2: &[f64],
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let m = mean1.len();
    if mean2.len() != m || cov1.nrows() != m || cov1.ncols() != m || cov2.nrows() != m || cov2.ncols() != m {
        return Err(Error::GridMismatch { expected: m, got: mean2.len() });
    }
    let s2_half = psd_sqrt(cov2)?;
    let inner = &s2_half * cov1 * &s2_half;
    let cross = psd_sqrt(&inner)?;
    let mean_term: f64 = mean1.iter().zip(mean2).map(|(a, b)| (a - b) * (a - b)).sum();
    let trace_term = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term.max(0.0)).sqrt())
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if (m - &sym).amax() > 1e-8 * m.amax().max(1.0) {
        return Err(Error::Config("covariance matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1.0);
    if min < -1e-8 * scale {
        return Err(Error::NotPsd(min));
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// W2 estimate with a bootstrap error bar.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct W2Estimate {
    pub value: f64,
    pub error_bar: f64,
}

/// Sinkhorn defaults: regularization factor of the median pairwise cost,
/// iteration cap, convergence tolerance, bootstrap resamples.
pub const SINKHORN_EPS_FACTOR: f64 = 0.05;
pub const SINKHORN_MAX_ITER: usize = 1000;
/// Relative dual-value change below which the iteration is converged.
pub const SINKHORN_TOL: f64 = 1e-8;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Median pairwise cost between two clouds under the projected metric.
pub fn median_pairwise_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut costs: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| sq_dist(x, y)))
        .collect();
    costs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    if costs.is_empty() {
        0.0
    } else {
        costs[costs.len() / 2]
    }
}

/// Squared ground distance between projected samples: the max-coordinate
/// metric inherited from the uniform norm on path space. Coordinate
/// projections are 1-Lipschitz for this choice, which is what makes the
/// projected distance a lower bound on the path-space distance (and keeps
/// the synchronous-coupling bound `D^2 <= mean eta` valid).
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).fold(0.0, f64::max)
}

/// Empirical W2 between equal-size projected laws.
///
/// m = 1 with `reg == 0` uses the exact order-statistics coupling; m > 1
/// requires `reg > 0` and uses the debiased entropic (Sinkhorn divergence)
/// estimate. The error bar is the standard deviation over bootstrap
/// resamples of both clouds.
pub fn w2_empirical(law_p: &EmpiricalLaw, law_q: &EmpiricalLaw, reg: f64, seed: u64) -> Result<W2Estimate> {
    if law_p.dim() != law_q.dim() {
        return Err(Error::GridMismatch { expected: law_p.dim(), got: law_q.dim() });
    }
    if reg < 0.0 || !reg.is_finite() {
        return Err(Error::Config(format!("regularization must be nonnegative, got {reg}")));
    }
    if reg == 0.0 && law_p.dim() > 1 {
        return Err(Error::Unsupported(
            "exact coupling is only available for one-dimensional projections; pass reg > 0".into(),
        ));
    }
    let value = point_estimate(law_p.samples(), law_q.samples(), reg)?;
    let estimates: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(StreamKey::new(seed, lane::BOOTSTRAP, b as u64, 0));
            let xs = resample(law_p.samples(), &mut rng);
            let ys = resample(law_q.samples(), &mut rng);
            point_estimate(&xs, &ys, reg)
        })
        .collect::<Result<_>>()?;
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(W2Estimate { value, error_bar: var.sqrt() })
}

fn resample(samples: &[Vec<f64>], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..samples.len()).map(|_| samples[rng.gen_range(0..samples.len())].clone()).collect()
}

fn point_estimate(xs: &[Vec<f64>], ys: &[Vec<f64>], reg: f64) -> Result<f64> {
    if reg == 0.0 {
        return Ok(sorted_coupling_1d(xs, ys));
    }
    let div = sinkhorn_divergence(xs, ys, reg, SINKHORN_MAX_ITER, SINKHORN_TOL)?;
    Ok(div.max(0.0).sqrt())
}

/// Exact 1-d coupling: sort both samples and pair order statistics.
fn sorted_coupling_1d(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut a: Vec<f64> = xs.iter().map(|v| v[0]).collect();
    let mut b: Vec<f64> = ys.iter().map(|v| v[0]).collect();
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = a.len().min(b.len());
    let mut acc = 0.0;
    for i in 0..n {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    (acc / n as f64).sqrt()
}

/// Debiased entropic transport: `OT_e(x, y) - (OT_e(x, x) + OT_e(y, y)) / 2`
/// with the dual-objective Sinkhorn value; approximates squared W2.
pub fn sinkhorn_divergence(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<f64> {
    let xy = sinkhorn_value(xs, ys, eps, max_iter, tol)?;
    let xx = sinkhorn_symmetric_value(xs, eps, max_iter, tol)?;
    let yy = sinkhorn_symmetric_value(ys, eps, max_iter, tol)?;
    Ok(xy - 0.5 * (xx + yy))
}

/// Self-transport value `OT_e(x, x)` via the symmetric fixed point: both
/// potentials coincide, so the averaged update `f <- (f + T(f)) / 2` with
/// `T(f)_i = -e logsumexp_j(log_a + (f_j - C_ij)/e)` converges fast.
fn sinkhorn_symmetric_value(xs: &[Vec<f64>], eps: f64, max_iter: usize, tol: f64) -> Result<f64> {
    let n = xs.len();
    let mut cost = vec![0.0; n * n];
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in xs.iter().enumerate() {
            cost[i * n + j] = sq_dist(x, y);
        }
    }
    let max_cost = cost.iter().cloned().fold(0.0_f64, f64::max);
    let log_a = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut new_f = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut eps_k = (0.5 * max_cost).max(eps);
    let mut prev_value: Option<f64> = None;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let e = eps_k;
        let at_target = eps_k <= eps;
        let inv_e = 1.0 / e;
        for i in 0..n {
            let row = &cost[i * n..(i + 1) * n];
            let mut max_e = f64::NEG_INFINITY;
            for j in 0..n {
                let v = log_a + (f[j] - row[j]) * inv_e;
                shifted[j] = v;
                if v > max_e {
                    max_e = v;
                }
            }
            let mut sum = 0.0;
            for &v in shifted.iter() {
                sum += (v - max_e).exp();
            }
            new_f[i] = 0.5 * (f[i] - e * (max_e + sum.ln()));
        }
        std::mem::swap(&mut f, &mut new_f);
        let value = 2.0 * f.iter().sum::<f64>() / n as f64;
        if at_target {
            if let Some(prev) = prev_value {
                residual = (value - prev).abs() / (1.0 + value.abs());
                if residual < tol {
                    return Ok(value);
                }
            }
            prev_value = Some(value);
        }
        eps_k = (eps_k * 0.8).max(eps);
    }
    Err(Error::SinkhornNonConvergence { max_iter, residual })
}

/// Log-domain Sinkhorn on uniform marginals; returns the converged dual
/// objective `<f, a> + <g, b>`.
///
/// The regularization is annealed from half the maximum cost down to the
/// target (factor 0.8 per sweep): plain iterations at small eps crawl along
/// a slow manifold for strongly correlated clouds, while the annealed path
/// lands near the optimum before the fine-eps sweeps begin. Convergence is
/// declared on the relative change of the dual value once the target eps is
/// reached; Sinkhorn is block-coordinate ascent, so the value increases
/// monotonically.
fn sinkhorn_value(xs: &[Vec<f64>], ys: &[Vec<f64>], eps: f64, max_iter: usize, tol: f64) -> Result<f64> {
    let n = xs.len();
    let m = ys.len();
    let mut cost = vec![0.0; n * m];
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            cost[i * m + j] = sq_dist(x, y);
        }
    }
    let max_cost = cost.iter().cloned().fold(0.0_f64, f64::max);
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut eps_k = (0.5 * max_cost).max(eps);
    let mut prev_value: Option<f64> = None;
    let mut residual = f64::INFINITY;
    let mut shifted = vec![0.0; n.max(m)];
    for _ in 0..max_iter {
        let e = eps_k;
        let at_target = eps_k <= eps;
        // over-relaxation once the target regularization is reached
        let theta = if at_target { 1.5 } else { 1.0 };
        let inv_e = 1.0 / e;
        // f update: f_i = -e logsumexp_j(log_b + (g_j - C_ij)/e)
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            let mut max_e = f64::NEG_INFINITY;
            for j in 0..m {
                let v = log_b + (g[j] - row[j]) * inv_e;
                shifted[j] = v;
                if v > max_e {
                    max_e = v;
                }
            }
            let mut sum = 0.0;
            for &v in shifted[..m].iter() {
                sum += (v - max_e).exp();
            }
            let new = -e * (max_e + sum.ln());
            f[i] += theta * (new - f[i]);
        }
        // g update (column access)
        for j in 0..m {
            let mut max_e = f64::NEG_INFINITY;
            for i in 0..n {
                let v = log_a + (f[i] - cost[i * m + j]) * inv_e;
                shifted[i] = v;
                if v > max_e {
                    max_e = v;
                }
            }
            let mut sum = 0.0;
            for &v in shifted[..n].iter() {
                sum += (v - max_e).exp();
            }
            let new = -e * (max_e + sum.ln());
            g[j] += theta * (new - g[j]);
        }
        let value = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
        if at_target {
            if let Some(prev) = prev_value {
                residual = (value - prev).abs() / (1.0 + value.abs());
                if residual < tol {
                    return Ok(value);
                }
            }
            prev_value = Some(value);
        }
        eps_k = (eps_k * 0.8).max(eps);
    }
    Err(Error::SinkhornNonConvergence { max_iter, residual })
}

/// Transport-inequality verdict on one projection.
#[derive(Debug, Clone, Serialize)]
pub struct T2Report {
    pub dim: usize,
    pub replicas: usize,
    /// Projected W2 estimate between the coupled clouds (Q vs P).
    pub d: f64,
    pub error_bar: f64,
    pub entropy: f64,
    pub c_const: f64,
    /// sqrt(2 C H).
    pub bound: f64,
    pub pass: bool,
    /// Zero-entropy shift with a distance beyond the error bar.
    pub inconsistency: bool,
}

/// Sample both laws with common random numbers (the synchronous coupling),
/// project onto the probes, estimate W2, and compare with `sqrt(2 C H)`.
pub fn t2_check(
    base: &SpectralSpace,
    init: &InitialData,
    drift: Drift,
    shift: &DriftShift,
    projection: &Projection,
    replicas: usize,
    seed: u64,
) -> Result<T2Report> {
    if replicas < 2 {
        return Err(Error::Config(format!("need at least 2 replicas, got {replicas}")));
    }
    let outs: Vec<_> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut space = base.clone();
            let _ = &mut space;
            simulate_coupled(&space, init, drift, shift, seed, rep as u64, projection.probes())
        })
        .collect::<Result<_>>()?;
    let q_samples: Vec<Vec<f64>> = outs.iter().map(|o| o.probe_u.clone()).collect();
    let p_samples: Vec<Vec<f64>> = outs.iter().map(|o| o.probe_v.clone()).collect();
    let law_q = EmpiricalLaw::new(q_samples, LawTag::Q)?;
    let law_p = EmpiricalLaw::new(p_samples, LawTag::P)?;

    let reg = if projection.dim() == 1 {
        0.0
    } else {
        SINKHORN_EPS_FACTOR * median_pairwise_cost(law_p.samples(), law_q.samples()).max(1e-12)
    };
    let estimate = w2_empirical(&law_p, &law_q, reg, seed)?;

    let grid = base.grid();
    let entropy = relative_entropy(shift);
    let m_t = m_of_t(grid.horizon(), base.covariance(), &QuadratureSpec::default())?;
    let t = grid.horizon();
    let k = drift.lipschitz;
    let c_const = t * m_t * (t.powi(4) * k * k / 2.0).exp();
    let bound = (2.0 * c_const * entropy).sqrt();
    let pass = estimate.value <= bound + estimate.error_bar;
    let inconsistency = entropy == 0.0 && estimate.value > estimate.error_bar;
    Ok(T2Report {
        dim: projection.dim(),
        replicas,
        d: estimate.value,
        error_bar: estimate.error_bar,
        entropy,
        c_const,
        bound,
        pass,
        inconsistency,
    })
}
