//! Subcommand orchestration: replica dispatch, fixed-order reductions, and
//! artifact emission. Identical (config, seed) pairs produce byte-identical
//! artifacts at any worker count: every replica draws from its own counter
//! stream and all reductions run in replica order after the parallel phase.

use crate::concentration::{
    default_lambda_grid, default_r_grid, mgf_report_from_samples, tail_report_from_samples,
    evaluate_functional_samples, LipFunctional, VMap,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::girsanov::{gronwall_certificate, relative_entropy, simulate_coupled, DriftShift};
use crate::io::{fmt_f64, write_csv_artifact, write_noise_dump, write_snapshot};
use crate::rng::{lane, StreamKey};
use crate::solver::{m_of_t, spherical_mass_check, QuadratureSpec, WaveSolver};
use crate::spectral::SpectralSpace;
use crate::transport::{t2_check, Probe, Projection};
use rayon::prelude::*;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    SampleNoise,
    Solve,
    Couple,
    VerifyT2,
    Concentration,
    Mconst,
}

/// Functional selector for the concentration subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalChoice {
    ProbeAverage,
    TimeAverageSup,
}

impl FunctionalChoice {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "probe-average" => Ok(Self::ProbeAverage),
            "time-average-sup" => Ok(Self::TimeAverageSup),
            other => Err(Error::Config(format!(
                "unknown functional `{other}` (expected probe-average | time-average-sup)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub lines: Vec<String>,
    pub verdict_failed: bool,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub functional: Option<FunctionalChoice>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { threads: None, functional: None }
    }
}

pub fn run(sub: Subcommand, config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| dispatch(sub, config, options))
}

fn dispatch(sub: Subcommand, config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    match sub {
        Subcommand::SampleNoise => sample_noise(config),
        Subcommand::Solve => solve(config),
        Subcommand::Couple => couple(config),
        Subcommand::VerifyT2 => verify_t2(config),
        Subcommand::Concentration => {
            concentration(config, options.functional.unwrap_or(FunctionalChoice::ProbeAverage))
        }
        Subcommand::Mconst => mconst(config),
    }
}

fn out_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn base_space(config: &ExperimentConfig) -> Result<SpectralSpace> {
    SpectralSpace::new(config.grid()?, config.covariance()?)
}

/// Probes used when the config leaves the list empty: a fixed spread over
/// the time mesh and the box.
pub fn default_probes(config: &ExperimentConfig) -> Vec<Probe> {
    let n = config.points_per_axis;
    let steps = config.n_steps;
    let q = |f: f64| ((steps as f64 * f).round() as usize).clamp(1, steps);
    let g = |f: f64| ((n as f64 * f) as usize).min(n - 1);
    vec![
        Probe { step: q(0.25), ix: g(0.2), iy: g(0.2), iz: g(0.2) },
        Probe { step: q(0.5), ix: g(0.7), iy: g(0.2), iz: g(0.45) },
        Probe { step: q(0.75), ix: g(0.2), iy: g(0.7), iz: g(0.7) },
        Probe { step: q(1.0), ix: g(0.7), iy: g(0.7), iz: g(0.2) },
        Probe { step: q(1.0), ix: g(0.5), iy: g(0.5), iz: g(0.5) },
        Probe { step: q(0.5), ix: g(0.5), iy: g(0.5), iz: g(0.5) },
        Probe { step: q(0.75), ix: g(0.8), iy: g(0.3), iz: g(0.55) },
        Probe { step: q(0.25), ix: g(0.5), iy: g(0.5), iz: g(0.5) },
    ]
}

fn sample_noise(config: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = out_dir(config)?;
    let base = base_space(config)?;
    let grid = *base.grid();
    let slabs: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut space = base.clone();
            space.sample_noise(StreamKey::new(config.seed, lane::SOLVE, rep as u64, 0))
        })
        .collect();

    let mut rows = Vec::with_capacity(slabs.len());
    let mut artifacts = Vec::new();
    for (rep, noise) in slabs.iter().enumerate() {
        let path = dir.join(format!("noise_rep{rep}.bin"));
        write_noise_dump(&path, &grid, &noise.slab)?;
        let n = noise.slab.len() as f64;
        let mean = noise.slab.values().iter().sum::<f64>() / n;
        let var = noise.slab.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        rows.push(vec![rep.to_string(), fmt_f64(mean), fmt_f64(var)]);
        artifacts.push(path);
    }
    let csv = dir.join("noise_stats.csv");
    write_csv_artifact(&csv, config, &["replica", "mean", "variance"], &rows)?;
    artifacts.push(csv);
    Ok(RunOutcome {
        lines: vec![format!("wrote {} noise dumps to {}", config.replicas, dir.display())],
        verdict_failed: false,
        artifacts,
    })
}

fn solve(config: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = out_dir(config)?;
    let base = base_space(config)?;
    let grid = *base.grid();
    let drift = config.drift()?;
    let init = config.initial_data(&grid)?;

    struct ReplicaResult {
        sup_u: f64,
        energy: f64,
        final_u: Option<crate::grid::GridFunction>,
    }
    let results: Vec<ReplicaResult> = (0..config.replicas)
        .into_par_iter()
        .map(|rep| -> Result<ReplicaResult> {
            let mut solver = WaveSolver::new(base.clone(), drift);
            let mut state = solver.initial_state(&init)?;
            for step in 0..grid.n_steps {
                let noise = solver
                    .space_mut()
                    .sample_noise(StreamKey::new(config.seed, lane::SOLVE, rep as u64, step as u64));
                solver.step(&mut state, Some(&noise), None)?;
            }
            let u = solver.u_physical(&state);
            Ok(ReplicaResult {
                sup_u: u.sup_norm(),
                energy: solver.energy(&state),
                final_u: (rep == 0).then_some(u),
            })
        })
        .collect::<Result<_>>()?;

    let mut artifacts = Vec::new();
    if let Some(u0) = results.first().and_then(|r| r.final_u.as_ref()) {
        let snap = dir.join("u_final_rep0.bin");
        write_snapshot(&snap, &grid, grid.horizon(), u0)?;
        artifacts.push(snap);
    }
    let rows: Vec<Vec<String>> = results
        .iter()
        .enumerate()
        .map(|(rep, r)| vec![rep.to_string(), fmt_f64(r.sup_u), fmt_f64(r.energy)])
        .collect();
    let csv = dir.join("solve_summary.csv");
    write_csv_artifact(&csv, config, &["replica", "sup_u_final", "energy_final"], &rows)?;
    artifacts.push(csv);
    Ok(RunOutcome {
        lines: vec![format!("solved {} replicas to T = {}", config.replicas, grid.horizon())],
        verdict_failed: false,
        artifacts,
    })
}

fn require_shift(config: &ExperimentConfig, space: &mut SpectralSpace) -> Result<DriftShift> {
    let spec = config
        .shift
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs a [shift] section or --shift".into()))?;
    DriftShift::from_spec(space, spec)
}

fn couple(config: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = out_dir(config)?;
    let mut base = base_space(config)?;
    let grid = *base.grid();
    let drift = config.drift()?;
    let init = config.initial_data(&grid)?;
    let shift = require_shift(config, &mut base)?;

    let outs: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|rep| simulate_coupled(&base, &init, drift, &shift, config.seed, rep as u64, &[]))
        .collect::<Result<_>>()?;

    let m_t = m_of_t(grid.horizon(), base.covariance(), &QuadratureSpec::default())?;
    let records: Vec<_> = outs.iter().map(|o| o.record).collect();
    let report = gronwall_certificate(&records, grid.horizon(), config.k_lipschitz, m_t)?;

    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.replica.to_string(),
                fmt_f64(r.eta_t),
                fmt_f64(r.i1_max),
                fmt_f64(r.i2_max),
                fmt_f64(r.rn_log_weight),
                fmt_f64(r.norm_sq),
                fmt_f64(report.c_const),
            ]
        })
        .collect();
    let csv = dir.join("couple_report.csv");
    write_csv_artifact(
        &csv,
        config,
        &["replica", "eta_t", "i1_max", "i2_max", "rn_log_weight", "norm_sq", "c"],
        &rows,
    )?;
    let verdict = report.mean_bound_pass && report.i2_pathwise_pass;
    let ratio_text = match report.ratio {
        Some(r) => format!("{r:.6}"),
        None => "degenerate".into(),
    };
    Ok(RunOutcome {
        lines: vec![
            format!(
                "coupling certificate: mean eta = {:.6}, C = {:.6}, ratio = {}, mean bound {}, pathwise I2 {}",
                report.mean_eta,
                report.c_const,
                ratio_text,
                pass_str(report.mean_bound_pass),
                pass_str(report.i2_pathwise_pass),
            ),
        ],
        verdict_failed: !verdict,
        artifacts: vec![csv],
    })
}

fn verify_t2(config: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = out_dir(config)?;
    let mut base = base_space(config)?;
    let grid = *base.grid();
    let drift = config.drift()?;
    let init = config.initial_data(&grid)?;
    let shift = require_shift(config, &mut base)?;
    let probes = if config.probes.is_empty() { default_probes(config) } else { config.probes.clone() };
    let projection = Projection::new(probes.clone(), &grid)?;
    let report = t2_check(&base, &init, drift, &shift, &projection, config.replicas, config.seed)?;

    let probe_text = probes
        .iter()
        .map(|p| format!("{}:{}:{}:{}", p.step, p.ix, p.iy, p.iz))
        .collect::<Vec<_>>()
        .join(";");
    let rows = vec![vec![
        probe_text,
        fmt_f64(report.d),
        fmt_f64(report.error_bar),
        fmt_f64(report.entropy),
        fmt_f64(report.c_const),
        fmt_f64(report.bound),
        pass_str(report.pass).to_string(),
    ]];
    let csv = dir.join("t2_report.csv");
    write_csv_artifact(
        &csv,
        config,
        &["probes", "d", "error_bar", "entropy", "c", "bound", "verdict"],
        &rows,
    )?;
    let mut lines = vec![format!(
        "T2 projection check: D = {:.6} (+- {:.6}) vs bound {:.6} -> {}",
        report.d,
        report.error_bar,
        report.bound,
        pass_str(report.pass)
    )];
    if report.inconsistency {
        lines.push("warning: zero-entropy shift with nonzero distance beyond the error bar".into());
    }
    Ok(RunOutcome { lines, verdict_failed: !report.pass, artifacts: vec![csv] })
}

fn concentration(config: &ExperimentConfig, choice: FunctionalChoice) -> Result<RunOutcome> {
    let dir = out_dir(config)?;
    let base = base_space(config)?;
    let grid = *base.grid();
    let drift = config.drift()?;
    let init = config.initial_data(&grid)?;
    let m_t = m_of_t(grid.horizon(), base.covariance(), &QuadratureSpec::default())?;
    let t = grid.horizon();
    let k = config.k_lipschitz;
    let c_const = t * m_t * (t.powi(4) * k * k / 2.0).exp();

    let csv = dir.join("concentration_report.csv");
    let (lines, verdict_failed) = match choice {
        FunctionalChoice::ProbeAverage => {
            let probes = if config.probes.is_empty() { default_probes(config) } else { config.probes.clone() };
            let functional = LipFunctional::probe_average(probes)?;
            let samples = evaluate_functional_samples(
                &base,
                &init,
                drift,
                &functional,
                config.replicas,
                config.seed,
                lane::CONCENTRATION,
            )?;
            let report =
                mgf_report_from_samples(&samples, &default_lambda_grid(), c_const, functional.u_lip())?;
            let rows: Vec<Vec<String>> = report
                .entries
                .iter()
                .map(|e| {
                    vec![
                        fmt_f64(e.lambda),
                        fmt_f64(e.estimate),
                        fmt_f64(e.std_err),
                        fmt_f64(e.bound),
                        pass_str(e.pass).to_string(),
                        e.overflow.to_string(),
                    ]
                })
                .collect();
            write_csv_artifact(
                &csv,
                config,
                &["lambda", "mgf", "std_err", "bound", "verdict", "overflow"],
                &rows,
            )?;
            (
                vec![format!(
                    "exponential-moment check (C = {:.6}): {}",
                    c_const,
                    pass_str(report.all_pass)
                )],
                !report.all_pass,
            )
        }
        FunctionalChoice::TimeAverageSup => {
            let functional = LipFunctional::time_average_sup(VMap::Identity);
            let samples = evaluate_functional_samples(
                &base,
                &init,
                drift,
                &functional,
                config.replicas,
                config.seed,
                lane::CONCENTRATION,
            )?;
            let report =
                tail_report_from_samples(&samples, &default_r_grid(c_const), c_const, functional.v_lip())?;
            let rows: Vec<Vec<String>> = report
                .entries
                .iter()
                .map(|e| {
                    vec![
                        fmt_f64(e.r),
                        fmt_f64(e.frequency),
                        fmt_f64(e.bound),
                        fmt_f64(e.sigma),
                        pass_str(e.pass).to_string(),
                        e.vacuous.to_string(),
                    ]
                })
                .collect();
            write_csv_artifact(
                &csv,
                config,
                &["r", "frequency", "bound", "sigma", "verdict", "vacuous"],
                &rows,
            )?;
            (
                vec![format!("hoeffding tail check (C = {:.6}): {}", c_const, pass_str(report.all_pass))],
                !report.all_pass,
            )
        }
    };
    Ok(RunOutcome { lines, verdict_failed, artifacts: vec![csv] })
}

fn mconst(config: &ExperimentConfig) -> Result<RunOutcome> {
    let cov = config.covariance()?;
    let t = config.horizon();
    let m_t = m_of_t(t, &cov, &QuadratureSpec::default())?;
    let k = config.k_lipschitz;
    let c_const = t * m_t * (t.powi(4) * k * k / 2.0).exp();
    Ok(RunOutcome {
        lines: vec![format!("M(T)={m_t:.6}"), format!("C(T,K)={c_const:.6}")],
        verdict_failed: false,
        artifacts: vec![],
    })
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Consistency probe used by the determinism tests: the discrete kernel mass
/// identity evaluated on the configured grid.
pub fn kernel_mass_identity(config: &ExperimentConfig, t: f64) -> Result<f64> {
    let mut space = base_space(config)?;
    spherical_mass_check(&mut space, t)
}

/// Relative entropy of the configured shift.
pub fn configured_entropy(config: &ExperimentConfig) -> Result<f64> {
    let mut base = base_space(config)?;
    let shift = require_shift(config, &mut base)?;
    Ok(relative_entropy(&shift))
}
