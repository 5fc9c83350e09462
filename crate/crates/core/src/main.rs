use clap::{Parser, Subcommand as ClapSubcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use wavet2::config::ExperimentConfig;
use wavet2::error::Error;
use wavet2::girsanov::ShiftSpec;
use wavet2::runner::{run, FunctionalChoice, RunOptions, Subcommand};
use wavet2::transport::Probe;

/// Exit codes: 0 success, 2 configuration error, 3 numerical error,
/// 4 verdict FAIL.
#[derive(Parser)]
#[command(name = "wavet2", version, about = "Stochastic wave simulation and transport-inequality verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the replica count.
    #[arg(long)]
    replicas: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the shift, e.g. `amp=1.0,width=0.5,center=2:2:2`.
    #[arg(long)]
    shift: Option<String>,
    /// Override the probe list, e.g. `16:8:8:8;8:4:4:4` (step:ix:iy:iz).
    #[arg(long)]
    probes: Option<String>,
    /// Worker threads (defaults to WAVET2_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Draw noise slabs and dump them with summary statistics.
    SampleNoise(Common),
    /// Integrate the equation over independent replicas.
    Solve(Common),
    /// Run the shifted/unshifted coupling and emit per-replica diagnostics.
    Couple(Common),
    /// Check the transport inequality on a probe projection.
    VerifyT2(Common),
    /// Monte-Carlo concentration checks.
    Concentration {
        #[command(flatten)]
        common: Common,
        /// Functional kind: probe-average | time-average-sup.
        #[arg(long, default_value = "probe-average")]
        functional: String,
    },
    /// Print the kernel mass M(T) and the transport constant C(T, K).
    Mconst(Common),
}

fn apply_overrides(config: &mut ExperimentConfig, common: &Common) -> Result<(), Error> {
    if let Some(replicas) = common.replicas {
        config.replicas = replicas;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(shift) = &common.shift {
        config.shift = Some(ShiftSpec::parse(shift)?);
    }
    if let Some(probes) = &common.probes {
        config.probes = parse_probes(probes)?;
    }
    Ok(())
}

fn parse_probes(text: &str) -> Result<Vec<Probe>, Error> {
    text.split(';')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let parts: Vec<&str> = p.split(':').collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!("probe `{p}` must be step:ix:iy:iz")));
            }
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Config(format!("bad probe component `{s}`")))
            };
            Ok(Probe { step: parse(parts[0])?, ix: parse(parts[1])?, iy: parse(parts[2])?, iz: parse(parts[3])? })
        })
        .collect()
}

fn threads_from_env() -> Option<usize> {
    std::env::var("WAVET2_THREADS").ok().and_then(|v| v.parse().ok())
}

fn execute() -> Result<bool, Error> {
    let cli = Cli::parse();
    let (sub, common, functional) = match &cli.command {
        Command::SampleNoise(c) => (Subcommand::SampleNoise, c, None),
        Command::Solve(c) => (Subcommand::Solve, c, None),
        Command::Couple(c) => (Subcommand::Couple, c, None),
        Command::VerifyT2(c) => (Subcommand::VerifyT2, c, None),
        Command::Concentration { common, functional } => {
            (Subcommand::Concentration, common, Some(FunctionalChoice::parse(functional)?))
        }
        Command::Mconst(c) => (Subcommand::Mconst, c, None),
    };
    let mut config = ExperimentConfig::load(&common.config)?;
    apply_overrides(&mut config, common)?;
    config.validate()?;
    let options = RunOptions { threads: common.threads.or_else(threads_from_env), functional };
    let outcome = run(sub, &config, &options)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    Ok(outcome.verdict_failed)
}

fn main() -> ExitCode {
    match execute() {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(4),
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::InvalidBeta(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
