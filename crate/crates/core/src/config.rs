//! Experiment configuration: TOML file format, validation, and hashing.

use crate::error::{Error, Result};
use crate::girsanov::ShiftSpec;
use crate::grid::{GridFunction, PeriodicGrid};
use crate::solver::{Drift, DriftKind, InitialData};
use crate::spectral::SpatialCovariance;
use crate::transport::Probe;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Initial data description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialSpec {
    Zero,
    /// Gaussian bump in the position component; the support radius is
    /// recorded where the profile falls below 1e-12 of the amplitude.
    Bump { amplitude: f64, width: f64 },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Zero
    }
}

impl InitialSpec {
    pub fn support_radius(&self) -> f64 {
        match self {
            InitialSpec::Zero => 0.0,
            // exp(-r^2 / 2 w^2) < 1e-12  <=>  r > w sqrt(2 ln 1e12)
            InitialSpec::Bump { width, .. } => width * (2.0 * 1e12_f64.ln()).sqrt(),
        }
    }

    pub fn build(&self, grid: &PeriodicGrid) -> Result<InitialData> {
        match self {
            InitialSpec::Zero => Ok(InitialData::zero(grid)),
            InitialSpec::Bump { amplitude, width } => {
                if !(*width > 0.0) {
                    return Err(Error::Config(format!("initial bump width must be positive, got {width}")));
                }
                let c = [grid.box_length / 2.0; 3];
                let w = *width;
                let a = *amplitude;
                let nu1 = GridFunction::from_fn(grid, |p| {
                    let r = grid.periodic_distance(p, c);
                    a * (-r * r / (2.0 * w * w)).exp()
                })?;
                InitialData::new(grid, nu1, GridFunction::zeros(grid), self.support_radius())
            }
        }
    }
}

/// Full experiment description, round-trippable through TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub beta: f64,
    pub box_length: f64,
    pub points_per_axis: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Declared Lipschitz constant K of the drift.
    pub k_lipschitz: f64,
    /// Drift kind: "zero", "ksin", or "const:<value>".
    pub drift: String,
    pub seed: u64,
    pub replicas: usize,
    pub out_dir: String,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub shift: Option<ShiftSpec>,
    #[serde(default)]
    pub probes: Vec<Probe>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.box_length, self.points_per_axis, self.dt, self.n_steps)
    }

    pub fn covariance(&self) -> Result<SpatialCovariance> {
        SpatialCovariance::new(self.beta)
    }

    pub fn drift(&self) -> Result<Drift> {
        let kind = parse_drift(&self.drift)?;
        match kind {
            DriftKind::SineK => Drift::new(kind, self.k_lipschitz),
            _ => {
                // constant drifts have zero true Lipschitz constant; the
                // declared K still enters the transport constant
                Drift::new(kind, self.k_lipschitz)
            }
        }
    }

    pub fn initial_data(&self, grid: &PeriodicGrid) -> Result<InitialData> {
        self.initial.build(grid)
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.covariance()?;
        let drift = self.drift()?;
        if drift.true_lipschitz() > self.k_lipschitz {
            return Err(Error::Config(format!(
                "declared Lipschitz constant {} is below the drift's true constant {}",
                self.k_lipschitz,
                drift.true_lipschitz()
            )));
        }
        // wrap-around precondition: T + r0 < L/2 keeps unit-speed dynamics
        // of the compact data inside the box
        let r0 = self.initial.support_radius();
        let t = self.horizon();
        if t + r0 >= self.box_length / 2.0 {
            return Err(Error::Config(format!(
                "horizon {} plus initial support radius {r0} must stay below L/2 = {}",
                t,
                self.box_length / 2.0
            )));
        }
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be positive".into()));
        }
        if let Some(shift) = &self.shift {
            shift.validate()?;
        }
        for probe in &self.probes {
            probe.validate(&grid)?;
        }
        Ok(())
    }
}

fn parse_drift(text: &str) -> Result<DriftKind> {
    match text.trim() {
        "zero" => Ok(DriftKind::Zero),
        "ksin" => Ok(DriftKind::SineK),
        other => {
            if let Some(value) = other.strip_prefix("const:") {
                let c: f64 = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad constant drift `{other}`")))?;
                Ok(DriftKind::Constant(c))
            } else {
                Err(Error::Config(format!(
                    "unknown drift `{other}` (expected zero | ksin | const:<value>)"
                )))
            }
        }
    }
}
