//! Experiment configuration files (TOML).
//!
//! ```toml
//! schema_version = 1
//!
//! [scenario]
//! sensor_type = "linear"
//! n_sensors = 3
//! # ...
//! [scenario.birth_schedule]
//! mode = "fixed"
//! # ...
//!
//! [tracker]      # optional, defaults shown by `ExperimentConfig::to_toml`
//! [birth]        # optional
//! [metrics]      # optional
//! ```

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::birth::{BirthConfig, GridBirth};
use crate::error::{Error, Result};
use crate::gibbs::GibbsConfig;
use crate::metrics::OspaConfig;
use crate::sim::ScenarioConfig;
use crate::tracker::TrackerConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Birth model driving a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BirthKind {
    AdaptiveGaussian,
    AdaptiveMc,
    Uniform,
}

impl BirthKind {
    pub const ALL: [BirthKind; 3] = [Self::AdaptiveGaussian, Self::AdaptiveMc, Self::Uniform];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::AdaptiveGaussian => "adaptive-gaussian",
            Self::AdaptiveMc => "adaptive-mc",
            Self::Uniform => "uniform",
        }
    }
}

impl std::fmt::Display for BirthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BirthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown birth model `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub p_survival: f64,
    pub prune_threshold: f64,
    pub max_components: usize,
    pub extraction_threshold: f64,
    pub particles_per_component: usize,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        Self {
            p_survival: t.p_survival,
            prune_threshold: t.prune_threshold,
            max_components: t.max_components,
            extraction_threshold: t.extraction_threshold,
            particles_per_component: t.particles_per_component,
        }
    }
}

impl TrackerSection {
    pub fn tracker_config(&self, seed: u64) -> TrackerConfig {
        TrackerConfig {
            p_survival: self.p_survival,
            prune_threshold: self.prune_threshold,
            max_components: self.max_components,
            extraction_threshold: self.extraction_threshold,
            particles_per_component: self.particles_per_component,
            seed,
        }
    }
}

/// Uniform-grid baseline: `grid_n × grid_n` stationary components with means spanning
/// `[grid_lo, grid_hi]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniformSection {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_n: usize,
    pub existence: f64,
    pub sigma_position: f64,
    pub sigma_velocity: f64,
}

impl Default for UniformSection {
    fn default() -> Self {
        Self {
            grid_lo: -2000.0,
            grid_hi: 12_000.0,
            grid_n: 10,
            existence: 0.1,
            sigma_position: 250.0,
            sigma_velocity: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirthSection {
    pub gibbs_iterations: usize,
    /// Reset to the all-missed tuple every this many iterations; 0 disables restarts.
    pub restart_period: usize,
    pub tau: f64,
    pub min_detections: usize,
    pub r_b_max: f64,
    pub lambda_b: f64,
    /// Gaussian birth prior: zero mean, these standard deviations on position and velocity.
    pub prior_position_std: f64,
    pub prior_velocity_std: f64,
    /// Monte Carlo backend: particles per ψ̄ estimate; velocity prior std.
    pub mc_particles: usize,
    pub mc_velocity_std: f64,
    pub uniform: UniformSection,
}

impl Default for BirthSection {
    fn default() -> Self {
        let g = GibbsConfig::default();
        let b = BirthConfig::default();
        Self {
            gibbs_iterations: g.iterations,
            restart_period: g.restart_period.unwrap_or(0),
            tau: g.tau,
            min_detections: b.min_detections,
            r_b_max: b.r_b_max,
            lambda_b: b.lambda_b,
            prior_position_std: 100_000.0,
            prior_velocity_std: 50.0,
            mc_particles: 1000,
            mc_velocity_std: 20.0,
            uniform: UniformSection::default(),
        }
    }
}

impl BirthSection {
    pub fn gibbs_config(&self, seed: u64) -> GibbsConfig {
        GibbsConfig {
            iterations: self.gibbs_iterations,
            restart_period: (self.restart_period > 0).then_some(self.restart_period),
            seed,
            tau: self.tau,
            min_detections: self.min_detections,
        }
    }

    pub fn birth_config(&self) -> BirthConfig {
        BirthConfig {
            r_b_max: self.r_b_max,
            lambda_b: self.lambda_b,
            min_detections: self.min_detections,
        }
    }

    pub fn grid(&self) -> GridBirth {
        let u = &self.uniform;
        GridBirth::linspace(u.grid_lo, u.grid_hi, u.grid_n, u.existence, u.sigma_position, u.sigma_velocity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub birth: BirthSection,
    #[serde(default)]
    pub metrics: OspaConfig,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario,
            tracker: TrackerSection::default(),
            birth: BirthSection::default(),
            metrics: OspaConfig::default(),
        }
    }

    /// Linear-position scenario at desk scale with the closed-form birth backend settings.
    pub fn desk_linear() -> Self {
        Self::new(ScenarioConfig::desk_linear())
    }

    /// Bearing-range scenario at desk scale with the Monte Carlo birth backend settings.
    pub fn desk_bearing() -> Self {
        let mut cfg = Self::new(ScenarioConfig::desk_bearing());
        cfg.birth.gibbs_iterations = 100;
        cfg.birth.restart_period = 5;
        cfg.birth.uniform.sigma_position = 300.0;
        cfg.birth.uniform.sigma_velocity = 20.0;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section, naming the offending key on failure.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let keyed = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidParameter { name, reason } if name.contains('.') => {
                    Error::Config(format!("{name}: {reason}"))
                }
                Error::InvalidParameter { name, reason } => Error::Config(format!("{section}.{name}: {reason}")),
                other => Error::Config(format!("{section}: {other}")),
            })
        };
        keyed("scenario", self.scenario.validate())?;
        keyed("tracker", self.tracker.tracker_config(0).validate())?;
        keyed("birth", self.birth.gibbs_config(0).validate())?;
        keyed("birth", self.birth.birth_config().validate())?;
        let u = &self.birth.uniform;
        if !(u.grid_hi >= u.grid_lo) {
            return Err(Error::Config("birth.uniform.grid_hi: must not be below grid_lo".into()));
        }
        if u.grid_n == 0 {
            return Err(Error::Config("birth.uniform.grid_n: must be at least 1".into()));
        }
        if !(u.existence > 0.0 && u.existence <= 1.0) {
            return Err(Error::Config("birth.uniform.existence: must lie in (0, 1]".into()));
        }
        if !(u.sigma_position > 0.0 && u.sigma_velocity > 0.0) {
            return Err(Error::Config("birth.uniform.sigma_position: standard deviations must be positive".into()));
        }
        if !(self.birth.prior_position_std > 0.0 && self.birth.prior_velocity_std > 0.0) {
            return Err(Error::Config("birth.prior_position_std: standard deviations must be positive".into()));
        }
        if self.birth.mc_particles == 0 || !(self.birth.mc_velocity_std > 0.0) {
            return Err(Error::Config("birth.mc_particles: particles and velocity std must be positive".into()));
        }
        keyed("metrics", self.metrics.validate())
    }
}
