//! Multi-sensor measurement-adaptive birth for labeled random finite set trackers.
//!
//! The birth label space of a multi-sensor tracker is the product of every sensor's
//! measurement set augmented with a missed detection. [`gibbs::sample_birth_tuples`]
//! draws the few tuples that carry almost all of the birth mass; [`birth::build_birth_lmb`]
//! turns them into a labeled multi-Bernoulli birth density using either the closed-form
//! linear-Gaussian backend ([`gaussian`]) or the Monte Carlo backend ([`mc`]).

pub mod assignment;
pub mod association;
pub mod bench;
pub mod checks;
pub mod birth;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod gibbs;
pub mod linalg;
pub mod mc;
pub mod metrics;
pub mod oracle;
pub mod scalar;
pub mod sensor;
pub mod sim;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Real;
pub use sensor::{ClutterModel, MeasurementSet, MotionModel, SensorKind, SensorModel};
pub use types::{
    BernoulliComponent, BirthLabel, GaussianDensity, LmbDensity, MeasurementTuple, ParticleSet,
    SpatialDensity,
};

pub type GaussianDensity64 = GaussianDensity<f64>;
pub type ParticleSet64 = ParticleSet<f64>;
pub type SpatialDensity64 = SpatialDensity<f64>;
pub type BernoulliComponent64 = BernoulliComponent<f64>;
pub type LmbDensity64 = LmbDensity<f64>;
pub type SensorModel64 = SensorModel<f64>;
pub type ClutterModel64 = ClutterModel<f64>;
pub type MotionModel64 = MotionModel<f64>;
pub type MeasurementSet64 = MeasurementSet<f64>;
