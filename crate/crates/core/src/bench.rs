//! Runtime scaling of the birth sampler in the number of sensors, measurements and iterations.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::association::AssociationTable;
use crate::error::Result;
use crate::gaussian::GaussianBackend;
use crate::gibbs::{sample_birth_tuples, GibbsConfig};
use crate::sensor::{ClutterModel, MeasurementSet, SensorModel};
use crate::types::GaussianDensity;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sensors: Vec<usize>,
    /// Measurements per sensor.
    pub measurements: usize,
    pub iterations: usize,
    /// Repetitions per point; the fastest is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sensors: vec![2, 3, 4, 6, 8],
            measurements: 20,
            iterations: 1000,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub sensors: usize,
    pub measurements: usize,
    pub iterations: usize,
    pub seconds: f64,
}

/// Linear-position instance with `m` measurements per sensor: half come from targets seen
/// by every sensor, the rest are clutter.
pub fn instance(v: usize, m: usize, seed: u64) -> Result<(Vec<SensorModel<f64>>, Vec<MeasurementSet<f64>>)> {
    let (lo, hi) = (0.0, 10_000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clutter = ClutterModel::uniform(5.0, DVector::from_element(2, lo), DVector::from_element(2, hi))?;
    let sensors = (0..v)
        .map(|_| SensorModel::linear_position(0.95, clutter.clone(), [100.0, 100.0]))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<[f64; 2]> = (0..m / 2)
        .map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi)])
        .collect();
    let z_sets = (0..v)
        .map(|_| {
            let mut z: MeasurementSet<f64> = targets
                .iter()
                .map(|t| DVector::from_vec(vec![t[0] + 10.0 * rng.random::<f64>(), t[1] + 10.0 * rng.random::<f64>()]))
                .collect();
            while z.len() < m {
                z.push(DVector::from_vec(vec![rng.random_range(lo..hi), rng.random_range(lo..hi)]));
            }
            z
        })
        .collect();
    Ok((sensors, z_sets))
}

/// Wall time of one `sample_birth_tuples` call with the closed-form backend.
pub fn time_sampler(v: usize, m: usize, iterations: usize, repeats: usize, seed: u64) -> Result<f64> {
    let (sensors, z_sets) = instance(v, m, seed)?;
    let prior = GaussianDensity::diagonal(&[0.0; 4], &[1e10, 2500.0, 1e10, 2500.0])?;
    let table = AssociationTable::zeros(&vec![m; v]);
    let cfg = GibbsConfig {
        iterations,
        restart_period: Some(100),
        seed,
        ..GibbsConfig::default()
    };
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let mut backend = GaussianBackend::new(&prior, &sensors, &z_sets)?;
        let start = Instant::now();
        let out = sample_birth_tuples(&table, &mut backend, &cfg)?;
        best = best.min(start.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    Ok(best)
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchPoint>> {
    cfg.sensors
        .iter()
        .map(|&v| {
            Ok(BenchPoint {
                sensors: v,
                measurements: cfg.measurements,
                iterations: cfg.iterations,
                seconds: time_sampler(v, cfg.measurements, cfg.iterations, cfg.repeats, cfg.seed)?,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn sensor_slope(points: &[BenchPoint]) -> f64 {
    loglog_slope(&points.iter().map(|p| (p.sensors as f64, p.seconds)).collect::<Vec<_>>())
}
