//! Randomized verification suites shared by the command line and the test harness: sampler
//! vs exact tuple distribution, the truncation bound, and closed-form vs Monte Carlo
//! conditionals.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::association::AssociationTable;
use crate::error::Result;
use crate::gaussian::GaussianBackend;
use crate::gibbs::{sample_birth_tuples, ConditionalBackend, GibbsConfig};
use crate::mc::{BirthPrior, MonteCarloBackend};
use crate::oracle::{enumerate_exact, theorem1_bound_check, BoundCheck, TinyGlmb};
use crate::sensor::{ClutterModel, MeasurementSet, MotionModel, SensorModel};
use crate::tracker::{manual_label, step_seed};
use crate::types::{BernoulliComponent, BirthLabel, GaussianDensity, LmbDensity, MeasurementTuple, SpatialDensity};

pub const TV_THRESHOLD: f64 = 0.05;
pub const XCHECK_THRESHOLD: f64 = 0.02;

/// Linear-position scan over a `[pₓ, vₓ, p_y, v_y]` state.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    pub prior: GaussianDensity<f64>,
    pub sensors: Vec<SensorModel<f64>>,
    pub z_sets: Vec<MeasurementSet<f64>>,
    pub table: AssociationTable<f64>,
}

impl LinearInstance {
    pub fn counts(&self) -> Vec<usize> {
        self.z_sets.iter().map(Vec::len).collect()
    }
}

/// `counts[s]` measurements per sensor, each from one of `max(counts)` objects near the
/// origin or clutter. Noise is comparable to the object spacing so several tuples carry
/// weight. `r_A` is drawn from `[0, max_r_a)`.
pub fn random_linear_instance<R: Rng + ?Sized>(rng: &mut R, counts: &[usize], max_r_a: f64) -> Result<LinearInstance> {
    let n_obj = counts.iter().copied().max().unwrap_or(0);
    let objects: Vec<[f64; 2]> = (0..n_obj)
        .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
        .collect();
    let prior = GaussianDensity::diagonal(&[0.0; 4], &[100.0, 4.0, 100.0, 4.0])?;
    let mut sensors = Vec::with_capacity(counts.len());
    let mut z_sets = Vec::with_capacity(counts.len());
    for &m in counts {
        let pd = rng.random_range(0.6..0.95);
        let var = rng.random_range(1.0..4.0);
        let kappa = rng.random_range(1e-3..1e-2);
        sensors.push(SensorModel::linear_position(pd, ClutterModel::constant(kappa, 2)?, [var, var])?);
        let z: MeasurementSet<f64> = (0..m)
            .map(|i| {
                if rng.random::<f64>() < 0.8 {
                    let o = objects[i % n_obj];
                    let sd = var.sqrt();
                    DVector::from_vec(vec![
                        o[0] + sd * rng.random_range(-1.5..1.5),
                        o[1] + sd * rng.random_range(-1.5..1.5),
                    ])
                } else {
                    DVector::from_vec(vec![rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)])
                }
            })
            .collect();
        z_sets.push(z);
    }
    let table = AssociationTable::new(
        counts
            .iter()
            .map(|&m| (0..m).map(|_| rng.random::<f64>() * max_r_a).collect())
            .collect(),
    );
    Ok(LinearInstance {
        prior,
        sensors,
        z_sets,
        table,
    })
}

#[derive(Debug, Clone)]
pub struct TvReport {
    pub distances: Vec<f64>,
    pub threshold: f64,
}

impl TvReport {
    pub fn max(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max() < self.threshold
    }
}

/// Chain settings under which the visit frequencies target `p(J) ∝ r_U ψ̄` exactly.
pub fn exact_target_gibbs(iterations: usize, seed: u64) -> GibbsConfig {
    GibbsConfig {
        iterations,
        restart_period: None,
        seed,
        tau: 1.0,
        min_detections: 0,
    }
}

/// TV distance between the sampler's visit frequencies and the enumerated distribution.
pub fn tv_distance(instance: &LinearInstance, iterations: usize, seed: u64) -> Result<f64> {
    let mut backend = GaussianBackend::new(&instance.prior, &instance.sensors, &instance.z_sets)?;
    let exact = enumerate_exact(&instance.counts(), &instance.table, &mut backend)?;
    let out = sample_birth_tuples(&instance.table, &mut backend, &exact_target_gibbs(iterations, seed))?;
    Ok(exact.tv_distance(&out.trace))
}

/// `instances` random `V = 3`, `m = (2, 2, 2)` instances at `iterations` sweeps each.
pub fn tv_suite(seed: u64, instances: usize, iterations: usize) -> Result<TvReport> {
    let distances = (0..instances)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, i as u64));
            let inst = random_linear_instance(&mut rng, &[2, 2, 2], 0.3)?;
            tv_distance(&inst, iterations, step_seed(seed, 1000 + i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TvReport {
        distances,
        threshold: TV_THRESHOLD,
    })
}

/// Tiny δ-GLMB instance for the truncation bound.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub prior: TinyGlmb,
    pub birth: LmbDensity<f64>,
    pub z_sets: Vec<MeasurementSet<f64>>,
    pub sensors: Vec<SensorModel<f64>>,
    pub motion: MotionModel<f64>,
    pub p_survival: f64,
    pub epsilon: f64,
}

/// Up to four labels in total, one or two sensors with at most two measurements each, and
/// `ε` strictly inside the range of birth probabilities so that something is truncated.
pub fn random_tiny_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<TinyInstance> {
    let n_prior = rng.random_range(0..=2usize);
    let n_birth = rng.random_range(2..=(4 - n_prior));
    let pos = |rng: &mut R| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    let prior_tracks: Vec<(BirthLabel, GaussianDensity<f64>)> = (0..n_prior)
        .map(|i| {
            let p = pos(rng);
            Ok((
                manual_label(0, i + 1),
                GaussianDensity::diagonal(&[p[0], 0.0, p[1], 0.0], &[1.0, 0.25, 1.0, 0.25])?,
            ))
        })
        .collect::<Result<_>>()?;
    let subsets: Vec<(Vec<usize>, f64)> = (0..(1usize << n_prior))
        .map(|mask| {
            let idx = (0..n_prior).filter(|i| mask & (1 << i) != 0).collect();
            (idx, rng.random_range(0.1..1.0))
        })
        .collect();
    let prior = TinyGlmb::new(prior_tracks.clone(), subsets)?;
    let existences: Vec<f64> = (0..n_birth).map(|_| rng.random_range(0.02..0.9)).collect();
    let birth = LmbDensity::new(
        existences
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let p = pos(rng);
                BernoulliComponent::new(
                    BirthLabel::new(1, MeasurementTuple::new(vec![i + 1])),
                    r,
                    SpatialDensity::Gaussian(GaussianDensity::diagonal(
                        &[p[0], 0.0, p[1], 0.0],
                        &[4.0, 1.0, 4.0, 1.0],
                    )?),
                )
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let (lo, hi) = existences
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let epsilon = rng.random_range(lo..hi);
    let n_sensors = rng.random_range(1..=2usize);
    let mut sensors = Vec::new();
    let mut z_sets = Vec::new();
    for _ in 0..n_sensors {
        sensors.push(SensorModel::linear_position(
            rng.random_range(0.5..0.95),
            ClutterModel::constant(rng.random_range(0.005..0.05), 2)?,
            [0.5, 0.5],
        )?);
        let m = rng.random_range(0..=2usize);
        z_sets.push((0..m).map(|_| DVector::from_vec(pos(rng).to_vec())).collect());
    }
    Ok(TinyInstance {
        prior,
        birth,
        z_sets,
        sensors,
        motion: MotionModel::constant_velocity(1.0, [0.5, 0.5])?,
        p_survival: rng.random_range(0.5..0.99),
        epsilon,
    })
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.holds()).count()
    }

    /// Largest `l1 / bound` over instances with a positive bound.
    pub fn max_ratio(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.bound > 0.0)
            .map(|c| c.l1_distance / c.bound)
            .fold(0.0, f64::max)
    }
}

pub fn bound_suite(seed: u64, instances: usize) -> Result<BoundReport> {
    let checks = (0..instances)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, i as u64));
            let t = random_tiny_instance(&mut rng)?;
            theorem1_bound_check(&t.prior, &t.birth, t.epsilon, &t.z_sets, &t.sensors, &t.motion, t.p_survival)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { checks })
}

#[derive(Debug, Clone)]
pub struct XcheckReport {
    /// Per instance: TV between normalized conditionals, averaged over sensors.
    pub distances: Vec<f64>,
    pub threshold: f64,
}

impl XcheckReport {
    pub fn max(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max() < self.threshold
    }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
}

/// Normalized conditionals of the closed-form and Monte Carlo backends on one instance,
/// compared sensor by sensor at a chain state drawn from the sampler's target `r_U ψ̄`.
///
/// Low-probability states that join inconsistent detections are avoided: there the anchored
/// proposal has heavy-tailed weights and the estimate converges slowly.
pub fn backend_xcheck(instance: &LinearInstance, n_particles: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = instance.counts();
    let mut gauss = GaussianBackend::new(&instance.prior, &instance.sensors, &instance.z_sets)?;
    let mut mc = MonteCarloBackend::new(
        BirthPrior::from_gaussian(&instance.prior, vec![0, 2])?,
        &instance.sensors,
        &instance.z_sets,
        n_particles,
        step_seed(seed, 1),
    )?;
    let exact = enumerate_exact(&counts, &instance.table, &mut gauss)?;
    let total_p: f64 = exact.entries.iter().map(|e| e.1).sum();
    let mut u = rng.random::<f64>() * total_p;
    let state = exact
        .entries
        .iter()
        .find(|(_, p)| {
            u -= p;
            u <= 0.0
        })
        .or(exact.entries.last())
        .map(|(t, _)| t.clone())
        .expect("enumeration is never empty");
    let (mut wg, mut wm) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for s in 0..counts.len() {
        gauss.conditional_weights(s, &state, &instance.table, &mut wg)?;
        mc.conditional_weights(s, &state, &instance.table, &mut wm)?;
        total += tv(&wg, &wm);
    }
    Ok(total / counts.len() as f64)
}

pub fn backend_xcheck_suite(seed: u64, instances: usize, n_particles: usize) -> Result<XcheckReport> {
    let distances = (0..instances)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, i as u64));
            let v = rng.random_range(2..=3usize);
            let counts: Vec<usize> = (0..v).map(|_| rng.random_range(1..=3usize)).collect();
            let inst = random_linear_instance(&mut rng, &counts, 0.3)?;
            backend_xcheck(&inst, n_particles, step_seed(seed, 1000 + i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(XcheckReport {
        distances,
        threshold: XCHECK_THRESHOLD,
    })
}
