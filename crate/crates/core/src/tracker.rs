//! LMB filter with an iterated-corrector multi-sensor update, used to compare birth models.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::association::{lmb_marginals, AssociationTable};
use crate::birth::{build_birth_lmb, BirthConfig, GridBirth};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{GaussianBackend, PrecomputeCache};
use crate::gibbs::{sample_birth_tuples, GibbsConfig};
use crate::linalg::{cholesky, psd_sqrt, symmetrize};
use crate::mc::{propagate_particles, systematic_resample, BirthPrior, MonteCarloBackend};
use crate::scalar::{lit, to_f64, Real};
use crate::sensor::{MeasurementSet, MotionModel, SensorKind, SensorModel};
use crate::types::{
    BernoulliComponent, BirthLabel, GaussianDensity, LmbDensity, MeasurementTuple, ParticleSet,
    SpatialDensity,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub p_survival: f64,
    pub prune_threshold: f64,
    pub max_components: usize,
    pub extraction_threshold: f64,
    /// Particles drawn when a Gaussian component meets a nonlinear sensor.
    pub particles_per_component: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            p_survival: 0.99,
            prune_threshold: 1e-3,
            max_components: 100,
            extraction_threshold: 0.5,
            particles_per_component: 1000,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_survival) {
            return Err(invalid("p_survival", "must lie in [0, 1]"));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return Err(invalid("prune_threshold", "must lie in (0, 1)"));
        }
        if !(self.extraction_threshold > 0.0 && self.extraction_threshold < 1.0) {
            return Err(invalid("extraction_threshold", "must lie in (0, 1)"));
        }
        if self.max_components == 0 || self.particles_per_component == 0 {
            return Err(invalid("max_components", "component and particle caps must be positive"));
        }
        Ok(())
    }
}

/// Labeled state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T: Real> {
    pub label: BirthLabel,
    pub state: DVector<T>,
    pub existence: T,
}

fn predict_spatial<T: Real, R: Rng + ?Sized>(
    spatial: &SpatialDensity<T>,
    motion: &MotionModel<T>,
    rng: &mut R,
) -> SpatialDensity<T> {
    match spatial {
        SpatialDensity::Gaussian(g) => SpatialDensity::Gaussian(GaussianDensity::from_parts(
            &motion.f * &g.mean,
            &motion.f * &g.cov * motion.f.transpose() + &motion.q,
        )),
        SpatialDensity::Particles(p) => SpatialDensity::Particles(ParticleSet {
            weights: p.weights.clone(),
            states: propagate_particles(&p.states, motion, rng),
        }),
    }
}

/// Survival prediction followed by the union with `birth`.
pub fn predict<T: Real, R: Rng + ?Sized>(
    lmb: &LmbDensity<T>,
    motion: &MotionModel<T>,
    p_survival: T,
    birth: &LmbDensity<T>,
    rng: &mut R,
) -> Result<LmbDensity<T>> {
    let mut out = Vec::with_capacity(lmb.len() + birth.len());
    for c in lmb.components() {
        let existence = c.existence * p_survival;
        if existence <= T::zero() {
            continue;
        }
        out.push(BernoulliComponent {
            label: c.label.clone(),
            existence,
            spatial: predict_spatial(&c.spatial, motion, rng),
        });
    }
    out.extend(birth.components().iter().cloned());
    LmbDensity::new(out)
}

/// Gaussian components paired with a nonlinear sensor are replaced by `n` samples.
fn to_particles<T: Real, R: Rng + ?Sized>(g: &GaussianDensity<T>, n: usize, rng: &mut R) -> ParticleSet<T> {
    let l = psd_sqrt(&g.cov);
    let d = g.dim();
    let states = (0..n)
        .map(|_| {
            let e = DVector::from_iterator(d, (0..d).map(|_| lit::<T>(rng.sample::<f64, _>(StandardNormal))));
            &g.mean + &l * e
        })
        .collect();
    ParticleSet::uniform(states)
}

fn clamp01<T: Real>(x: T) -> T {
    if x < T::zero() {
        T::zero()
    } else if x > T::one() {
        T::one()
    } else {
        x
    }
}

/// Relative mixture weight below which a Kalman branch is skipped.
const BRANCH_FLOOR: f64 = 1e-12;

fn gaussian_posterior<T: Real>(
    g: &GaussianDensity<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
    z_set: &[DVector<T>],
    missed: T,
    assoc: &[T],
    existence: T,
) -> Result<GaussianDensity<T>> {
    if existence <= T::zero() {
        return Ok(g.clone());
    }
    let s = symmetrize(&(h * &g.cov * h.transpose() + r));
    let chol = cholesky(&s, "innovation covariance")?;
    let pht = &g.cov * h.transpose();
    let k = chol.solve(&pht.transpose()).transpose();
    let n = g.dim();
    let ikh = DMatrix::<T>::identity(n, n) - &k * h;
    let p_post = symmetrize(&(&ikh * &g.cov * ikh.transpose() + &k * r * k.transpose()));
    let zhat = h * &g.mean;

    let floor = lit::<T>(BRANCH_FLOOR) * existence;
    let mut branches: Vec<(T, DVector<T>, bool)> = vec![(missed, g.mean.clone(), false)];
    for (j, z) in z_set.iter().enumerate() {
        if assoc[j] > floor {
            branches.push((assoc[j], &g.mean + &k * (z - &zhat), true));
        }
    }
    let total = branches.iter().fold(T::zero(), |a, b| a + b.0);
    let mut mean = DVector::zeros(n);
    for (w, m, _) in &branches {
        mean.axpy(*w / total, m, T::one());
    }
    let mut cov = DMatrix::zeros(n, n);
    for (w, m, updated) in &branches {
        let a = *w / total;
        let d = m - &mean;
        cov += (if *updated { &p_post } else { &g.cov }) * a;
        cov.ger(a, &d, &d, T::one());
    }
    Ok(GaussianDensity::from_parts(mean, cov))
}

fn particle_posterior<T: Real, R: Rng + ?Sized>(
    p: &ParticleSet<T>,
    sensor: &SensorModel<T>,
    z_set: &[DVector<T>],
    missed: T,
    assoc: &[T],
    q: &[T],
    rng: &mut R,
) -> ParticleSet<T> {
    let mut weights = Vec::with_capacity(p.len());
    for (w, x) in p.weights.iter().zip(&p.states) {
        let mut f = missed;
        for (j, z) in z_set.iter().enumerate() {
            if assoc[j] > T::zero() && q[j] > T::zero() {
                f += assoc[j] * sensor.log_likelihood(z, x).exp() / q[j];
            }
        }
        weights.push(*w * f);
    }
    let mut set = ParticleSet {
        weights,
        states: p.states.clone(),
    };
    if set.normalize().is_err() {
        return p.clone();
    }
    if to_f64(set.effective_sample_size()) < 0.5 * set.len() as f64 {
        let u: f64 = rng.random();
        let states = systematic_resample(&set.weights, u)
            .into_iter()
            .map(|i| set.states[i].clone())
            .collect();
        set = ParticleSet::uniform(states);
    }
    set
}

/// Single-sensor LMB update with loopy-belief-propagation marginals. Returns the posterior
/// and the sensor's association probabilities `r_A`.
pub fn update_sensor<T: Real, R: Rng + ?Sized>(
    lmb: &LmbDensity<T>,
    z_set: &[DVector<T>],
    sensor: &SensorModel<T>,
    particles_per_component: usize,
    rng: &mut R,
) -> Result<(LmbDensity<T>, Vec<T>)> {
    if lmb.is_empty() {
        return Ok((LmbDensity::empty(), vec![T::zero(); z_set.len()]));
    }
    let mut prior = lmb.clone();
    if !sensor.is_linear() {
        for c in prior.components_mut() {
            if let SpatialDensity::Gaussian(g) = &c.spatial {
                c.spatial = SpatialDensity::Particles(to_particles(g, particles_per_component, rng));
            }
        }
    }
    let marginals = lmb_marginals(&prior, z_set, sensor)?;
    let r_a = marginals.measurement_probs();
    let mut out = Vec::with_capacity(prior.len());
    for (i, c) in prior.components().iter().enumerate() {
        let existence = clamp01(marginals.existence[i]);
        let assoc: Vec<T> = marginals.assoc.row(i).iter().copied().collect();
        let spatial = match (&c.spatial, &sensor.kind) {
            (SpatialDensity::Gaussian(g), SensorKind::LinearGaussian { h, r }) => SpatialDensity::Gaussian(
                gaussian_posterior(g, h, r, z_set, marginals.missed[i], &assoc, existence)?,
            ),
            (SpatialDensity::Particles(p), _) => {
                let q = crate::association::measurement_likelihoods(&c.spatial, z_set, sensor)?;
                SpatialDensity::Particles(particle_posterior(p, sensor, z_set, marginals.missed[i], &assoc, &q, rng))
            }
            (SpatialDensity::Gaussian(_), _) => unreachable!("converted to particles above"),
        };
        out.push(BernoulliComponent {
            label: c.label.clone(),
            existence,
            spatial,
        });
    }
    Ok((LmbDensity::new(out)?, r_a))
}

/// Drops components below the prune threshold and keeps the `max_components` most likely.
pub fn prune_and_cap<T: Real>(lmb: &LmbDensity<T>, cfg: &TrackerConfig) -> LmbDensity<T> {
    let threshold = lit::<T>(cfg.prune_threshold);
    let mut kept: Vec<BernoulliComponent<T>> = lmb
        .components()
        .iter()
        .filter(|c| c.existence >= threshold)
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        b.existence
            .partial_cmp(&a.existence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    kept.truncate(cfg.max_components);
    LmbDensity::new(kept).expect("subset of distinct labels")
}

/// Means of the components whose existence exceeds the extraction threshold.
pub fn extract<T: Real>(lmb: &LmbDensity<T>, cfg: &TrackerConfig) -> Vec<Estimate<T>> {
    let threshold = lit::<T>(cfg.extraction_threshold);
    lmb.components()
        .iter()
        .filter(|c| c.existence > threshold)
        .map(|c| Estimate {
            label: c.label.clone(),
            state: c.spatial.mean(),
            existence: c.existence,
        })
        .collect()
}

/// Prior used by the adaptive birth backends.
#[derive(Debug, Clone)]
pub enum AdaptivePrior<T: Real> {
    Gaussian(GaussianDensity<T>),
    MonteCarlo { prior: BirthPrior<T>, n_particles: usize },
}

#[derive(Debug, Clone)]
pub struct AdaptiveBirth<T: Real> {
    pub prior: AdaptivePrior<T>,
    pub gibbs: GibbsConfig,
    pub birth: BirthConfig,
}

#[derive(Debug, Clone)]
pub enum BirthModel<T: Real> {
    Adaptive(AdaptiveBirth<T>),
    Static(GridBirth),
    None,
}

/// What one filter step produced besides the estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    /// Components in the birth density created from this step's scan.
    pub birth_components: usize,
    /// `∏ₛ (mₛ + 1)`.
    pub tuple_space: f64,
    pub distinct_tuples: usize,
    pub forced_missed: usize,
    pub low_ess: usize,
    pub degenerate_conditionals: usize,
    pub components: usize,
}

pub struct Tracker<T: Real> {
    cfg: TrackerConfig,
    motion: MotionModel<T>,
    sensors: Vec<SensorModel<T>>,
    birth_model: BirthModel<T>,
    density: LmbDensity<T>,
    pending_birth: LmbDensity<T>,
    rng: ChaCha8Rng,
    gaussian_cache: Option<PrecomputeCache<T>>,
}

impl<T: Real> Tracker<T> {
    pub fn new(
        cfg: TrackerConfig,
        motion: MotionModel<T>,
        sensors: Vec<SensorModel<T>>,
        birth_model: BirthModel<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        if sensors.is_empty() {
            return Err(invalid("sensors", "at least one sensor is required"));
        }
        if let Some(s) = sensors.iter().find(|s| s.state_dim() != motion.dim()) {
            return Err(Error::DimensionMismatch {
                what: "sensor state dimension",
                expected: motion.dim(),
                got: s.state_dim(),
            });
        }
        let gaussian_cache = match &birth_model {
            BirthModel::Adaptive(AdaptiveBirth {
                prior: AdaptivePrior::Gaussian(g),
                gibbs,
                birth,
            }) => {
                gibbs.validate()?;
                birth.validate()?;
                Some(PrecomputeCache::new(g, &sensors)?)
            }
            BirthModel::Adaptive(a) => {
                a.gibbs.validate()?;
                a.birth.validate()?;
                None
            }
            _ => None,
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            motion,
            sensors,
            birth_model,
            density: LmbDensity::empty(),
            pending_birth: LmbDensity::empty(),
            gaussian_cache,
        })
    }

    pub fn density(&self) -> &LmbDensity<T> {
        &self.density
    }

    pub fn pending_birth(&self) -> &LmbDensity<T> {
        &self.pending_birth
    }

    /// Predict with the pending birth, update with every sensor in turn, build the birth
    /// for the next step from this scan, then prune and extract.
    pub fn step(&mut self, k: u64, z_sets: &[MeasurementSet<T>]) -> Result<(Vec<Estimate<T>>, StepStats)> {
        if z_sets.len() != self.sensors.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement sets",
                expected: self.sensors.len(),
                got: z_sets.len(),
            });
        }
        let birth = std::mem::take(&mut self.pending_birth);
        let mut density = predict(
            &self.density,
            &self.motion,
            lit(self.cfg.p_survival),
            &birth,
            &mut self.rng,
        )?;
        let mut r_a = Vec::with_capacity(self.sensors.len());
        for (sensor, z_set) in self.sensors.iter().zip(z_sets) {
            let (post, r) = update_sensor(
                &density,
                z_set,
                sensor,
                self.cfg.particles_per_component,
                &mut self.rng,
            )?;
            density = post;
            r_a.push(r);
        }
        let counts: Vec<usize> = z_sets.iter().map(Vec::len).collect();
        let mut stats = StepStats {
            tuple_space: counts.iter().map(|&m| m as f64 + 1.0).product(),
            ..StepStats::default()
        };
        let table = AssociationTable::new(r_a);
        self.pending_birth = self.next_birth(k, z_sets, &table, &mut stats)?;
        stats.birth_components = self.pending_birth.len();
        // Labels already alive would collide at the next prediction.
        let existing: BTreeSet<BirthLabel> = density.components().iter().map(|c| c.label.clone()).collect();
        if self.pending_birth.components().iter().any(|c| existing.contains(&c.label)) {
            return Err(Error::LabelCollision(format!("birth at step {}", k + 1)));
        }
        self.density = prune_and_cap(&density, &self.cfg);
        stats.components = self.density.len();
        Ok((extract(&self.density, &self.cfg), stats))
    }

    fn next_birth(
        &mut self,
        k: u64,
        z_sets: &[MeasurementSet<T>],
        table: &AssociationTable<T>,
        stats: &mut StepStats,
    ) -> Result<LmbDensity<T>> {
        match &self.birth_model {
            BirthModel::None => Ok(LmbDensity::empty()),
            BirthModel::Static(grid) => grid.build(k),
            BirthModel::Adaptive(a) => {
                let gibbs = GibbsConfig {
                    seed: step_seed(a.gibbs.seed, k),
                    ..a.gibbs.clone()
                };
                match &a.prior {
                    AdaptivePrior::Gaussian(_) => {
                        let cache = self.gaussian_cache.clone().expect("cache built for gaussian prior");
                        let mut backend = GaussianBackend::with_cache(cache, &self.sensors, z_sets)?;
                        let out = sample_birth_tuples(table, &mut backend, &gibbs)?;
                        stats.distinct_tuples = out.tuples.len();
                        stats.forced_missed = out.forced_missed;
                        build_birth_lmb(&out.tuples, table, &mut backend, &self.motion, &a.birth, k)
                    }
                    AdaptivePrior::MonteCarlo { prior, n_particles } => {
                        let mut backend = MonteCarloBackend::new(
                            prior.clone(),
                            &self.sensors,
                            z_sets,
                            *n_particles,
                            step_seed(gibbs.seed, u64::MAX - k),
                        )?;
                        let out = sample_birth_tuples(table, &mut backend, &gibbs)?;
                        stats.distinct_tuples = out.tuples.len();
                        stats.forced_missed = out.forced_missed;
                        let lmb = build_birth_lmb(&out.tuples, table, &mut backend, &self.motion, &a.birth, k)?;
                        stats.low_ess = backend.diagnostics.low_ess;
                        stats.degenerate_conditionals = backend.diagnostics.degenerate_conditionals;
                        Ok(lmb)
                    }
                }
            }
        }
    }
}

/// Decorrelates per-step seeds derived from one base seed.
pub fn step_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Label of a track that was not created by a measurement tuple.
pub fn manual_label(timestep: u64, id: usize) -> BirthLabel {
    BirthLabel::new(timestep, MeasurementTuple::new(vec![id]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::ClutterModel;

    fn sensor(pd: f64, kappa: f64) -> SensorModel<f64> {
        SensorModel::new(
            pd,
            ClutterModel::constant(kappa, 2).unwrap(),
            SensorKind::LinearGaussian {
                h: DMatrix::identity(2, 2),
                r: DMatrix::identity(2, 2),
            },
            2,
        )
        .unwrap()
    }

    fn component(mean: [f64; 2], var: f64, r: f64, id: usize) -> BernoulliComponent<f64> {
        BernoulliComponent::new(
            manual_label(0, id),
            r,
            SpatialDensity::Gaussian(GaussianDensity::diagonal(&mean, &[var, var]).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let birth = LmbDensity::new(vec![component([1.0, 1.0], 1.0, 0.3, 9)]).unwrap();
        let motion = MotionModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::identity(2, 2) * 0.1,
            1.0,
        )
        .unwrap();
        let out = predict(&LmbDensity::empty(), &motion, 0.99, &birth, &mut rng).unwrap();
        assert_eq!(out, birth);

        let prior = LmbDensity::new(vec![component([2.0, 3.0], 2.0, 0.8, 1)]).unwrap();
        let out = predict(&prior, &motion, 0.0, &birth, &mut rng).unwrap();
        assert_eq!(out, birth);

        let out = predict(&prior, &motion, 0.5, &LmbDensity::empty(), &mut rng).unwrap();
        let c = &out.components()[0];
        assert!((c.existence - 0.4).abs() < 1e-15);
        assert!((c.spatial.mean() - DVector::from_vec(vec![5.0, 3.0])).norm() < 1e-12);
        let expected = DMatrix::from_row_slice(2, 2, &[4.1, 2.0, 2.0, 2.1]);
        assert!((c.spatial.covariance() - expected).norm() < 1e-12);

        let clash = LmbDensity::new(vec![component([0.0, 0.0], 1.0, 0.5, 1)]).unwrap();
        assert!(predict(&prior, &motion, 0.5, &clash, &mut rng).is_err());
    }

    #[test]
    fn missed_detection_lowers_existence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = LmbDensity::new(vec![component([0.0, 0.0], 1.0, 0.9, 1)]).unwrap();
        let (post, r_a) = update_sensor(&prior, &[], &sensor(0.95, 1e-4), 100, &mut rng).unwrap();
        let expected = 0.9 * 0.05 / (1.0 - 0.9 * 0.95);
        assert!((post.components()[0].existence - expected).abs() < 1e-12);
        assert!(r_a.is_empty());
    }

    #[test]
    fn confirming_detection_raises_existence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = LmbDensity::new(vec![component([0.0, 0.0], 1.0, 0.9, 1)]).unwrap();
        let z = vec![DVector::from_vec(vec![0.0, 0.0])];
        let (post, r_a) = update_sensor(&prior, &z, &sensor(0.95, 1e-8), 100, &mut rng).unwrap();
        assert!(post.components()[0].existence > 1.0 - 1e-6);
        assert!(r_a[0] > 0.999);
    }

    #[test]
    fn empty_prior_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = vec![DVector::from_vec(vec![0.0, 0.0]); 2];
        let (post, r_a) = update_sensor(&LmbDensity::empty(), &z, &sensor(0.9, 1.0), 10, &mut rng).unwrap();
        assert!(post.is_empty());
        assert_eq!(r_a, vec![0.0, 0.0]);
    }

    #[test]
    fn prune_cap_and_extract() {
        let cfg = TrackerConfig::default();
        let low = LmbDensity::new((0..5).map(|i| component([0.0, 0.0], 1.0, 1e-4, i)).collect()).unwrap();
        assert!(prune_and_cap(&low, &cfg).is_empty());

        let many = LmbDensity::new(
            (0..150)
                .map(|i| component([0.0, 0.0], 1.0, 0.002 + i as f64 / 200.0, i))
                .collect(),
        )
        .unwrap();
        let kept = prune_and_cap(&many, &cfg);
        assert_eq!(kept.len(), 100);
        let min_kept = kept.components().iter().map(|c| c.existence).fold(1.0, f64::min);
        assert!((min_kept - (0.002 + 50.0 / 200.0)).abs() < 1e-12);

        let one = LmbDensity::new(vec![component([3.0, 4.0], 1.0, 0.6, 1)]).unwrap();
        let est = extract(&one, &cfg);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].state.as_slice(), &[3.0, 4.0]);
    }
}
