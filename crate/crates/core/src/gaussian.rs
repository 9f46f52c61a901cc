//! Closed-form linear-Gaussian backend: information-form accumulation of a tuple's
//! measurements, `ψ̄ᴶ`, the sampler conditionals and the birth spatial density.

use nalgebra::{DMatrix, DVector};

use crate::association::AssociationTable;
use crate::birth::PsiBackend;
use crate::error::{Error, Result};
use crate::gibbs::ConditionalBackend;
use crate::linalg::{cholesky, cholesky_into, log_det_chol, log_det_factor, quad_form_inv, symmetrize};
use crate::scalar::{exp_normalized_max, lit, Real};
use crate::sensor::{MeasurementSet, MotionModel, SensorKind, SensorModel};
use crate::types::{GaussianDensity, MeasurementTuple, SpatialDensity};

/// Information form of the birth prior.
#[derive(Debug, Clone)]
pub struct PriorCache<T: Real> {
    pub p0_inv: DMatrix<T>,
    pub p0_inv_mu0: DVector<T>,
    /// `μ₀ᵀ P₀⁻¹ μ₀`.
    pub c0: T,
    pub log_det_p0: T,
}

impl<T: Real> PriorCache<T> {
    pub fn new(prior: &GaussianDensity<T>) -> Result<Self> {
        let chol = cholesky(&prior.cov, "birth prior covariance")?;
        let p0_inv = symmetrize(&chol.inverse());
        let p0_inv_mu0 = chol.solve(&prior.mean);
        let c0 = prior.mean.dot(&p0_inv_mu0);
        Ok(Self {
            p0_inv,
            p0_inv_mu0,
            c0,
            log_det_p0: log_det_chol(&chol),
        })
    }
}

/// Per-sensor terms that do not depend on the measurements.
#[derive(Debug, Clone)]
pub struct SensorCache<T: Real> {
    pub ht_rinv: DMatrix<T>,
    pub ht_rinv_h: DMatrix<T>,
    pub r_inv: DMatrix<T>,
    pub log_det_r: T,
    pub n_z: usize,
    pub log_pd: T,
    pub log_miss: T,
}

impl<T: Real> SensorCache<T> {
    pub fn new(index: usize, sensor: &SensorModel<T>) -> Result<Self> {
        let SensorKind::LinearGaussian { h, r } = &sensor.kind else {
            return Err(Error::UnsupportedSensor {
                sensor: index,
                backend: "gaussian backend",
                reason: "measurement model is not linear",
            });
        };
        let chol = cholesky(r, "measurement noise")?;
        let r_inv = symmetrize(&chol.inverse());
        let ht_rinv = h.transpose() * &r_inv;
        let ht_rinv_h = symmetrize(&(&ht_rinv * h));
        Ok(Self {
            ht_rinv,
            ht_rinv_h,
            r_inv,
            log_det_r: log_det_chol(&chol),
            n_z: h.nrows(),
            log_pd: sensor.detection_prob.ln(),
            log_miss: (T::one() - sensor.detection_prob).ln(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PrecomputeCache<T: Real> {
    pub prior: PriorCache<T>,
    pub sensors: Vec<SensorCache<T>>,
}

impl<T: Real> PrecomputeCache<T> {
    pub fn new(prior: &GaussianDensity<T>, sensors: &[SensorModel<T>]) -> Result<Self> {
        let sensors = sensors
            .iter()
            .enumerate()
            .map(|(i, s)| SensorCache::new(i, s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(s) = sensors.iter().find(|s| s.ht_rinv.nrows() != prior.dim()) {
            return Err(Error::DimensionMismatch {
                what: "measurement matrix columns",
                expected: prior.dim(),
                got: s.ht_rinv.nrows(),
            });
        }
        Ok(Self {
            prior: PriorCache::new(prior)?,
            sensors,
        })
    }

    /// Same sensors, different prior.
    pub fn with_prior(&self, prior: &GaussianDensity<T>) -> Result<Self> {
        Ok(Self {
            prior: PriorCache::new(prior)?,
            sensors: self.sensors.clone(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.prior.p0_inv.nrows()
    }
}

/// `M_J`, `b_J`, `c_J` and the log of the constant prefactor of `ψ̄ᴶ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoAccumulator<T: Real> {
    pub m: DMatrix<T>,
    pub b: DVector<T>,
    pub c: T,
    /// `Σ_{j=0} ln(1 − p_D) + Σ_{j>0} [ln(p_D/κ(z_j)) − ½(n_z ln 2π + ln det R)]`.
    pub log_norm: T,
}

impl<T: Real> InfoAccumulator<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            c: T::zero(),
            log_norm: T::zero(),
        }
    }
}

fn check_tuple<T: Real>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    cache: &PrecomputeCache<T>,
) -> Result<()> {
    if z_sets.len() != cache.sensors.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement sets",
            expected: cache.sensors.len(),
            got: z_sets.len(),
        });
    }
    let counts: Vec<usize> = z_sets.iter().map(Vec::len).collect();
    tuple.validate(&counts)
}

/// Adds the measurement terms of `tuple` to `acc`, which must start from the prior terms.
fn add_measurements<T: Real>(
    acc: &mut InfoAccumulator<T>,
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    log_ratio: &[Vec<T>],
    cache: &PrecomputeCache<T>,
) {
    let half = lit::<T>(0.5);
    let ln_2pi = T::two_pi().ln();
    for (s, (&j, sc)) in tuple.indices().iter().zip(&cache.sensors).enumerate() {
        if j == 0 {
            acc.log_norm += sc.log_miss;
            continue;
        }
        let z = &z_sets[s][j - 1];
        acc.m += &sc.ht_rinv_h;
        acc.b.gemv(T::one(), &sc.ht_rinv, z, T::one());
        let mut q = T::zero();
        for a in 0..sc.n_z {
            let mut row = T::zero();
            for bb in 0..sc.n_z {
                row += sc.r_inv[(a, bb)] * z[bb];
            }
            q += z[a] * row;
        }
        acc.c += q;
        acc.log_norm += log_ratio[s][j - 1]
            - half * (lit::<T>(sc.n_z as f64) * ln_2pi + sc.log_det_r);
    }
}

fn reset<T: Real>(acc: &mut InfoAccumulator<T>, prior: &PriorCache<T>) {
    acc.m.copy_from(&prior.p0_inv);
    acc.b.copy_from(&prior.p0_inv_mu0);
    acc.c = prior.c0;
    acc.log_norm = T::zero();
}

fn log_ratios<T: Real>(z_sets: &[MeasurementSet<T>], sensors: &[SensorModel<T>]) -> Vec<Vec<T>> {
    z_sets
        .iter()
        .zip(sensors)
        .map(|(zs, s)| {
            zs.iter()
                .map(|z| s.detection_prob.ln() - s.clutter.log_intensity(z))
                .collect()
        })
        .collect()
}

/// `M_J = P₀⁻¹ + Σ HᵀR⁻¹H`, `b_J = P₀⁻¹μ₀ + Σ HᵀR⁻¹z`, `c_J = μ₀ᵀP₀⁻¹μ₀ + Σ zᵀR⁻¹z`, sums
/// over the detected sensors of `tuple`.
pub fn accumulate<T: Real>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    cache: &PrecomputeCache<T>,
) -> Result<InfoAccumulator<T>> {
    check_tuple(tuple, z_sets, cache)?;
    let mut acc = InfoAccumulator::zeros(cache.state_dim());
    reset(&mut acc, &cache.prior);
    add_measurements(&mut acc, tuple, z_sets, &log_ratios(z_sets, sensors), cache);
    Ok(acc)
}

/// `ln ψ̄ᴶ` from an accumulator.
pub fn log_psi_bar_from<T: Real>(acc: &InfoAccumulator<T>, prior: &PriorCache<T>) -> Result<T> {
    let chol = cholesky(&acc.m, "information matrix")?;
    let quad = acc.c - acc.b.dot(&chol.solve(&acc.b));
    let half = lit::<T>(0.5);
    Ok(acc.log_norm - half * (prior.log_det_p0 + log_det_chol(&chol)) - half * quad)
}

/// Log of the expected multi-sensor pseudolikelihood of `tuple` under the birth prior.
pub fn log_psi_bar<T: Real>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    cache: &PrecomputeCache<T>,
) -> Result<T> {
    let acc = accumulate(tuple, z_sets, sensors, cache)?;
    log_psi_bar_from(&acc, &cache.prior)
}

/// `𝒩(F M⁻¹ b, F M⁻¹ Fᵀ + Q)`.
pub fn birth_spatial<T: Real>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    cache: &PrecomputeCache<T>,
    motion: &MotionModel<T>,
) -> Result<GaussianDensity<T>> {
    let acc = accumulate(tuple, z_sets, sensors, cache)?;
    spatial_from(&acc, motion)
}

fn spatial_from<T: Real>(acc: &InfoAccumulator<T>, motion: &MotionModel<T>) -> Result<GaussianDensity<T>> {
    let chol = cholesky(&acc.m, "information matrix")?;
    let mean = chol.solve(&acc.b);
    let cov = symmetrize(&chol.inverse());
    Ok(GaussianDensity::from_parts(
        &motion.f * mean,
        &motion.f * cov * motion.f.transpose() + &motion.q,
    ))
}

/// Birth backend bound to one scan of measurements.
#[derive(Debug, Clone)]
pub struct GaussianBackend<T: Real> {
    cache: PrecomputeCache<T>,
    sensors: Vec<SensorModel<T>>,
    z_sets: Vec<MeasurementSet<T>>,
    counts: Vec<usize>,
    log_ratio: Vec<Vec<T>>,
    acc: InfoAccumulator<T>,
    factor: DMatrix<T>,
    work: DVector<T>,
    log_w: Vec<T>,
}

impl<T: Real> GaussianBackend<T> {
    pub fn new(
        prior: &GaussianDensity<T>,
        sensors: &[SensorModel<T>],
        z_sets: &[MeasurementSet<T>],
    ) -> Result<Self> {
        let cache = PrecomputeCache::new(prior, sensors)?;
        Self::with_cache(cache, sensors, z_sets)
    }

    pub fn with_cache(
        cache: PrecomputeCache<T>,
        sensors: &[SensorModel<T>],
        z_sets: &[MeasurementSet<T>],
    ) -> Result<Self> {
        if z_sets.len() != sensors.len() || cache.sensors.len() != sensors.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement sets",
                expected: sensors.len(),
                got: z_sets.len(),
            });
        }
        for (s, zs) in z_sets.iter().enumerate() {
            if let Some(z) = zs.iter().find(|z| z.len() != cache.sensors[s].n_z) {
                return Err(Error::DimensionMismatch {
                    what: "measurement",
                    expected: cache.sensors[s].n_z,
                    got: z.len(),
                });
            }
        }
        let n = cache.state_dim();
        Ok(Self {
            log_ratio: log_ratios(z_sets, sensors),
            counts: z_sets.iter().map(Vec::len).collect(),
            sensors: sensors.to_vec(),
            z_sets: z_sets.to_vec(),
            cache,
            acc: InfoAccumulator::zeros(n),
            factor: DMatrix::zeros(n, n),
            work: DVector::zeros(n),
            log_w: Vec::new(),
        })
    }

    pub fn cache(&self) -> &PrecomputeCache<T> {
        &self.cache
    }

    pub fn z_sets(&self) -> &[MeasurementSet<T>] {
        &self.z_sets
    }

    pub fn sensors(&self) -> &[SensorModel<T>] {
        &self.sensors
    }

    pub fn accumulate(&self, tuple: &MeasurementTuple) -> Result<InfoAccumulator<T>> {
        accumulate(tuple, &self.z_sets, &self.sensors, &self.cache)
    }

    /// `−½ ln det M_J − ½ (c_J − b_Jᵀ M_J⁻¹ b_J)` for `tuple`, re-accumulated from scratch.
    fn data_term(&mut self, tuple: &MeasurementTuple) -> Result<T> {
        reset(&mut self.acc, &self.cache.prior);
        add_measurements(&mut self.acc, tuple, &self.z_sets, &self.log_ratio, &self.cache);
        if !cholesky_into(&self.acc.m, &mut self.factor) {
            return Err(Error::NotPositiveDefinite {
                what: "information matrix",
            });
        }
        let quad = self.acc.c - quad_form_inv(&self.factor, &self.acc.b, &mut self.work);
        let half = lit::<T>(0.5);
        Ok(-half * log_det_factor(&self.factor) - half * quad)
    }
}

impl<T: Real> ConditionalBackend<T> for GaussianBackend<T> {
    fn counts(&self) -> &[usize] {
        &self.counts
    }

    fn conditional_weights(
        &mut self,
        s: usize,
        tuple: &MeasurementTuple,
        table: &AssociationTable<T>,
        out: &mut Vec<T>,
    ) -> Result<()> {
        check_tuple(tuple, &self.z_sets, &self.cache)?;
        let m = self.counts[s];
        let sc_log_miss = self.cache.sensors[s].log_miss;
        let detect_const = -lit::<T>(0.5)
            * (lit::<T>(self.cache.sensors[s].n_z as f64) * T::two_pi().ln()
                + self.cache.sensors[s].log_det_r);
        let mut log_w = std::mem::take(&mut self.log_w);
        log_w.clear();
        let mut candidate = tuple.with(s, 0);
        log_w.push(sc_log_miss + self.data_term(&candidate)?);
        for j in 1..=m {
            let keep = T::one() - table.get(s, j);
            if keep <= T::zero() {
                log_w.push(lit(f64::NEG_INFINITY));
                continue;
            }
            candidate.set(s, j);
            let data = self.data_term(&candidate)?;
            log_w.push(detect_const + keep.ln() + self.log_ratio[s][j - 1] + data);
        }
        exp_normalized_max(&log_w, out);
        self.log_w = log_w;
        Ok(())
    }
}

impl<T: Real> PsiBackend<T> for GaussianBackend<T> {
    fn log_psi_bar(&mut self, tuple: &MeasurementTuple) -> Result<T> {
        log_psi_bar(tuple, &self.z_sets, &self.sensors, &self.cache)
    }

    fn birth_spatial(
        &mut self,
        tuple: &MeasurementTuple,
        motion: &MotionModel<T>,
    ) -> Result<SpatialDensity<T>> {
        birth_spatial(tuple, &self.z_sets, &self.sensors, &self.cache, motion)
            .map(SpatialDensity::Gaussian)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::unassociation_prob;
    use crate::sensor::ClutterModel;

    fn identity_sensor(pd: f64, kappa: f64) -> SensorModel<f64> {
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

    fn z(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn all_missed_accumulates_prior_only() {
        let prior = GaussianDensity::new(z(1.0, -2.0), DMatrix::identity(2, 2) * 4.0).unwrap();
        let sensors = vec![identity_sensor(0.9, 1e-3), identity_sensor(0.8, 1e-3)];
        let zs = vec![vec![z(0.0, 0.0)], vec![z(1.0, 1.0)]];
        let cache = PrecomputeCache::new(&prior, &sensors).unwrap();
        let j = MeasurementTuple::all_missed(2);
        let acc = accumulate(&j, &zs, &sensors, &cache).unwrap();
        assert!((&acc.m - DMatrix::identity(2, 2) * 0.25).norm() < 1e-15);
        assert!((&acc.b - z(0.25, -0.5)).norm() < 1e-15);
        assert!((acc.c - 1.25).abs() < 1e-15);
        let lp = log_psi_bar(&j, &zs, &sensors, &cache).unwrap();
        assert!((lp - (0.1f64.ln() + 0.2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn diffuse_prior_recovers_measurement() {
        let prior = GaussianDensity::new(z(0.0, 0.0), DMatrix::identity(2, 2) * 1e12).unwrap();
        let sensors = vec![identity_sensor(0.9, 1e-3)];
        let zs = vec![vec![z(3.0, -7.0)]];
        let cache = PrecomputeCache::new(&prior, &sensors).unwrap();
        let j = MeasurementTuple::new(vec![1]);
        let acc = accumulate(&j, &zs, &sensors, &cache).unwrap();
        assert!((&acc.m - DMatrix::identity(2, 2)).norm() < 1e-9);
        let g = birth_spatial(&j, &zs, &sensors, &cache, &MotionModel::identity(2)).unwrap();
        assert!((&g.mean - z(3.0, -7.0)).norm() < 1e-9);
    }

    #[test]
    fn duplicate_sensor_doubles_data_term() {
        let prior = GaussianDensity::new(z(0.0, 0.0), DMatrix::identity(2, 2)).unwrap();
        let sensors = vec![identity_sensor(0.9, 1e-3), identity_sensor(0.9, 1e-3)];
        let zs = vec![vec![z(1.0, 2.0)], vec![z(1.0, 2.0)]];
        let cache = PrecomputeCache::new(&prior, &sensors).unwrap();
        let one = accumulate(&MeasurementTuple::new(vec![1, 0]), &zs, &sensors, &cache).unwrap();
        let two = accumulate(&MeasurementTuple::new(vec![1, 1]), &zs, &sensors, &cache).unwrap();
        let p0 = &cache.prior.p0_inv;
        assert!(((&two.m - p0) - (&one.m - p0) * 2.0).norm() < 1e-12);
    }

    #[test]
    fn all_missed_birth_is_predicted_prior() {
        let prior = GaussianDensity::new(z(1.0, 2.0), DMatrix::identity(2, 2) * 3.0).unwrap();
        let sensors = vec![identity_sensor(0.9, 1e-3)];
        let zs = vec![vec![z(5.0, 5.0)]];
        let cache = PrecomputeCache::new(&prior, &sensors).unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let motion = MotionModel::new(f.clone(), DMatrix::identity(2, 2) * 0.5, 1.0).unwrap();
        let g = birth_spatial(&MeasurementTuple::new(vec![0]), &zs, &sensors, &cache, &motion)
            .unwrap();
        assert!((&g.mean - &f * z(1.0, 2.0)).norm() < 1e-12);
        let expected = &f * (DMatrix::identity(2, 2) * 3.0) * f.transpose() + DMatrix::identity(2, 2) * 0.5;
        assert!((&g.cov - expected).norm() < 1e-12);
    }

    #[test]
    fn conditional_matches_normalized_psi_bar() {
        let prior = GaussianDensity::new(z(0.0, 0.0), DMatrix::identity(2, 2) * 25.0).unwrap();
        let sensors = vec![identity_sensor(0.9, 1e-2), identity_sensor(0.7, 5e-3), identity_sensor(0.8, 2e-2)];
        let zs = vec![
            vec![z(1.0, 0.5), z(-3.0, 2.0)],
            vec![z(1.2, 0.2), z(4.0, 4.0), z(0.0, -1.0)],
            vec![z(0.8, 0.7)],
        ];
        let table = AssociationTable::new(vec![vec![0.3, 0.0], vec![0.0, 0.9, 0.1], vec![0.5]]);
        let mut backend = GaussianBackend::new(&prior, &sensors, &zs).unwrap();
        let base = MeasurementTuple::new(vec![1, 2, 1]);
        let mut w = Vec::new();
        for s in 0..3 {
            backend.conditional_weights(s, &base, &table, &mut w).unwrap();
            let direct: Vec<f64> = (0..=zs[s].len())
                .map(|j| {
                    let t = base.with(s, j);
                    let lp = log_psi_bar(&t, &zs, &sensors, backend.cache()).unwrap();
                    unassociation_prob(&t, &table).unwrap() * lp.exp()
                })
                .collect();
            let a: f64 = w.iter().sum();
            let b: f64 = direct.iter().sum();
            for (x, y) in w.iter().zip(&direct) {
                assert!((x / a - y / b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_association_zeroes_weight() {
        let prior = GaussianDensity::new(z(0.0, 0.0), DMatrix::identity(2, 2)).unwrap();
        let sensors = vec![identity_sensor(0.9, 1e-2)];
        let zs = vec![vec![z(0.0, 0.0)]];
        let mut backend = GaussianBackend::new(&prior, &sensors, &zs).unwrap();
        let j = MeasurementTuple::new(vec![0]);
        let (mut free, mut full) = (Vec::new(), Vec::new());
        backend
            .conditional_weights(0, &j, &AssociationTable::zeros(&[1]), &mut free)
            .unwrap();
        backend
            .conditional_weights(0, &j, &AssociationTable::new(vec![vec![1.0]]), &mut full)
            .unwrap();
        // r_A = 1 is clamped to 1 − 1e-9, leaving the weight scaled by 1e-9.
        let scale = (full[1] / full[0]) / (free[1] / free[0]);
        assert!((scale / 1e-9 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bearing_sensor() {
        let (lo, hi) = crate::sensor::bearing_range_window(1000.0);
        let s = SensorModel::bearing_range(0.9, ClutterModel::uniform(1.0, lo, hi).unwrap(), [0.0, 0.0], [0.1, 1.0]).unwrap();
        let prior = GaussianDensity::diagonal(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!(matches!(
            PrecomputeCache::new(&prior, &[s]),
            Err(Error::UnsupportedSensor { .. })
        ));
    }
}
