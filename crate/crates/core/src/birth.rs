//! Construction of the truncated birth LMB density from sampled measurement tuples.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::association::{unassociation_prob, AssociationTable};
use crate::error::{invalid, Result};
use crate::scalar::{lit, log_sum_exp, Real};
use crate::sensor::MotionModel;
use crate::types::{
    BernoulliComponent, BirthLabel, GaussianDensity, LmbDensity, MeasurementTuple, SpatialDensity,
};

/// Evaluates `ψ̄ᴶ` and the predicted birth spatial density of a tuple.
pub trait PsiBackend<T: Real> {
    fn log_psi_bar(&mut self, tuple: &MeasurementTuple) -> Result<T>;

    fn birth_spatial(
        &mut self,
        tuple: &MeasurementTuple,
        motion: &MotionModel<T>,
    ) -> Result<SpatialDensity<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthConfig {
    pub r_b_max: f64,
    /// Expected number of births per step.
    pub lambda_b: f64,
    pub min_detections: usize,
}

impl Default for BirthConfig {
    fn default() -> Self {
        Self {
            r_b_max: 1.0,
            lambda_b: 0.5,
            min_detections: 2,
        }
    }
}

impl BirthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r_b_max) {
            return Err(invalid("r_b_max", "must lie in [0, 1]"));
        }
        if !(self.lambda_b >= 0.0) {
            return Err(invalid("lambda_b", "must be non-negative"));
        }
        Ok(())
    }
}

/// `r̂(J) = r_U(J) ψ̄ᴶ / Σ_{J′} r_U(J′) ψ̄ᴶ′` with the sum over `tuples`. Tuples are returned
/// in set order. If every numerator is zero the result is empty.
pub fn effective_birth_probs<T: Real, B: PsiBackend<T> + ?Sized>(
    tuples: &BTreeSet<MeasurementTuple>,
    table: &AssociationTable<T>,
    backend: &mut B,
) -> Result<Vec<(MeasurementTuple, T)>> {
    let mut logs = Vec::with_capacity(tuples.len());
    for t in tuples {
        let ru = unassociation_prob(t, table)?;
        logs.push(ru.ln() + backend.log_psi_bar(t)?);
    }
    let total = log_sum_exp(&logs);
    if !total.is_finite() {
        return Ok(Vec::new());
    }
    Ok(tuples
        .iter()
        .zip(logs)
        .map(|(t, l)| (t.clone(), (l - total).exp()))
        .collect())
}

/// Birth LMB for time step `k + 1` from tuples sampled on the scan of step `k`.
///
/// Tuples with fewer than `min_detections` detections are dropped before `r̂` is normalized;
/// each survivor gets existence `min(r_B,max, r̂ λ_B)` and label `(k + 1, J)`.
pub fn build_birth_lmb<T: Real, B: PsiBackend<T> + ?Sized>(
    tuples: &BTreeSet<MeasurementTuple>,
    table: &AssociationTable<T>,
    backend: &mut B,
    motion: &MotionModel<T>,
    cfg: &BirthConfig,
    k: u64,
) -> Result<LmbDensity<T>> {
    cfg.validate()?;
    let survivors: BTreeSet<MeasurementTuple> = tuples
        .iter()
        .filter(|t| t.non_missed_count() >= cfg.min_detections)
        .cloned()
        .collect();
    if survivors.is_empty() {
        return Ok(LmbDensity::empty());
    }
    let r_max = lit::<T>(cfg.r_b_max);
    let lambda = lit::<T>(cfg.lambda_b);
    let mut components = Vec::with_capacity(survivors.len());
    for (tuple, r_hat) in effective_birth_probs(&survivors, table, backend)? {
        let r = r_hat * lambda;
        let existence = if r > r_max { r_max } else { r };
        if existence <= T::zero() {
            continue;
        }
        let spatial = backend.birth_spatial(&tuple, motion)?;
        components.push(BernoulliComponent::new(
            BirthLabel::new(k + 1, tuple),
            existence,
            spatial,
        )?);
    }
    LmbDensity::new(components)
}

/// Position grid for the static birth baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBirth {
    pub centers: Vec<[f64; 2]>,
    pub existence: f64,
    pub sigma_position: f64,
    pub sigma_velocity: f64,
}

impl GridBirth {
    /// `n × n` evenly spaced means spanning `[lo, hi]²`, endpoints included.
    pub fn linspace(lo: f64, hi: f64, n: usize, existence: f64, sigma_position: f64, sigma_velocity: f64) -> Self {
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        let centers = (0..n)
            .flat_map(|i| (0..n).map(move |j| [lo + step * i as f64, lo + step * j as f64]))
            .collect();
        Self {
            centers,
            existence,
            sigma_position,
            sigma_velocity,
        }
    }

    /// Stationary Gaussian components on `[pₓ, vₓ, p_y, v_y]`, labeled `(k + 1, (cell))`.
    pub fn build<T: Real>(&self, k: u64) -> Result<LmbDensity<T>> {
        let vp = self.sigma_position * self.sigma_position;
        let vv = self.sigma_velocity * self.sigma_velocity;
        let components = self
            .centers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let g = GaussianDensity::diagonal(&[c[0], 0.0, c[1], 0.0], &[vp, vv, vp, vv])?;
                BernoulliComponent::new(
                    BirthLabel::new(k + 1, MeasurementTuple::new(vec![i + 1])),
                    lit(self.existence),
                    SpatialDensity::Gaussian(g),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        LmbDensity::new(components)
    }
}

/// Mean positions of a birth density's components, handy for plotting.
pub fn birth_positions<T: Real>(lmb: &LmbDensity<T>) -> Vec<DVector<T>> {
    lmb.components().iter().map(|c| c.spatial.mean()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    struct Table(Vec<(MeasurementTuple, f64)>);

    impl PsiBackend<f64> for Table {
        fn log_psi_bar(&mut self, tuple: &MeasurementTuple) -> Result<f64> {
            Ok(self
                .0
                .iter()
                .find(|(t, _)| t == tuple)
                .map_or(f64::NEG_INFINITY, |(_, v)| v.ln()))
        }

        fn birth_spatial(
            &mut self,
            _tuple: &MeasurementTuple,
            _motion: &MotionModel<f64>,
        ) -> Result<SpatialDensity<f64>> {
            Ok(SpatialDensity::Gaussian(GaussianDensity::from_parts(
                DVector::zeros(2),
                DMatrix::identity(2, 2),
            )))
        }
    }

    fn tuples(list: &[&[usize]]) -> BTreeSet<MeasurementTuple> {
        list.iter().map(|t| MeasurementTuple::new(t.to_vec())).collect()
    }

    #[test]
    fn single_tuple_has_unit_probability() {
        let set = tuples(&[&[1, 1]]);
        let mut b = Table(vec![(MeasurementTuple::new(vec![1, 1]), 3.0)]);
        let r = effective_birth_probs(&set, &AssociationTable::zeros(&[1, 1]), &mut b).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_gives_quarter_existence() {
        let set = tuples(&[&[1, 1], &[2, 2]]);
        let mut b = Table(vec![
            (MeasurementTuple::new(vec![1, 1]), 2.0),
            (MeasurementTuple::new(vec![2, 2]), 2.0),
        ]);
        let table = AssociationTable::zeros(&[2, 2]);
        let r = effective_birth_probs(&set, &table, &mut b).unwrap();
        assert!(r.iter().all(|(_, p)| (p - 0.5).abs() < 1e-15));
        let lmb = build_birth_lmb(&set, &table, &mut b, &MotionModel::identity(2), &BirthConfig::default(), 4)
            .unwrap();
        assert_eq!(lmb.len(), 2);
        for c in lmb.components() {
            assert!((c.existence - 0.25).abs() < 1e-15);
            assert_eq!(c.label.timestep, 5);
        }
    }

    #[test]
    fn existence_is_clamped() {
        let set = tuples(&[&[1, 1]]);
        let mut b = Table(vec![(MeasurementTuple::new(vec![1, 1]), 1.0)]);
        let cfg = BirthConfig {
            r_b_max: 1.0,
            lambda_b: 2.0,
            min_detections: 0,
        };
        let lmb = build_birth_lmb(&set, &AssociationTable::zeros(&[1, 1]), &mut b, &MotionModel::identity(2), &cfg, 0)
            .unwrap();
        assert_eq!(lmb.components()[0].existence, 1.0);
    }

    #[test]
    fn single_detection_tuple_excluded() {
        let set = tuples(&[&[1, 0, 0, 0], &[1, 1, 0, 0]]);
        let mut b = Table(vec![
            (MeasurementTuple::new(vec![1, 0, 0, 0]), 5.0),
            (MeasurementTuple::new(vec![1, 1, 0, 0]), 1.0),
        ]);
        let lmb = build_birth_lmb(
            &set,
            &AssociationTable::zeros(&[1, 1, 0, 0]),
            &mut b,
            &MotionModel::identity(2),
            &BirthConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(lmb.len(), 1);
        assert_eq!(lmb.components()[0].label.tuple, MeasurementTuple::new(vec![1, 1, 0, 0]));
        assert!((lmb.components()[0].existence - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_zero_numerators_give_empty() {
        let set = tuples(&[&[1, 1]]);
        let mut b = Table(vec![]);
        let r = effective_birth_probs(&set, &AssociationTable::zeros(&[1, 1]), &mut b).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn grid_has_one_hundred_components() {
        let g = GridBirth::linspace(-2000.0, 12_000.0, 10, 0.1, 250.0, 50.0);
        let lmb = g.build::<f64>(0).unwrap();
        assert_eq!(lmb.len(), 100);
        assert_eq!(lmb.components()[0].spatial.mean()[0], -2000.0);
        assert_eq!(lmb.components()[99].spatial.mean()[2], 12_000.0);
        assert!(lmb.components().iter().all(|c| c.existence == 0.1));
    }
}
