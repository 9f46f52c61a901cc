//! Exhaustive ground truth on small instances: the exact tuple distribution, ε-truncation,
//! and a single-step δ-GLMB joint predict/update used to check the truncation bound.

use std::collections::{BTreeSet, HashMap};

use crate::association::{unassociation_prob, AssociationTable};
use crate::birth::PsiBackend;
use crate::error::{invalid, Error, Result};
use crate::gaussian::{accumulate, log_psi_bar_from, PrecomputeCache};
use crate::linalg::symmetrize;
use crate::scalar::log_sum_exp;
use crate::sensor::{MeasurementSet, MotionModel, SensorModel};
use crate::types::{BirthLabel, GaussianDensity, LmbDensity, MeasurementTuple, SpatialDensity};

/// Largest tuple space [`enumerate_exact`] will walk.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// `p(J) ∝ r_U(J) ψ̄ᴶ` over the whole tuple space.
#[derive(Debug, Clone)]
pub struct ExactTupleDistribution {
    pub entries: Vec<(MeasurementTuple, f64)>,
    pub log_normalizer: f64,
}

impl ExactTupleDistribution {
    pub fn prob(&self, tuple: &MeasurementTuple) -> f64 {
        self.entries
            .binary_search_by(|(t, _)| t.cmp(tuple))
            .map_or(0.0, |i| self.entries[i].1)
    }

    /// `½ Σ |p(J) − p̂(J)|` against the empirical distribution of `samples`.
    pub fn tv_distance(&self, samples: &[MeasurementTuple]) -> f64 {
        let mut counts: HashMap<&MeasurementTuple, usize> = HashMap::new();
        for t in samples {
            *counts.entry(t).or_default() += 1;
        }
        let n = samples.len().max(1) as f64;
        let mut tv = 0.0;
        for (t, p) in &self.entries {
            let q = counts.remove(t).unwrap_or(0) as f64 / n;
            tv += (p - q).abs();
        }
        tv += counts.values().map(|&c| c as f64 / n).sum::<f64>();
        0.5 * tv
    }
}

/// Exact normalized tuple distribution over `∏ₛ {0..=mₛ}`.
pub fn enumerate_exact<B: PsiBackend<f64> + ?Sized>(
    counts: &[usize],
    table: &AssociationTable<f64>,
    backend: &mut B,
) -> Result<ExactTupleDistribution> {
    let size = MeasurementTuple::space_size(counts);
    if size > ENUMERATION_LIMIT {
        return Err(Error::SpaceTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut tuples = Vec::with_capacity(size as usize);
    let mut logs = Vec::with_capacity(size as usize);
    for t in MeasurementTuple::enumerate(counts) {
        logs.push(unassociation_prob(&t, table)?.ln() + backend.log_psi_bar(&t)?);
        tuples.push(t);
    }
    let log_normalizer = log_sum_exp(&logs);
    if !log_normalizer.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(ExactTupleDistribution {
        entries: tuples
            .into_iter()
            .zip(logs)
            .map(|(t, l)| (t, (l - log_normalizer).exp()))
            .collect(),
        log_normalizer,
    })
}

/// Labels whose birth probability is at least `epsilon`.
pub fn epsilon_truncation(birth: &LmbDensity<f64>, epsilon: f64) -> BTreeSet<BirthLabel> {
    birth
        .components()
        .iter()
        .filter(|c| c.existence >= epsilon)
        .map(|c| c.label.clone())
        .collect()
}

/// One object of a δ-GLMB hypothesis.
#[derive(Debug, Clone)]
pub struct GlmbTrack {
    pub label: BirthLabel,
    /// Measurement index per sensor assigned by the update; `None` for prior tracks.
    pub assoc: Option<MeasurementTuple>,
    pub density: GaussianDensity<f64>,
}

#[derive(Debug, Clone)]
pub struct GlmbHypothesis {
    pub tracks: Vec<GlmbTrack>,
    /// Normalized weight.
    pub weight: f64,
    /// Unnormalized weight from the update (equal to `weight` for a prior).
    pub raw_weight: f64,
}

impl GlmbHypothesis {
    pub fn labels(&self) -> impl Iterator<Item = &BirthLabel> {
        self.tracks.iter().map(|t| &t.label)
    }
}

/// Small δ-GLMB density with one spatial density per hypothesis track.
#[derive(Debug, Clone, Default)]
pub struct TinyGlmb {
    pub hypotheses: Vec<GlmbHypothesis>,
}

impl TinyGlmb {
    /// Builds a prior from labeled Gaussians and weighted label subsets (indices into
    /// `tracks`). Weights are normalized.
    pub fn new(tracks: Vec<(BirthLabel, GaussianDensity<f64>)>, subsets: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let total: f64 = subsets.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(invalid("hypothesis weights", "must have a positive sum"));
        }
        let mut hypotheses = Vec::with_capacity(subsets.len());
        for (idx, w) in subsets {
            let mut seen = BTreeSet::new();
            let mut ts = Vec::with_capacity(idx.len());
            for i in idx {
                let (label, density) = tracks
                    .get(i)
                    .ok_or_else(|| invalid("hypothesis", "track index out of range"))?;
                if !seen.insert(label.clone()) {
                    return Err(Error::LabelCollision(label.to_string()));
                }
                ts.push(GlmbTrack {
                    label: label.clone(),
                    assoc: None,
                    density: density.clone(),
                });
            }
            hypotheses.push(GlmbHypothesis {
                tracks: ts,
                weight: w / total,
                raw_weight: w / total,
            });
        }
        Ok(Self { hypotheses })
    }

    pub fn labels(&self) -> BTreeSet<BirthLabel> {
        self.hypotheses
            .iter()
            .flat_map(|h| h.labels().cloned())
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.hypotheses.iter().map(|h| h.weight).sum()
    }

    /// Existence probability of `label`: total weight of hypotheses containing it.
    pub fn existence(&self, label: &BirthLabel) -> f64 {
        self.hypotheses
            .iter()
            .filter(|h| h.labels().any(|l| l == label))
            .map(|h| h.weight)
            .sum()
    }
}

/// Size guard for the exhaustive update.
pub const MAX_TINY_LABELS: usize = 4;
pub const MAX_TINY_SENSORS: usize = 2;
pub const MAX_TINY_MEASUREMENTS: usize = 2;

fn check_tiny(prior: &TinyGlmb, birth: &LmbDensity<f64>, z_sets: &[MeasurementSet<f64>]) -> Result<()> {
    let n_labels = prior.labels().len() + birth.len();
    let too_big = n_labels > MAX_TINY_LABELS
        || z_sets.len() > MAX_TINY_SENSORS
        || z_sets.iter().any(|z| z.len() > MAX_TINY_MEASUREMENTS);
    if too_big {
        return Err(invalid(
            "exhaustive update size",
            format!(
                "{n_labels} labels, {} sensors; limits are {MAX_TINY_LABELS} labels, \
                 {MAX_TINY_SENSORS} sensors, {MAX_TINY_MEASUREMENTS} measurements per sensor",
                z_sets.len()
            ),
        ));
    }
    Ok(())
}

/// All partial injections of `n` objects into `{1..=m}`, as index vectors with 0 = missed.
fn partial_injections(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(pos: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        cur[pos] = 0;
        rec(pos + 1, cur, used, out);
        for j in 1..used.len() {
            if !used[j] {
                used[j] = true;
                cur[pos] = j;
                rec(pos + 1, cur, used, out);
                used[j] = false;
            }
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    rec(0, &mut vec![0; n], &mut vec![false; m + 1], &mut out);
    out
}

/// Cartesian product of per-sensor injections; entry `[s][i]` is the index of object `i` at sensor `s`.
fn association_maps(n: usize, counts: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let mut maps: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for &m in counts {
        let inj = partial_injections(n, m);
        let mut next = Vec::with_capacity(maps.len() * inj.len());
        for prefix in &maps {
            for i in &inj {
                let mut v = prefix.clone();
                v.push(i.clone());
                next.push(v);
            }
        }
        maps = next;
    }
    maps
}

fn kalman_predict(g: &GaussianDensity<f64>, motion: &MotionModel<f64>) -> GaussianDensity<f64> {
    GaussianDensity::from_parts(
        &motion.f * &g.mean,
        symmetrize(&(&motion.f * &g.cov * motion.f.transpose() + &motion.q)),
    )
}

struct PsiCache<'a> {
    z_sets: &'a [MeasurementSet<f64>],
    sensors: &'a [SensorModel<f64>],
    base: PrecomputeCache<f64>,
    values: HashMap<(BirthLabel, MeasurementTuple), (f64, GaussianDensity<f64>)>,
}

impl PsiCache<'_> {
    /// `ψ̄` of `label` under `tuple` with the label's predicted density, and the posterior.
    fn get(
        &mut self,
        label: &BirthLabel,
        predicted: &GaussianDensity<f64>,
        tuple: &MeasurementTuple,
    ) -> Result<(f64, GaussianDensity<f64>)> {
        let key = (label.clone(), tuple.clone());
        if let Some(v) = self.values.get(&key) {
            return Ok(v.clone());
        }
        let cache = self.base.with_prior(predicted)?;
        let acc = accumulate(tuple, self.z_sets, self.sensors, &cache)?;
        let psi = log_psi_bar_from(&acc, &cache.prior)?.exp();
        let chol = crate::linalg::cholesky(&acc.m, "information matrix")?;
        let post = GaussianDensity::from_parts(chol.solve(&acc.b), symmetrize(&chol.inverse()));
        self.values.insert(key, (psi, post.clone()));
        Ok((psi, post))
    }
}

/// Exhaustive joint prediction and multi-sensor update of a δ-GLMB with an LMB birth, for
/// linear-Gaussian sensors. Hypothesis weights are
/// `w · (1−p_s)^{I∖S} p_s^{S} (1−r_B)^{𝔹∖B} r_B^{B} ∏_{l∈I₊} ψ̄(l)` over survivors `S ⊆ I`,
/// births `B ⊆ 𝔹` and per-sensor positive 1:1 association maps.
pub fn tiny_glmb_update(
    prior: &TinyGlmb,
    birth: &LmbDensity<f64>,
    z_sets: &[MeasurementSet<f64>],
    sensors: &[SensorModel<f64>],
    motion: &MotionModel<f64>,
    p_survival: f64,
) -> Result<TinyGlmb> {
    check_tiny(prior, birth, z_sets)?;
    if !(0.0..=1.0).contains(&p_survival) {
        return Err(invalid("p_survival", "must lie in [0, 1]"));
    }
    if z_sets.len() != sensors.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement sets",
            expected: sensors.len(),
            got: z_sets.len(),
        });
    }
    let any_density = birth
        .components()
        .iter()
        .find_map(|c| match &c.spatial {
            SpatialDensity::Gaussian(g) => Some(g.clone()),
            SpatialDensity::Particles(_) => None,
        })
        .or_else(|| {
            prior
                .hypotheses
                .iter()
                .flat_map(|h| h.tracks.iter())
                .map(|t| t.density.clone())
                .next()
        });
    let Some(any_density) = any_density else {
        return Ok(TinyGlmb {
            hypotheses: prior.hypotheses.clone(),
        });
    };
    let mut births = Vec::with_capacity(birth.len());
    for c in birth.components() {
        match &c.spatial {
            SpatialDensity::Gaussian(g) => births.push((c.label.clone(), c.existence, g.clone())),
            SpatialDensity::Particles(_) => {
                return Err(invalid("birth density", "the exhaustive update needs Gaussian components"))
            }
        }
    }
    let counts: Vec<usize> = z_sets.iter().map(Vec::len).collect();
    let mut psi = PsiCache {
        z_sets,
        sensors,
        base: PrecomputeCache::new(&any_density, sensors)?,
        values: HashMap::new(),
    };
    let mut out = Vec::new();
    for hyp in &prior.hypotheses {
        let n_prior = hyp.tracks.len();
        for s_mask in 0..(1usize << n_prior) {
            for b_mask in 0..(1usize << births.len()) {
                let mut base = hyp.weight;
                let mut objects: Vec<(BirthLabel, GaussianDensity<f64>)> = Vec::new();
                for (i, t) in hyp.tracks.iter().enumerate() {
                    if s_mask >> i & 1 == 1 {
                        base *= p_survival;
                        objects.push((t.label.clone(), kalman_predict(&t.density, motion)));
                    } else {
                        base *= 1.0 - p_survival;
                    }
                }
                for (i, (label, r, g)) in births.iter().enumerate() {
                    if b_mask >> i & 1 == 1 {
                        base *= r;
                        objects.push((label.clone(), g.clone()));
                    } else {
                        base *= 1.0 - r;
                    }
                }
                if base == 0.0 {
                    continue;
                }
                for map in association_maps(objects.len(), &counts) {
                    let mut w = base;
                    let mut tracks = Vec::with_capacity(objects.len());
                    for (i, (label, pred)) in objects.iter().enumerate() {
                        let tuple = MeasurementTuple::new(map.iter().map(|m| m[i]).collect());
                        let (v, post) = psi.get(label, pred, &tuple)?;
                        w *= v;
                        tracks.push(GlmbTrack {
                            label: label.clone(),
                            assoc: Some(tuple),
                            density: post,
                        });
                    }
                    out.push(GlmbHypothesis {
                        tracks,
                        weight: w,
                        raw_weight: w,
                    });
                }
            }
        }
    }
    let total: f64 = out.iter().map(|h| h.raw_weight).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    for h in &mut out {
        h.weight = h.raw_weight / total;
    }
    Ok(TinyGlmb { hypotheses: out })
}

/// `r_A(j⁽ˢ⁾)`: total normalized weight of posterior hypotheses in which some object is
/// assigned measurement `j` of sensor `s`.
pub fn exact_association_probs(posterior: &TinyGlmb, counts: &[usize]) -> AssociationTable<f64> {
    let mut table: Vec<Vec<f64>> = counts.iter().map(|&m| vec![0.0; m]).collect();
    for h in &posterior.hypotheses {
        for (s, row) in table.iter_mut().enumerate() {
            for t in &h.tracks {
                if let Some(a) = &t.assoc {
                    let j = a.get(s);
                    if j > 0 {
                        row[j - 1] += h.weight;
                    }
                }
            }
        }
    }
    AssociationTable::new(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub l1_distance: f64,
    pub bound: f64,
    pub truncated_labels: usize,
    pub truncated_hypotheses: usize,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.l1_distance <= self.bound * (1.0 + 1e-12)
    }
}

/// Truncation error between the posteriors under the full birth and its ε-superlevel subset.
///
/// The truncated posterior keeps exactly the full posterior's hypotheses free of truncated
/// labels, so the L1 distance is the unnormalized weight of the rest. The bound is
/// `Σ K^{|I₊|} ε^{N_T(I₊)}` over that rest, with `K` the largest `ψ̄` among its objects.
pub fn theorem1_bound_check(
    prior: &TinyGlmb,
    full_birth: &LmbDensity<f64>,
    epsilon: f64,
    z_sets: &[MeasurementSet<f64>],
    sensors: &[SensorModel<f64>],
    motion: &MotionModel<f64>,
    p_survival: f64,
) -> Result<BoundCheck> {
    let kept = epsilon_truncation(full_birth, epsilon);
    let truncated: BTreeSet<BirthLabel> = full_birth
        .components()
        .iter()
        .map(|c| c.label.clone())
        .filter(|l| !kept.contains(l))
        .collect();
    let posterior = tiny_glmb_update(prior, full_birth, z_sets, sensors, motion, p_survival)?;
    if truncated.is_empty() {
        return Ok(BoundCheck {
            l1_distance: 0.0,
            bound: 0.0,
            truncated_labels: 0,
            truncated_hypotheses: 0,
        });
    }

    // ψ̄ of each object in each hypothesis is recomputed from its predicted density.
    let births: HashMap<&BirthLabel, &GaussianDensity<f64>> = full_birth
        .components()
        .iter()
        .filter_map(|c| match &c.spatial {
            SpatialDensity::Gaussian(g) => Some((&c.label, g)),
            SpatialDensity::Particles(_) => None,
        })
        .collect();
    let mut prior_density: HashMap<BirthLabel, GaussianDensity<f64>> = HashMap::new();
    for h in &prior.hypotheses {
        for t in &h.tracks {
            prior_density
                .entry(t.label.clone())
                .or_insert_with(|| kalman_predict(&t.density, motion));
        }
    }
    let base_density = births
        .values()
        .next()
        .map(|g| (*g).clone())
        .expect("truncated labels imply a non-empty birth");
    let mut psi = PsiCache {
        z_sets,
        sensors,
        base: PrecomputeCache::new(&base_density, sensors)?,
        values: HashMap::new(),
    };

    let mut l1 = 0.0;
    let mut k_max: f64 = 0.0;
    let mut family = Vec::new();
    for h in &posterior.hypotheses {
        let n_t = h.labels().filter(|l| truncated.contains(*l)).count();
        if n_t == 0 {
            continue;
        }
        l1 += h.raw_weight;
        for t in &h.tracks {
            let pred = births
                .get(&t.label)
                .map(|g| (*g).clone())
                .or_else(|| prior_density.get(&t.label).cloned())
                .ok_or_else(|| invalid("hypothesis", "object has no predicted density"))?;
            let tuple = t.assoc.clone().expect("posterior tracks carry associations");
            let (v, _) = psi.get(&t.label, &pred, &tuple)?;
            k_max = k_max.max(v);
        }
        family.push((h.tracks.len(), n_t));
    }
    let bound = family
        .iter()
        .map(|&(n, n_t)| k_max.powi(n as i32) * epsilon.powi(n_t as i32))
        .sum();
    Ok(BoundCheck {
        l1_distance: l1,
        bound,
        truncated_labels: truncated.len(),
        truncated_hypotheses: family.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injection_counts() {
        assert_eq!(partial_injections(0, 2).len(), 1);
        assert_eq!(partial_injections(1, 2).len(), 3);
        assert_eq!(partial_injections(2, 2).len(), 7);
        assert_eq!(partial_injections(4, 2).len(), 21);
        for inj in partial_injections(3, 2) {
            let nz: Vec<_> = inj.iter().filter(|&&j| j > 0).collect();
            let set: BTreeSet<_> = nz.iter().collect();
            assert_eq!(nz.len(), set.len());
        }
        assert_eq!(association_maps(2, &[2, 1]).len(), 7 * 3);
    }
}
