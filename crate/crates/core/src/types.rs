//! Labels, measurement tuples and the two spatial-density representations.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_spd, symmetrize};
use crate::scalar::{abs, lit, Real};

/// One 0-augmented measurement index per sensor. Index 0 is a missed detection; index
/// `j > 0` selects the `j`-th measurement (1-based) of that sensor's scan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeasurementTuple(Vec<usize>);

impl MeasurementTuple {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn all_missed(n_sensors: usize) -> Self {
        Self(vec![0; n_sensors])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn n_sensors(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, sensor: usize) -> usize {
        self.0[sensor]
    }

    pub fn set(&mut self, sensor: usize, index: usize) {
        self.0[sensor] = index;
    }

    pub fn with(&self, sensor: usize, index: usize) -> Self {
        let mut t = self.clone();
        t.0[sensor] = index;
        t
    }

    /// Number of sensors with a non-missed index.
    pub fn non_missed_count(&self) -> usize {
        self.0.iter().filter(|&&j| j > 0).count()
    }

    pub fn is_all_missed(&self) -> bool {
        self.0.iter().all(|&j| j == 0)
    }

    /// Checks the tuple against per-sensor measurement counts.
    pub fn validate(&self, counts: &[usize]) -> Result<()> {
        if self.0.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement tuple",
                expected: counts.len(),
                got: self.0.len(),
            });
        }
        for (sensor, (&j, &m)) in self.0.iter().zip(counts).enumerate() {
            if j > m {
                return Err(Error::IndexOutOfRange {
                    sensor,
                    index: j,
                    count: m,
                });
            }
        }
        Ok(())
    }

    /// Iterates over the whole augmented index space `∏ {0..=mₛ}` in lexicographic order.
    pub fn enumerate(counts: &[usize]) -> TupleSpace {
        TupleSpace {
            counts: counts.to_vec(),
            next: Some(vec![0; counts.len()]),
        }
    }

    /// `∏ (mₛ + 1)`, saturating.
    pub fn space_size(counts: &[usize]) -> u128 {
        counts
            .iter()
            .fold(1u128, |acc, &m| acc.saturating_mul(m as u128 + 1))
    }
}

impl fmt::Display for MeasurementTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, ")")
    }
}

pub struct TupleSpace {
    counts: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for TupleSpace {
    type Item = MeasurementTuple;

    fn next(&mut self) -> Option<MeasurementTuple> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut pos = succ.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            if succ[pos] < self.counts[pos] {
                succ[pos] += 1;
                self.next = Some(succ);
                break;
            }
            succ[pos] = 0;
        }
        Some(MeasurementTuple(cur))
    }
}

/// Counts of non-missed indices; the free-function form of [`MeasurementTuple::non_missed_count`].
pub fn non_missed_count(tuple: &MeasurementTuple) -> usize {
    tuple.non_missed_count()
}

/// Object label: birth time step plus the measurement tuple that generated it.
///
/// Persisting tracks keep the label they were born with. Static (grid) birth components
/// use a one-element tuple holding their grid cell index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BirthLabel {
    pub timestep: u64,
    pub tuple: MeasurementTuple,
}

impl BirthLabel {
    pub fn new(timestep: u64, tuple: MeasurementTuple) -> Self {
        Self { timestep, tuple }
    }
}

impl fmt::Display for BirthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.timestep, self.tuple)
    }
}

pub fn tuple_to_label(tuple: &MeasurementTuple, timestep: u64) -> BirthLabel {
    BirthLabel::new(timestep, tuple.clone())
}

pub fn label_to_tuple(label: &BirthLabel) -> MeasurementTuple {
    label.tuple.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> GaussianDensity<T> {
    /// Validates dimensions and positive definiteness.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "gaussian covariance",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        check_spd(&cov, "gaussian covariance")?;
        Ok(Self { mean, cov })
    }

    /// Skips validation; the covariance is symmetrized.
    pub fn from_parts(mean: DVector<T>, cov: DMatrix<T>) -> Self {
        let cov = symmetrize(&cov);
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_iterator(mean.len(), mean.iter().map(|&x| lit(x))),
            DMatrix::from_diagonal(&DVector::from_iterator(
                variances.len(),
                variances.iter().map(|&x| lit(x)),
            )),
        )
    }
}

/// Weighted particle approximation. States are stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<T: Real> {
    pub weights: Vec<T>,
    pub states: Vec<DVector<T>>,
}

impl<T: Real> ParticleSet<T> {
    pub fn new(weights: Vec<T>, states: Vec<DVector<T>>) -> Result<Self> {
        if weights.len() != states.len() {
            return Err(Error::DimensionMismatch {
                what: "particle weights",
                expected: states.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
            return Err(invalid("particle weight", "weights must be finite and >= 0"));
        }
        let mut set = Self { weights, states };
        set.normalize()?;
        Ok(set)
    }

    pub fn uniform(states: Vec<DVector<T>>) -> Self {
        let n = states.len().max(1);
        let w = T::one() / lit::<T>(n as f64);
        Self {
            weights: vec![w; states.len()],
            states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    /// Rescales weights to sum to one; idempotent.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.weights.iter().fold(T::zero(), |a, &b| a + b);
        if total <= T::zero() || !total.is_finite() {
            return Err(invalid("particle weights", "total weight must be positive"));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    pub fn effective_sample_size(&self) -> T {
        let sq = self.weights.iter().fold(T::zero(), |a, &w| a + w * w);
        if sq > T::zero() {
            T::one() / sq
        } else {
            T::zero()
        }
    }

    pub fn mean(&self) -> DVector<T> {
        let mut m = DVector::zeros(self.dim());
        for (w, x) in self.weights.iter().zip(&self.states) {
            m.axpy(*w, x, T::one());
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<T> {
        let mean = self.mean();
        let n = self.dim();
        let mut c = DMatrix::zeros(n, n);
        for (w, x) in self.weights.iter().zip(&self.states) {
            let d = x - &mean;
            c.ger(*w, &d, &d, T::one());
        }
        c
    }

    pub fn weight_sum(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn is_normalized(&self) -> bool {
        abs(self.weight_sum() - T::one()) <= lit(1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialDensity<T: Real> {
    Gaussian(GaussianDensity<T>),
    Particles(ParticleSet<T>),
}

impl<T: Real> SpatialDensity<T> {
    pub fn mean(&self) -> DVector<T> {
        match self {
            SpatialDensity::Gaussian(g) => g.mean.clone(),
            SpatialDensity::Particles(p) => p.mean(),
        }
    }

    pub fn covariance(&self) -> DMatrix<T> {
        match self {
            SpatialDensity::Gaussian(g) => g.cov.clone(),
            SpatialDensity::Particles(p) => p.covariance(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpatialDensity::Gaussian(g) => g.dim(),
            SpatialDensity::Particles(p) => p.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliComponent<T: Real> {
    pub label: BirthLabel,
    pub existence: T,
    pub spatial: SpatialDensity<T>,
}

impl<T: Real> BernoulliComponent<T> {
    pub fn new(label: BirthLabel, existence: T, spatial: SpatialDensity<T>) -> Result<Self> {
        if !(existence >= T::zero() && existence <= T::one()) {
            return Err(invalid("existence probability", "must lie in [0, 1]"));
        }
        Ok(Self {
            label,
            existence,
            spatial,
        })
    }
}

/// Labeled multi-Bernoulli density; labels are pairwise distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct LmbDensity<T: Real> {
    components: Vec<BernoulliComponent<T>>,
}

impl<T: Real> Default for LmbDensity<T> {
    fn default() -> Self {
        Self {
            components: Vec::new(),
        }
    }
}

impl<T: Real> LmbDensity<T> {
    pub fn new(components: Vec<BernoulliComponent<T>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(components.len());
        for c in &components {
            if !seen.insert(&c.label) {
                return Err(Error::LabelCollision(c.label.to_string()));
            }
        }
        Ok(Self { components })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn components(&self) -> &[BernoulliComponent<T>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [BernoulliComponent<T>] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<BernoulliComponent<T>> {
        self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_existence(&self) -> T {
        self.components
            .iter()
            .fold(T::zero(), |a, c| a + c.existence)
    }

    pub fn contains_label(&self, label: &BirthLabel) -> bool {
        self.components.iter().any(|c| &c.label == label)
    }
}
