//! Association probabilities `r_A` of current measurements with existing tracks, and the
//! unassociation probability `r_U` of a measurement tuple.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::GaussianKernel;
use crate::scalar::{lit, Real};
use crate::sensor::SensorModel;
use crate::types::{LmbDensity, MeasurementTuple, SpatialDensity};

/// Upper clamp on `r_A`, keeping every detected index reachable by the sampler.
pub const MAX_ASSOCIATION: f64 = 1.0 - 1e-9;

/// `r_A(j)` for every sensor `s` and measurement `j ≥ 1`; `r_A(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationTable<T: Real> {
    per_sensor: Vec<Vec<T>>,
}

impl<T: Real> AssociationTable<T> {
    /// Values are clamped to `[0, 1 − 1e-9]`.
    pub fn new(per_sensor: Vec<Vec<T>>) -> Self {
        let hi = lit::<T>(MAX_ASSOCIATION);
        let per_sensor = per_sensor
            .into_iter()
            .map(|v| {
                v.into_iter()
                    .map(|r| {
                        if !(r >= T::zero()) {
                            T::zero()
                        } else if r > hi {
                            hi
                        } else {
                            r
                        }
                    })
                    .collect()
            })
            .collect();
        Self { per_sensor }
    }

    /// No existing tracks: every entry is zero.
    pub fn zeros(counts: &[usize]) -> Self {
        Self {
            per_sensor: counts.iter().map(|&m| vec![T::zero(); m]).collect(),
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.per_sensor.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_sensor.iter().map(Vec::len).collect()
    }

    pub fn sensor(&self, s: usize) -> &[T] {
        &self.per_sensor[s]
    }

    /// `r_A(j⁽ˢ⁾)` with the convention `r_A(0) = 0`.
    pub fn get(&self, s: usize, j: usize) -> T {
        if j == 0 {
            T::zero()
        } else {
            self.per_sensor[s][j - 1]
        }
    }

    pub fn set_sensor(&mut self, s: usize, values: Vec<T>) {
        let clamped = Self::new(vec![values]).per_sensor.pop().unwrap_or_default();
        self.per_sensor[s] = clamped;
    }
}

/// `r_U(J) = ∏ₛ (1 − r_A(j⁽ˢ⁾))`.
pub fn unassociation_prob<T: Real>(tuple: &MeasurementTuple, table: &AssociationTable<T>) -> Result<T> {
    tuple.validate(&table.counts())?;
    Ok(tuple
        .indices()
        .iter()
        .enumerate()
        .fold(T::one(), |acc, (s, &j)| acc * (T::one() - table.get(s, j))))
}

/// Marginal association probabilities of a single-sensor LMB update, from loopy belief
/// propagation over the track/measurement bipartite graph.
#[derive(Debug, Clone)]
pub struct AssociationMarginals<T: Real> {
    /// `[track, j]` for `j ≥ 1`: probability that the track exists and generated `z_j`.
    pub assoc: DMatrix<T>,
    /// Probability that the track exists and is undetected.
    pub missed: Vec<T>,
    /// Posterior existence probability.
    pub existence: Vec<T>,
}

impl<T: Real> AssociationMarginals<T> {
    /// `r_A(j) = min(1, Σ_t P(t generated z_j))`, clamped like [`AssociationTable`].
    pub fn measurement_probs(&self) -> Vec<T> {
        let hi = lit::<T>(MAX_ASSOCIATION);
        (0..self.assoc.ncols())
            .map(|j| {
                let s = self.assoc.column(j).iter().fold(T::zero(), |a, &b| a + b);
                if s > hi {
                    hi
                } else {
                    s
                }
            })
            .collect()
    }
}

const LBP_MAX_ITERS: usize = 200;
const LBP_TOL: f64 = 1e-10;

/// Runs loopy belief propagation on the association graph.
///
/// `existence[i]` is the prior existence `rᵢ`, and `ratio[(i, j)] = p_D qᵢ(z_j) / κ(z_j)`
/// where `qᵢ` is track `i`'s predicted measurement density.
pub fn loopy_bp<T: Real>(existence: &[T], p_d: T, ratio: &DMatrix<T>) -> AssociationMarginals<T> {
    let n = existence.len();
    let m = ratio.ncols();
    let eta: Vec<T> = existence.iter().map(|&r| T::one() - r * p_d).collect();
    let psi = DMatrix::from_fn(n, m, |i, j| existence[i] * ratio[(i, j)]);

    // mu: track → measurement, sigma: measurement → track.
    let mut mu = DMatrix::<T>::zeros(n, m);
    let mut sigma = DMatrix::<T>::from_element(n, m, T::one());
    let tol = lit::<T>(LBP_TOL);
    if n > 0 && m > 0 {
        for _ in 0..LBP_MAX_ITERS {
            for i in 0..n {
                let total = (0..m).fold(eta[i], |acc, j| acc + psi[(i, j)] * sigma[(i, j)]);
                for j in 0..m {
                    let denom = total - psi[(i, j)] * sigma[(i, j)];
                    mu[(i, j)] = if denom > T::zero() {
                        psi[(i, j)] / denom
                    } else {
                        T::zero()
                    };
                }
            }
            let mut delta = T::zero();
            for j in 0..m {
                let total = (0..n).fold(T::one(), |acc, i| acc + mu[(i, j)]);
                for i in 0..n {
                    let v = T::one() / (total - mu[(i, j)]);
                    let d = v - sigma[(i, j)];
                    let d = if d < T::zero() { -d } else { d };
                    if d > delta {
                        delta = d;
                    }
                    sigma[(i, j)] = v;
                }
            }
            if delta < tol {
                break;
            }
        }
    }

    let mut assoc = DMatrix::<T>::zeros(n, m);
    let mut missed = vec![T::zero(); n];
    let mut post = vec![T::zero(); n];
    for i in 0..n {
        let b_sum = (0..m).fold(T::zero(), |acc, j| acc + psi[(i, j)] * sigma[(i, j)]);
        let denom = eta[i] + b_sum;
        if denom <= T::zero() {
            continue;
        }
        for j in 0..m {
            assoc[(i, j)] = psi[(i, j)] * sigma[(i, j)] / denom;
        }
        missed[i] = existence[i] * (T::one() - p_d) / denom;
        let r = missed[i] + b_sum / denom;
        post[i] = if r > T::one() { T::one() } else { r };
    }
    AssociationMarginals {
        assoc,
        missed,
        existence: post,
    }
}

/// `q(z_j)` for every measurement under one component's predicted measurement density.
///
/// Gaussian components use the innovation covariance `HPHᵀ + R` for linear sensors and a
/// symmetric sigma-point set for nonlinear ones; particle sets sum `wₙ g(z_j|xₙ)`.
pub fn measurement_likelihoods<T: Real>(
    spatial: &SpatialDensity<T>,
    z_set: &[DVector<T>],
    sensor: &SensorModel<T>,
) -> Result<Vec<T>> {
    if spatial.dim() != sensor.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "component state",
            expected: sensor.state_dim(),
            got: spatial.dim(),
        });
    }
    match (spatial, &sensor.kind) {
        (SpatialDensity::Gaussian(g), crate::sensor::SensorKind::LinearGaussian { h, r }) => {
            let s = h * &g.cov * h.transpose() + r;
            let kernel = GaussianKernel::new(&crate::linalg::symmetrize(&s), "innovation covariance")?;
            let zhat = h * &g.mean;
            Ok(z_set
                .iter()
                .map(|z| kernel.log_pdf_residual(&(z - &zhat)).exp())
                .collect())
        }
        (SpatialDensity::Gaussian(g), _) => {
            let (weights, points) = sigma_points(&g.mean, &g.cov);
            Ok(z_set
                .iter()
                .map(|z| {
                    weights.iter().zip(&points).fold(T::zero(), |acc, (&w, x)| {
                        acc + w * sensor.log_likelihood(z, x).exp()
                    })
                })
                .collect())
        }
        (SpatialDensity::Particles(p), _) => Ok(z_set
            .iter()
            .map(|z| {
                p.weights
                    .iter()
                    .zip(&p.states)
                    .fold(T::zero(), |acc, (&w, x)| acc + w * sensor.log_likelihood(z, x).exp())
            })
            .collect()),
    }
}

/// Symmetric sigma points `μ ± √(n+1) Lᵢ` plus the mean, all with positive weights.
pub fn sigma_points<T: Real>(mean: &DVector<T>, cov: &DMatrix<T>) -> (Vec<T>, Vec<DVector<T>>) {
    let n = mean.len();
    let scale = lit::<T>(n as f64 + 1.0);
    let l = crate::linalg::psd_sqrt(&(cov * scale));
    let mut weights = vec![T::one() / scale];
    let mut points = vec![mean.clone()];
    let side = T::one() / (lit::<T>(2.0) * scale);
    for c in 0..n {
        let col = l.column(c).into_owned();
        points.push(mean + &col);
        points.push(mean - &col);
        weights.push(side);
        weights.push(side);
    }
    (weights, points)
}

/// Association probabilities of one sensor's measurements with the tracks of `prior`.
pub fn lmb_association_probs<T: Real>(
    prior: &LmbDensity<T>,
    z_set: &[DVector<T>],
    sensor: &SensorModel<T>,
) -> Result<Vec<T>> {
    Ok(lmb_marginals(prior, z_set, sensor)?.measurement_probs())
}

/// The full association marginals behind [`lmb_association_probs`].
pub fn lmb_marginals<T: Real>(
    prior: &LmbDensity<T>,
    z_set: &[DVector<T>],
    sensor: &SensorModel<T>,
) -> Result<AssociationMarginals<T>> {
    let n = prior.len();
    let m = z_set.len();
    let mut ratio = DMatrix::<T>::zeros(n, m);
    let inv_kappa: Vec<T> = z_set
        .iter()
        .map(|z| sensor.detection_prob / sensor.clutter.intensity(z))
        .collect();
    for (i, c) in prior.components().iter().enumerate() {
        let q = measurement_likelihoods(&c.spatial, z_set, sensor)?;
        for j in 0..m {
            ratio[(i, j)] = q[j] * inv_kappa[j];
        }
    }
    let existence: Vec<T> = prior.components().iter().map(|c| c.existence).collect();
    Ok(loopy_bp(&existence, sensor.detection_prob, &ratio))
}
