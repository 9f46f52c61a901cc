//! Monte Carlo importance-sampling backend for nonlinear sensors and partially uniform
//! birth priors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::association::AssociationTable;
use crate::birth::PsiBackend;
use crate::error::{invalid, Error, Result};
use crate::gibbs::ConditionalBackend;
use crate::linalg::{log_det_chol, psd_sqrt, GaussianKernel};
use crate::scalar::{exp_normalized_max, lit, log_sum_exp, to_f64, Real};
use crate::sensor::{MeasurementSet, MotionModel, SensorModel};
use crate::types::{GaussianDensity, MeasurementTuple, ParticleSet, SpatialDensity};

/// Particle counts at or above this evaluate weights on the rayon pool.
const PARALLEL_THRESHOLD: usize = 4096;
/// Effective sample size fraction below which a birth draw is reported as degenerate.
pub const ESS_FLOOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub enum ObservablePrior<T: Real> {
    UniformBox { lo: DVector<T>, hi: DVector<T> },
    Gaussian(GaussianDensity<T>),
}

/// Birth prior factored into observable and unobservable parts.
#[derive(Debug, Clone)]
pub struct BirthPrior<T: Real> {
    pub observable: ObservablePrior<T>,
    pub unobservable: GaussianDensity<T>,
    pub observable_dims: Vec<usize>,
    unobservable_dims: Vec<usize>,
    state_dim: usize,
    observable_kernel: Option<GaussianKernel<T>>,
    log_box_density: T,
    unobservable_sqrt: DMatrix<T>,
}

impl<T: Real> BirthPrior<T> {
    pub fn new(
        observable: ObservablePrior<T>,
        unobservable: GaussianDensity<T>,
        observable_dims: Vec<usize>,
        state_dim: usize,
    ) -> Result<Self> {
        let mut seen = vec![false; state_dim];
        for &d in &observable_dims {
            if d >= state_dim || seen[d] {
                return Err(invalid("observable_dims", "must be distinct state indices"));
            }
            seen[d] = true;
        }
        let unobservable_dims: Vec<usize> = (0..state_dim).filter(|&d| !seen[d]).collect();
        if unobservable.dim() != unobservable_dims.len() {
            return Err(Error::DimensionMismatch {
                what: "unobservable prior",
                expected: unobservable_dims.len(),
                got: unobservable.dim(),
            });
        }
        let d_o = observable_dims.len();
        let (observable_kernel, log_box_density) = match &observable {
            ObservablePrior::UniformBox { lo, hi } => {
                if lo.len() != d_o || hi.len() != d_o {
                    return Err(Error::DimensionMismatch {
                        what: "uniform birth box",
                        expected: d_o,
                        got: lo.len(),
                    });
                }
                if lo.iter().zip(hi.iter()).any(|(a, b)| !(b > a)) {
                    return Err(invalid("uniform birth box", "upper bounds must exceed lower bounds"));
                }
                let vol = lo.iter().zip(hi.iter()).fold(T::one(), |v, (&a, &b)| v * (b - a));
                (None, -vol.ln())
            }
            ObservablePrior::Gaussian(g) => {
                if g.dim() != d_o {
                    return Err(Error::DimensionMismatch {
                        what: "observable prior",
                        expected: d_o,
                        got: g.dim(),
                    });
                }
                (Some(GaussianKernel::new(&g.cov, "observable prior")?), T::zero())
            }
        };
        let unobservable_sqrt = psd_sqrt(&unobservable.cov);
        Ok(Self {
            observable,
            unobservable,
            observable_dims,
            unobservable_dims,
            state_dim,
            observable_kernel,
            log_box_density,
            unobservable_sqrt,
        })
    }

    /// Uniform positions over `[lo, hi]` and Gaussian velocities, for `[pₓ, vₓ, p_y, v_y]`.
    pub fn uniform_position(lo: [f64; 2], hi: [f64; 2], velocity_std: f64) -> Result<Self> {
        let v = velocity_std * velocity_std;
        Self::new(
            ObservablePrior::UniformBox {
                lo: DVector::from_vec(vec![lit(lo[0]), lit(lo[1])]),
                hi: DVector::from_vec(vec![lit(hi[0]), lit(hi[1])]),
            },
            GaussianDensity::diagonal(&[0.0, 0.0], &[v, v])?,
            vec![0, 2],
            4,
        )
    }

    /// Splits a full Gaussian prior into its observable and unobservable marginals. The
    /// two blocks are treated as independent.
    pub fn from_gaussian(prior: &GaussianDensity<T>, observable_dims: Vec<usize>) -> Result<Self> {
        let n = prior.dim();
        let un: Vec<usize> = (0..n).filter(|d| !observable_dims.contains(d)).collect();
        let pick = |dims: &[usize]| {
            GaussianDensity::new(
                DVector::from_iterator(dims.len(), dims.iter().map(|&d| prior.mean[d])),
                DMatrix::from_fn(dims.len(), dims.len(), |a, b| prior.cov[(dims[a], dims[b])]),
            )
        };
        Self::new(
            ObservablePrior::Gaussian(pick(&observable_dims)?),
            pick(&un)?,
            observable_dims,
            n,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `ln p_B^o(x_o)`; `−∞` outside a uniform box.
    pub fn log_observable(&self, x: &DVector<T>) -> T {
        match &self.observable {
            ObservablePrior::UniformBox { lo, hi } => {
                let inside = self
                    .observable_dims
                    .iter()
                    .enumerate()
                    .all(|(k, &d)| x[d] >= lo[k] && x[d] <= hi[k]);
                if inside {
                    self.log_box_density
                } else {
                    lit(f64::NEG_INFINITY)
                }
            }
            ObservablePrior::Gaussian(g) => {
                let d = DVector::from_iterator(
                    self.observable_dims.len(),
                    self.observable_dims.iter().enumerate().map(|(k, &i)| x[i] - g.mean[k]),
                );
                self.observable_kernel
                    .as_ref()
                    .expect("gaussian observable prior has a kernel")
                    .log_pdf_residual(&d)
            }
        }
    }

    fn fill_unobservable(&self, x: &mut DVector<T>, eps: &[f64]) {
        let e = DVector::from_iterator(eps.len(), eps.iter().map(|&v| lit::<T>(v)));
        let u = &self.unobservable.mean + &self.unobservable_sqrt * e;
        for (k, &d) in self.unobservable_dims.iter().enumerate() {
            x[d] = u[k];
        }
    }

    /// Draws a full state from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let mut x = DVector::zeros(self.state_dim);
        match &self.observable {
            ObservablePrior::UniformBox { lo, hi } => {
                for (k, &d) in self.observable_dims.iter().enumerate() {
                    let u: f64 = rng.random();
                    x[d] = lo[k] + (hi[k] - lo[k]) * lit::<T>(u);
                }
            }
            ObservablePrior::Gaussian(g) => {
                let l = psd_sqrt(&g.cov);
                let e = normals(rng, g.dim());
                let e = DVector::from_iterator(e.len(), e.into_iter().map(lit::<T>));
                let o = &g.mean + l * e;
                for (k, &d) in self.observable_dims.iter().enumerate() {
                    x[d] = o[k];
                }
            }
        }
        let eu = normals(rng, self.unobservable_dims.len());
        self.fill_unobservable(&mut x, &eu);
        x
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Importance samples of one tuple together with their unnormalized log weights.
#[derive(Debug, Clone)]
pub struct ProposalDraw<T: Real> {
    pub anchor_sensor: usize,
    pub states: Vec<DVector<T>>,
    pub log_weights: Vec<T>,
}

/// Standard normals shared across candidates of one conditional evaluation.
struct Draws {
    observable: Vec<Vec<f64>>,
    unobservable: Vec<Vec<f64>>,
}

impl Draws {
    fn new<R: Rng + ?Sized>(rng: &mut R, n: usize, d_o: usize, d_u: usize) -> Self {
        let mut observable = Vec::with_capacity(n);
        let mut unobservable = Vec::with_capacity(n);
        for _ in 0..n {
            observable.push(normals(rng, d_o));
            unobservable.push(normals(rng, d_u));
        }
        Self {
            observable,
            unobservable,
        }
    }
}

/// Samples `x_o ~ 𝒩(h⁻¹(z), H̃RH̃ᵀ)` from the anchor measurement and `x_u` from the prior;
/// returns the states with `ln p_B^o(x_o) − ln q^o(x_o)`.
fn anchored_samples<T: Real>(
    sensor: &SensorModel<T>,
    z: &DVector<T>,
    prior: &BirthPrior<T>,
    draws: &Draws,
) -> Result<(Vec<DVector<T>>, Vec<T>)> {
    let (center, cov) = sensor.inverse_covariance(z)?;
    let chol = crate::linalg::cholesky(&crate::linalg::symmetrize(&cov), "proposal covariance")?;
    let l = chol.l();
    let d_o = center.len();
    if d_o != prior.observable_dims.len() {
        return Err(Error::DimensionMismatch {
            what: "proposal dimension",
            expected: prior.observable_dims.len(),
            got: d_o,
        });
    }
    let log_q_norm = -lit::<T>(0.5) * (lit::<T>(d_o as f64) * T::two_pi().ln() + log_det_chol(&chol));
    let mut states = Vec::with_capacity(draws.observable.len());
    let mut log_ratio = Vec::with_capacity(draws.observable.len());
    for (eo, eu) in draws.observable.iter().zip(&draws.unobservable) {
        let e = DVector::from_iterator(d_o, eo.iter().map(|&v| lit::<T>(v)));
        let xo = &center + &l * &e;
        let mut x = DVector::zeros(prior.state_dim);
        for (k, &d) in prior.observable_dims.iter().enumerate() {
            x[d] = xo[k];
        }
        prior.fill_unobservable(&mut x, eu);
        let log_q = log_q_norm - lit::<T>(0.5) * e.norm_squared();
        log_ratio.push(prior.log_observable(&x) - log_q);
        states.push(x);
    }
    Ok((states, log_ratio))
}

/// `Σₛ ln ψ⁽ˢ⁾(x; j⁽ˢ⁾)` over sensors other than `skip`.
fn log_psi_product<T: Real>(
    x: &DVector<T>,
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    skip: Option<usize>,
) -> T {
    let mut acc = T::zero();
    for (s, (&j, sensor)) in tuple.indices().iter().zip(sensors).enumerate() {
        if Some(s) == skip {
            continue;
        }
        acc += if j == 0 {
            (T::one() - sensor.detection_prob).ln()
        } else {
            let z = &z_sets[s][j - 1];
            sensor.detection_prob.ln() + sensor.log_likelihood(z, x) - sensor.clutter.log_intensity(z)
        };
    }
    acc
}

fn map_states<T: Real, F>(states: &[DVector<T>], f: F) -> Vec<T>
where
    F: Fn(&DVector<T>) -> T + Sync + Send,
{
    if states.len() >= PARALLEL_THRESHOLD {
        states.par_iter().map(&f).collect()
    } else {
        states.iter().map(f).collect()
    }
}

fn log_mean_exp<T: Real>(xs: &[T]) -> T {
    log_sum_exp(xs) - lit::<T>(xs.len() as f64).ln()
}

fn check_inputs<T: Real>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
) -> Result<()> {
    if z_sets.len() != sensors.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement sets",
            expected: sensors.len(),
            got: z_sets.len(),
        });
    }
    let counts: Vec<usize> = z_sets.iter().map(Vec::len).collect();
    tuple.validate(&counts)
}

/// Draws `n_particles` importance samples for `tuple`, anchored on one of its detected
/// sensors chosen uniformly.
pub fn draw_proposal<T: Real, R: Rng + ?Sized>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    prior: &BirthPrior<T>,
    n_particles: usize,
    rng: &mut R,
) -> Result<ProposalDraw<T>> {
    check_inputs(tuple, z_sets, sensors)?;
    if n_particles == 0 {
        return Err(invalid("n_particles", "must be at least 1"));
    }
    let detected: Vec<usize> = (0..tuple.n_sensors()).filter(|&s| tuple.get(s) > 0).collect();
    if detected.is_empty() {
        return Err(Error::NoDetections(tuple.to_string()));
    }
    let anchor = detected[rng.random_range(0..detected.len())];
    draw_anchored(tuple, z_sets, sensors, prior, n_particles, anchor, rng)
}

fn draw_anchored<T: Real, R: Rng + ?Sized>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    prior: &BirthPrior<T>,
    n_particles: usize,
    anchor: usize,
    rng: &mut R,
) -> Result<ProposalDraw<T>> {
    let draws = Draws::new(
        rng,
        n_particles,
        prior.observable_dims.len(),
        prior.unobservable_dims.len(),
    );
    let z = &z_sets[anchor][tuple.get(anchor) - 1];
    let (states, log_ratio) = anchored_samples(&sensors[anchor], z, prior, &draws)?;
    let psi = map_states(&states, |x| log_psi_product(x, tuple, z_sets, sensors, None));
    let log_weights = psi.into_iter().zip(log_ratio).map(|(a, b)| a + b).collect();
    Ok(ProposalDraw {
        anchor_sensor: anchor,
        states,
        log_weights,
    })
}

/// `ψ̄ ≈ (1/N) Σ wₙ`.
pub fn psi_bar_mc<T: Real>(draw: &ProposalDraw<T>) -> T {
    log_psi_bar_mc(draw).exp()
}

pub fn log_psi_bar_mc<T: Real>(draw: &ProposalDraw<T>) -> T {
    if draw.log_weights.is_empty() {
        return lit(f64::NEG_INFINITY);
    }
    log_mean_exp(&draw.log_weights)
}

/// Indices selected by systematic resampling with offset `u ∈ [0, 1)`.
pub fn systematic_resample<T: Real>(weights: &[T], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().map(|&w| to_f64(w)).sum();
    let mut out = Vec::with_capacity(n);
    if n == 0 || !(total > 0.0) {
        return out;
    }
    let step = total / n as f64;
    let mut target = u * step;
    let mut cum = 0.0;
    let mut i = 0;
    for (k, &w) in weights.iter().enumerate() {
        cum += to_f64(w);
        while i < n && target < cum {
            out.push(k);
            i += 1;
            target += step;
        }
    }
    while out.len() < n {
        out.push(n - 1);
    }
    out
}

/// Propagates every particle through `x₊ = F x + w`, `w ~ 𝒩(0, Q)`.
pub fn propagate_particles<T: Real, R: Rng + ?Sized>(
    states: &[DVector<T>],
    motion: &MotionModel<T>,
    rng: &mut R,
) -> Vec<DVector<T>> {
    let l = psd_sqrt(&motion.q);
    let n = motion.dim();
    states
        .iter()
        .map(|x| {
            let e = DVector::from_iterator(n, normals(rng, n).into_iter().map(lit::<T>));
            &motion.f * x + &l * e
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct McDiagnostics {
    /// Birth draws whose effective sample size fell below `ESS_FLOOR · N_p`.
    pub low_ess: usize,
    /// Conditionals in which every candidate had zero estimated weight.
    pub degenerate_conditionals: usize,
}

/// Importance-sampling approximation of the spatial birth density, resampled and predicted.
pub fn birth_spatial_mc<T: Real, R: Rng + ?Sized>(
    tuple: &MeasurementTuple,
    z_sets: &[MeasurementSet<T>],
    sensors: &[SensorModel<T>],
    prior: &BirthPrior<T>,
    motion: &MotionModel<T>,
    n_particles: usize,
    rng: &mut R,
    diagnostics: &mut McDiagnostics,
) -> Result<ParticleSet<T>> {
    let states = if tuple.is_all_missed() {
        check_inputs(tuple, z_sets, sensors)?;
        (0..n_particles).map(|_| prior.sample(rng)).collect()
    } else {
        let mut draw = draw_proposal(tuple, z_sets, sensors, prior, n_particles, rng)?;
        let mut w = Vec::new();
        exp_normalized_max(&draw.log_weights, &mut w);
        // A proposal anchored on one measurement can miss the support entirely; try the
        // other detected sensors before giving up.
        let first = draw.anchor_sensor;
        for anchor in (0..tuple.n_sensors()).filter(|&s| s != first && tuple.get(s) > 0) {
            if w.iter().any(|&x| x > T::zero()) {
                break;
            }
            draw = draw_anchored(tuple, z_sets, sensors, prior, n_particles, anchor, rng)?;
            exp_normalized_max(&draw.log_weights, &mut w);
        }
        let set = ParticleSet::new(w, draw.states).map_err(|_| Error::DegenerateWeights)?;
        if to_f64(set.effective_sample_size()) < ESS_FLOOR * n_particles as f64 {
            diagnostics.low_ess += 1;
        }
        let u: f64 = rng.random();
        systematic_resample(&set.weights, u)
            .into_iter()
            .map(|i| set.states[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(ParticleSet::uniform(propagate_particles(&states, motion, rng)))
}

/// Monte Carlo birth backend bound to one scan of measurements.
#[derive(Debug, Clone)]
pub struct MonteCarloBackend<T: Real> {
    prior: BirthPrior<T>,
    sensors: Vec<SensorModel<T>>,
    z_sets: Vec<MeasurementSet<T>>,
    counts: Vec<usize>,
    n_particles: usize,
    rng: ChaCha8Rng,
    pub diagnostics: McDiagnostics,
}

impl<T: Real> MonteCarloBackend<T> {
    pub fn new(
        prior: BirthPrior<T>,
        sensors: &[SensorModel<T>],
        z_sets: &[MeasurementSet<T>],
        n_particles: usize,
        seed: u64,
    ) -> Result<Self> {
        if z_sets.len() != sensors.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement sets",
                expected: sensors.len(),
                got: z_sets.len(),
            });
        }
        if n_particles == 0 {
            return Err(invalid("n_particles", "must be at least 1"));
        }
        if let Some(s) = sensors.iter().find(|s| s.state_dim() != prior.state_dim()) {
            return Err(Error::DimensionMismatch {
                what: "sensor state dimension",
                expected: prior.state_dim(),
                got: s.state_dim(),
            });
        }
        Ok(Self {
            prior,
            sensors: sensors.to_vec(),
            z_sets: z_sets.to_vec(),
            counts: z_sets.iter().map(Vec::len).collect(),
            n_particles,
            rng: ChaCha8Rng::seed_from_u64(seed),
            diagnostics: McDiagnostics::default(),
        })
    }

    pub fn prior(&self) -> &BirthPrior<T> {
        &self.prior
    }

    fn all_missed_log_psi(&self, skip: Option<usize>) -> T {
        self.sensors
            .iter()
            .enumerate()
            .filter(|(s, _)| Some(*s) != skip)
            .fold(T::zero(), |acc, (_, s)| acc + (T::one() - s.detection_prob).ln())
    }

    fn draws(&mut self) -> Draws {
        Draws::new(
            &mut self.rng,
            self.n_particles,
            self.prior.observable_dims.len(),
            self.prior.unobservable_dims.len(),
        )
    }

    /// `ln ψ̄` of every candidate index at sensor `s`, sharing random numbers across candidates.
    pub fn candidate_log_psi_bars(&mut self, s: usize, tuple: &MeasurementTuple) -> Result<Vec<T>> {
        check_inputs(tuple, &self.z_sets, &self.sensors)?;
        let m = self.counts[s];
        let sensor = &self.sensors[s];
        let log_miss = (T::one() - sensor.detection_prob).ln();
        let others: Vec<usize> = (0..tuple.n_sensors())
            .filter(|&o| o != s && tuple.get(o) > 0)
            .collect();
        let mut out = Vec::with_capacity(m + 1);
        if others.is_empty() {
            out.push(self.all_missed_log_psi(None));
            let draws = self.draws();
            let base = self.all_missed_log_psi(Some(s));
            let sensor = &self.sensors[s];
            for j in 1..=m {
                let z = &self.z_sets[s][j - 1];
                let (states, log_ratio) = anchored_samples(sensor, z, &self.prior, &draws)?;
                let lz = sensor.detection_prob.ln() - sensor.clutter.log_intensity(z);
                let lw: Vec<T> = map_states(&states, |x| sensor.log_likelihood(z, x))
                    .into_iter()
                    .zip(log_ratio)
                    .map(|(g, r)| base + lz + g + r)
                    .collect();
                out.push(log_mean_exp(&lw));
            }
            return Ok(out);
        }
        let anchor = others[self.rng.random_range(0..others.len())];
        let draws = self.draws();
        let z_anchor = &self.z_sets[anchor][tuple.get(anchor) - 1];
        let (states, log_ratio) = anchored_samples(&self.sensors[anchor], z_anchor, &self.prior, &draws)?;
        let (z_sets, sensors) = (&self.z_sets, &self.sensors);
        let base: Vec<T> = map_states(&states, |x| log_psi_product(x, tuple, z_sets, sensors, Some(s)))
            .into_iter()
            .zip(log_ratio)
            .map(|(a, b)| a + b)
            .collect();
        out.push(log_mean_exp(&base) + log_miss);
        let sensor = &self.sensors[s];
        let mut lw = vec![T::zero(); base.len()];
        for j in 1..=m {
            let z = &self.z_sets[s][j - 1];
            let lz = sensor.detection_prob.ln() - sensor.clutter.log_intensity(z);
            let g = map_states(&states, |x| sensor.log_likelihood(z, x));
            for ((w, &b), gn) in lw.iter_mut().zip(&base).zip(g) {
                *w = b + lz + gn;
            }
            out.push(log_mean_exp(&lw));
        }
        Ok(out)
    }
}

impl<T: Real> ConditionalBackend<T> for MonteCarloBackend<T> {
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
        let mut log_w = self.candidate_log_psi_bars(s, tuple)?;
        for (j, lw) in log_w.iter_mut().enumerate().skip(1) {
            let keep = T::one() - table.get(s, j);
            *lw = if keep > T::zero() {
                *lw + keep.ln()
            } else {
                lit(f64::NEG_INFINITY)
            };
        }
        exp_normalized_max(&log_w, out);
        if out.iter().all(|w| *w == T::zero()) {
            // No particle supports any candidate: the state itself has zero estimated
            // evidence, so drop this sensor's detection.
            self.diagnostics.degenerate_conditionals += 1;
            out[0] = T::one();
        }
        Ok(())
    }
}

impl<T: Real> PsiBackend<T> for MonteCarloBackend<T> {
    fn log_psi_bar(&mut self, tuple: &MeasurementTuple) -> Result<T> {
        if tuple.is_all_missed() {
            check_inputs(tuple, &self.z_sets, &self.sensors)?;
            return Ok(self.all_missed_log_psi(None));
        }
        let draw = draw_proposal(
            tuple,
            &self.z_sets,
            &self.sensors,
            &self.prior,
            self.n_particles,
            &mut self.rng,
        )?;
        Ok(log_psi_bar_mc(&draw))
    }

    fn birth_spatial(
        &mut self,
        tuple: &MeasurementTuple,
        motion: &MotionModel<T>,
    ) -> Result<SpatialDensity<T>> {
        birth_spatial_mc(
            tuple,
            &self.z_sets,
            &self.sensors,
            &self.prior,
            motion,
            self.n_particles,
            &mut self.rng,
            &mut self.diagnostics,
        )
        .map(SpatialDensity::Particles)
    }
}
