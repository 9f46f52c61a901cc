//! Gibbs sampler over measurement tuples.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::association::AssociationTable;
use crate::error::{invalid, Error, Result};
use crate::scalar::{to_f64, Real};
use crate::types::MeasurementTuple;

/// Source of the per-sensor conditional `p(j⁽ˢ⁾ | J⁻ˢ)` up to a constant.
pub trait ConditionalBackend<T: Real> {
    /// Number of measurements per sensor.
    fn counts(&self) -> &[usize];

    /// Writes `m⁽ˢ⁾ + 1` non-negative weights, proportional to
    /// `(1 − r_A(j)) ψ̄` of the tuple with coordinate `s` set to `j`, into `out`.
    fn conditional_weights(
        &mut self,
        s: usize,
        tuple: &MeasurementTuple,
        table: &AssociationTable<T>,
        out: &mut Vec<T>,
    ) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub iterations: usize,
    /// Reset to the all-missed tuple after every `restart_period` sweeps.
    pub restart_period: Option<usize>,
    pub seed: u64,
    /// Indices with `r_A > tau` are excluded from the candidate set.
    pub tau: f64,
    pub min_detections: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            restart_period: Some(100),
            seed: 0,
            tau: 0.01,
            min_detections: 2,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if self.restart_period == Some(0) {
            return Err(invalid("restart_period", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid("tau", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct GibbsOutput {
    /// Distinct visited tuples passing the `min_detections` filter.
    pub tuples: BTreeSet<MeasurementTuple>,
    /// Chain state after every sweep, in order.
    pub trace: Vec<MeasurementTuple>,
    /// Times a sensor had no positive weight and was forced to a missed detection.
    pub forced_missed: usize,
}

/// Replaces coordinate `s` of `tuple` with a categorical draw from `weights`.
pub fn chain_step<T: Real, R: Rng + ?Sized>(
    tuple: &MeasurementTuple,
    s: usize,
    weights: &[T],
    rng: &mut R,
) -> Result<MeasurementTuple> {
    let j = draw_categorical(weights, rng).ok_or(Error::DegenerateWeights)?;
    Ok(tuple.with(s, j))
}

fn draw_categorical<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().map(|&w| to_f64(w)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (j, &w) in weights.iter().enumerate() {
        let w = to_f64(w);
        if w > 0.0 {
            acc += w;
            last = Some(j);
            if u < acc {
                return Some(j);
            }
        }
    }
    last
}

/// Runs the chain and returns the visited tuples.
pub fn sample_birth_tuples<T: Real, B: ConditionalBackend<T> + ?Sized>(
    table: &AssociationTable<T>,
    backend: &mut B,
    cfg: &GibbsConfig,
) -> Result<GibbsOutput> {
    cfg.validate()?;
    let counts = backend.counts().to_vec();
    if table.counts() != counts {
        return Err(Error::DimensionMismatch {
            what: "association table",
            expected: counts.len(),
            got: table.n_sensors(),
        });
    }
    let n_sensors = counts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_sensors).collect();
    let mut state = MeasurementTuple::all_missed(n_sensors);
    let mut weights = Vec::new();
    let mut out = GibbsOutput {
        trace: Vec::with_capacity(cfg.iterations),
        ..GibbsOutput::default()
    };
    let tau = cfg.tau;

    for it in 0..cfg.iterations {
        order.shuffle(&mut rng);
        for &s in &order {
            backend.conditional_weights(s, &state, table, &mut weights)?;
            if weights.len() != counts[s] + 1 {
                return Err(Error::DimensionMismatch {
                    what: "conditional weights",
                    expected: counts[s] + 1,
                    got: weights.len(),
                });
            }
            for (j, w) in weights.iter_mut().enumerate().skip(1) {
                if to_f64(table.get(s, j)) > tau {
                    *w = T::zero();
                }
            }
            let j = match draw_categorical(&weights, &mut rng) {
                Some(j) => j,
                None => {
                    out.forced_missed += 1;
                    0
                }
            };
            state.set(s, j);
        }
        if state.non_missed_count() >= cfg.min_detections {
            out.tuples.insert(state.clone());
        }
        out.trace.push(state.clone());
        if let Some(p) = cfg.restart_period {
            if (it + 1) % p == 0 {
                state = MeasurementTuple::all_missed(n_sensors);
            }
        }
    }
    Ok(out)
}
