//! Cardinality error, OSPA and OSPA(2).

use std::collections::BTreeMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OspaConfig {
    pub cutoff: f64,
    pub order: f64,
    /// OSPA(2) window length in steps.
    pub window: usize,
    /// Exponent of the window weights; 0 gives uniform weights.
    pub window_power: f64,
}

impl Default for OspaConfig {
    fn default() -> Self {
        Self {
            cutoff: 200.0,
            order: 1.0,
            window: 5,
            window_power: 0.0,
        }
    }
}

impl OspaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) {
            return Err(invalid("cutoff", "must be positive"));
        }
        if !(self.order >= 1.0) {
            return Err(invalid("order", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(invalid("window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Estimated minus true cardinality.
pub fn cardinality_error(n_estimated: usize, n_true: usize) -> i64 {
    n_estimated as i64 - n_true as i64
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// OSPA between two sets given the pairwise base distances `d[i][j]` (not yet cut off).
pub fn ospa_from_distances(d: &[Vec<f64>], n_x: usize, n_y: usize, cutoff: f64, order: f64) -> f64 {
    let n = n_x.max(n_y);
    if n == 0 {
        return 0.0;
    }
    let small = n_x.min(n_y);
    let cost: Vec<Vec<f64>> = (0..small)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = if n_x <= n_y { d[i][j] } else { d[j][i] };
                    v.min(cutoff).powf(order)
                })
                .collect()
        })
        .collect();
    let (_, total) = if small == 0 { (Vec::new(), 0.0) } else { hungarian(&cost) };
    let penalty = cutoff.powf(order) * (n - small) as f64;
    ((total + penalty) / n as f64).powf(1.0 / order)
}

/// OSPA distance between point sets.
pub fn ospa(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &OspaConfig) -> f64 {
    let d: Vec<Vec<f64>> = x.iter().map(|a| y.iter().map(|b| euclid(a, b)).collect()).collect();
    ospa_from_distances(&d, x.len(), y.len(), cfg.cutoff, cfg.order)
}

/// Positions of labeled trajectories over time: `tracks[id][k]` is the position at step `k`.
#[derive(Debug, Clone, Default)]
pub struct TrackLog<K: Ord> {
    pub tracks: BTreeMap<K, Vec<Option<Vec<f64>>>>,
    pub steps: usize,
}

impl<K: Ord + Clone + Hash> TrackLog<K> {
    pub fn new(steps: usize) -> Self {
        Self {
            tracks: BTreeMap::new(),
            steps,
        }
    }

    pub fn record(&mut self, id: K, step: usize, position: Vec<f64>) {
        let steps = self.steps;
        let track = self.tracks.entry(id).or_insert_with(|| vec![None; steps]);
        track[step] = Some(position);
    }

    pub fn count_at(&self, step: usize) -> usize {
        self.tracks.values().filter(|t| t[step].is_some()).count()
    }

    pub fn at(&self, step: usize) -> Vec<Vec<f64>> {
        self.tracks.values().filter_map(|t| t[step].clone()).collect()
    }
}

/// Window distance between two trajectories: the weighted mean, over steps where either
/// exists, of `min(c, ‖x − y‖)` when both exist and `c` otherwise. `None` if neither exists.
fn track_distance(
    a: &[Option<Vec<f64>>],
    b: &[Option<Vec<f64>>],
    steps: &[usize],
    weights: &[f64],
    cutoff: f64,
    order: f64,
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&k, &w) in steps.iter().zip(weights) {
        let d = match (&a[k], &b[k]) {
            (Some(x), Some(y)) => euclid(x, y).min(cutoff),
            (None, None) => continue,
            _ => cutoff,
        };
        num += w * d.powf(order);
        den += w;
    }
    (den > 0.0).then(|| (num / den).powf(1.0 / order))
}

/// OSPA(2) per step over sliding windows ending at each step.
pub fn ospa2<K1: Ord + Clone + Hash, K2: Ord + Clone + Hash>(
    estimates: &TrackLog<K1>,
    truth: &TrackLog<K2>,
    cfg: &OspaConfig,
) -> Vec<f64> {
    let steps = estimates.steps.min(truth.steps);
    (0..steps)
        .map(|k| {
            let start = (k + 1).saturating_sub(cfg.window);
            let window: Vec<usize> = (start..=k).collect();
            let weights: Vec<f64> = window
                .iter()
                .map(|&t| ((t - start + 1) as f64).powf(cfg.window_power))
                .collect();
            let active = |t: &Vec<Option<Vec<f64>>>| window.iter().any(|&s| t[s].is_some());
            let xs: Vec<&Vec<Option<Vec<f64>>>> = estimates.tracks.values().filter(|t| active(t)).collect();
            let ys: Vec<&Vec<Option<Vec<f64>>>> = truth.tracks.values().filter(|t| active(t)).collect();
            let d: Vec<Vec<f64>> = xs
                .iter()
                .map(|a| {
                    ys.iter()
                        .map(|b| {
                            track_distance(a, b, &window, &weights, cfg.cutoff, cfg.order)
                                .unwrap_or(cfg.cutoff)
                        })
                        .collect()
                })
                .collect();
            ospa_from_distances(&d, xs.len(), ys.len(), cfg.cutoff, cfg.order)
        })
        .collect()
}
