//! Monte Carlo trials of the tracker on generated scenarios, with metrics and CSV output.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BirthKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{cardinality_error, ospa, ospa2, TrackLog};
use crate::mc::BirthPrior;
use crate::sim::{Scenario, ScenarioConfig, SensorType};
use crate::tracker::{step_seed, AdaptiveBirth, AdaptivePrior, BirthModel, Tracker};
use crate::types::{BirthLabel, GaussianDensity};

/// Steps a new target needs before the filter can report it: its first scan only builds
/// the birth density for the next step.
pub const BIRTH_LAG: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub trial: usize,
    pub step: usize,
    pub n_true: usize,
    pub n_estimated: usize,
    pub cardinality_error: i64,
    /// Cardinality error against targets that have existed for at least `BIRTH_LAG` steps.
    pub lagged_cardinality_error: i64,
    pub ospa: f64,
    pub ospa2: f64,
    pub birth_components: usize,
    pub tuple_space: f64,
    pub distinct_tuples: usize,
    pub forced_missed: usize,
    pub low_ess: usize,
    pub degenerate_conditionals: usize,
    pub components: usize,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub kind: BirthKind,
    pub steps: Vec<StepRecord>,
    pub estimates: TrackLog<BirthLabel>,
}

impl TrialResult {
    fn mean(&self, f: impl Fn(&StepRecord) -> f64) -> f64 {
        self.steps.iter().map(f).sum::<f64>() / self.steps.len().max(1) as f64
    }

    pub fn mean_ospa2(&self) -> f64 {
        self.mean(|r| r.ospa2)
    }

    pub fn mean_abs_lagged_cardinality_error(&self) -> f64 {
        self.mean(|r| r.lagged_cardinality_error.abs() as f64)
    }

    pub fn mean_birth_components(&self) -> f64 {
        self.mean(|r| r.birth_components as f64)
    }

    pub fn mean_tuple_space(&self) -> f64 {
        self.mean(|r| r.tuple_space)
    }
}

/// Scenario of trial `trial`: the configured scenario with a per-trial seed.
pub fn trial_scenario(cfg: &ScenarioConfig, trial: usize) -> ScenarioConfig {
    ScenarioConfig {
        seed: step_seed(cfg.seed, trial as u64),
        ..cfg.clone()
    }
}

pub fn birth_model(cfg: &ExperimentConfig, kind: BirthKind, seed: u64) -> Result<BirthModel<f64>> {
    let b = &cfg.birth;
    let s = &cfg.scenario;
    Ok(match kind {
        BirthKind::Uniform => BirthModel::Static(b.grid()),
        BirthKind::AdaptiveGaussian => {
            let (p, v) = (b.prior_position_std.powi(2), b.prior_velocity_std.powi(2));
            BirthModel::Adaptive(AdaptiveBirth {
                prior: AdaptivePrior::Gaussian(GaussianDensity::diagonal(&[0.0; 4], &[p, v, p, v])?),
                gibbs: b.gibbs_config(seed),
                birth: b.birth_config(),
            })
        }
        BirthKind::AdaptiveMc => BirthModel::Adaptive(AdaptiveBirth {
            prior: AdaptivePrior::MonteCarlo {
                prior: BirthPrior::uniform_position(
                    [s.region_lo; 2],
                    [s.region_hi; 2],
                    b.mc_velocity_std,
                )?,
                n_particles: b.mc_particles,
            },
            gibbs: b.gibbs_config(seed),
            birth: b.birth_config(),
        }),
    })
}

/// Rejects birth models the configured sensors cannot drive.
pub fn check_compatible(cfg: &ExperimentConfig, kind: BirthKind) -> Result<()> {
    if kind == BirthKind::AdaptiveGaussian && cfg.scenario.sensor_type != SensorType::Linear {
        return Err(Error::Config(format!(
            "scenario.sensor_type: birth model `{kind}` needs linear sensors; use `adaptive-mc`"
        )));
    }
    Ok(())
}

/// Runs one trial; the scenario and every filter seed derive from `(config, trial)`.
pub fn run_trial(cfg: &ExperimentConfig, kind: BirthKind, trial: usize) -> Result<TrialResult> {
    check_compatible(cfg, kind)?;
    let scenario = Scenario::generate(&trial_scenario(&cfg.scenario, trial))?;
    let seed = step_seed(scenario.config.seed, 0x6669_6c74);
    let mut tracker = Tracker::new(
        cfg.tracker.tracker_config(seed),
        scenario.motion.clone(),
        scenario.sensors.clone(),
        birth_model(cfg, kind, seed)?,
    )?;
    let n_steps = scenario.scans.len();
    let mut estimates = TrackLog::new(n_steps);
    let mut steps = Vec::with_capacity(n_steps);
    for (k, scan) in scenario.scans.iter().enumerate() {
        let (est, stats) = tracker.step(k as u64, scan)?;
        let est_positions: Vec<Vec<f64>> = est.iter().map(|e| vec![e.state[0], e.state[2]]).collect();
        for (e, p) in est.iter().zip(&est_positions) {
            estimates.record(e.label.clone(), k, p.clone());
        }
        let truth_positions: Vec<Vec<f64>> = scenario
            .truth
            .alive_at(k)
            .into_iter()
            .map(|(_, x)| vec![x[0], x[2]])
            .collect();
        steps.push(StepRecord {
            trial,
            step: k,
            n_true: truth_positions.len(),
            n_estimated: est.len(),
            cardinality_error: cardinality_error(est.len(), truth_positions.len()),
            lagged_cardinality_error: cardinality_error(
                est.len(),
                scenario.truth.count_established(k, BIRTH_LAG),
            ),
            ospa: ospa(&est_positions, &truth_positions, &cfg.metrics),
            ospa2: 0.0,
            birth_components: stats.birth_components,
            tuple_space: stats.tuple_space,
            distinct_tuples: stats.distinct_tuples,
            forced_missed: stats.forced_missed,
            low_ess: stats.low_ess,
            degenerate_conditionals: stats.degenerate_conditionals,
            components: stats.components,
        });
    }
    let o2 = ospa2(&estimates, &scenario.truth.position_log(), &cfg.metrics);
    for (r, v) in steps.iter_mut().zip(o2) {
        r.ospa2 = v;
    }
    Ok(TrialResult {
        trial,
        kind,
        steps,
        estimates,
    })
}

/// Runs trials `0..n` in parallel on at most `threads` workers (all cores if `None`).
pub fn run_trials(
    cfg: &ExperimentConfig,
    kind: BirthKind,
    n: usize,
    threads: Option<usize>,
) -> Result<Vec<TrialResult>> {
    let run = || (0..n).into_par_iter().map(|t| run_trial(cfg, kind, t)).collect::<Result<Vec<_>>>();
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?
            .install(run),
        None => run(),
    }
}

pub fn write_steps_csv<W: Write>(w: W, results: &[TrialResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in results {
        for s in &r.steps {
            out.serialize(s)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageRecord {
    pub step: usize,
    pub trials: usize,
    pub mean_n_true: f64,
    pub mean_n_estimated: f64,
    pub mean_cardinality_error: f64,
    pub mean_lagged_cardinality_error: f64,
    pub mean_ospa: f64,
    pub mean_ospa2: f64,
    pub mean_birth_components: f64,
    pub mean_tuple_space: f64,
}

pub fn averages(results: &[TrialResult]) -> Vec<AverageRecord> {
    let n_steps = results.iter().map(|r| r.steps.len()).min().unwrap_or(0);
    let n = results.len() as f64;
    (0..n_steps)
        .map(|k| {
            let mean = |f: &dyn Fn(&StepRecord) -> f64| results.iter().map(|r| f(&r.steps[k])).sum::<f64>() / n;
            AverageRecord {
                step: k,
                trials: results.len(),
                mean_n_true: mean(&|s| s.n_true as f64),
                mean_n_estimated: mean(&|s| s.n_estimated as f64),
                mean_cardinality_error: mean(&|s| s.cardinality_error as f64),
                mean_lagged_cardinality_error: mean(&|s| s.lagged_cardinality_error as f64),
                mean_ospa: mean(&|s| s.ospa),
                mean_ospa2: mean(&|s| s.ospa2),
                mean_birth_components: mean(&|s| s.birth_components as f64),
                mean_tuple_space: mean(&|s| s.tuple_space),
            }
        })
        .collect()
}

pub fn write_averages_csv<W: Write>(w: W, results: &[TrialResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for a in averages(results) {
        out.serialize(a)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `steps.csv`, `averages.csv` and `manifest.toml` (resolved config plus run
/// arguments) into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    kind: BirthKind,
    trials: usize,
    results: &[TrialResult],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_steps_csv(std::fs::File::create(dir.join("steps.csv"))?, results)?;
    write_averages_csv(std::fs::File::create(dir.join("averages.csv"))?, results)?;
    let manifest = format!(
        "# Re-run with: msab simulate <this file> --birth {kind} --trials {trials} --seed {}\n\
         # birth = \"{kind}\"\n# trials = {trials}\n{}",
        cfg.scenario.seed,
        cfg.to_toml()
    );
    std::fs::write(dir.join("manifest.toml"), manifest)?;
    Ok(())
}

/// One-sided sign test: probability of at least `wins` successes in `n` fair coin flips.
pub fn sign_test_p_value(wins: usize, n: usize) -> f64 {
    let mut c = 1.0f64;
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            c = c * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            total += c;
        }
    }
    total / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(0, 20) - 1.0).abs() < 1e-12);
        assert!((sign_test_p_value(20, 20) - 2f64.powi(-20)).abs() < 1e-18);
        // P(X ≥ 15) for Binomial(20, 1/2) = 21700 / 2^20.
        assert!((sign_test_p_value(15, 20) - 21_700.0 / 1_048_576.0).abs() < 1e-12);
    }

    #[test]
    fn short_trial_runs_for_each_birth_kind() {
        let mut cfg = ExperimentConfig::desk_linear();
        cfg.scenario.duration_steps = 4;
        cfg.birth.gibbs_iterations = 50;
        for kind in [BirthKind::AdaptiveGaussian, BirthKind::Uniform] {
            let r = run_trial(&cfg, kind, 0).unwrap();
            assert_eq!(r.steps.len(), 4);
            assert!(r.steps.iter().all(|s| s.ospa2 <= cfg.metrics.cutoff + 1e-9));
        }
    }
}
