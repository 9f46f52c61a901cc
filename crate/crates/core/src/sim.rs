//! Scenario generation: ground-truth trajectories, sensor layouts and measurement scans.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::psd_sqrt;
use crate::metrics::TrackLog;
use crate::sensor::{bearing_range_window, wrap_angle, ClutterModel, MeasurementSet, MotionModel, SensorModel};
use crate::tracker::step_seed;
use crate::types::MeasurementTuple;

pub const MIN_MODEL_CLUTTER_RATE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorType {
    /// Position sensor `z = [pₓ, p_y] + v`.
    Linear,
    BearingRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BirthSchedule {
    /// Every `interval` steps, `0..=max_births` targets appear uniformly in the region with
    /// fixed speed and uniform heading.
    Random {
        interval: usize,
        max_births: usize,
        speed: f64,
    },
    /// `initial` targets at step 0, then `wave_size` more every `wave_interval` steps while
    /// fewer than `max_targets` are alive. Every target starts from its own fixed location.
    Fixed {
        initial: usize,
        wave_size: usize,
        wave_interval: usize,
        max_targets: usize,
        speed: f64,
        lifetime: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sensor_type: SensorType,
    pub n_sensors: usize,
    pub duration_steps: usize,
    pub dt: f64,
    pub clutter_rate: f64,
    pub detection_prob: f64,
    /// Square surveillance region `[region_lo, region_hi]²`.
    pub region_lo: f64,
    pub region_hi: f64,
    /// Acceleration noise standard deviation per axis.
    pub process_noise: [f64; 2],
    /// Measurement noise standard deviations (`[σₓ, σ_y]` or `[σ_α, σ_r]`).
    pub measurement_noise: [f64; 2],
    /// Per-step survival of randomly scheduled targets.
    pub p_survival: f64,
    pub birth_schedule: BirthSchedule,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Linear position sensors at desk scale.
    pub fn desk_linear() -> Self {
        Self {
            sensor_type: SensorType::Linear,
            n_sensors: 3,
            duration_steps: 40,
            dt: 1.0,
            clutter_rate: 5.0,
            detection_prob: 0.95,
            region_lo: 0.0,
            region_hi: 10_000.0,
            process_noise: [5.0, 5.0],
            measurement_noise: [10.0, 10.0],
            p_survival: 0.99,
            birth_schedule: BirthSchedule::Fixed {
                initial: 12,
                wave_size: 2,
                wave_interval: 2,
                max_targets: 22,
                speed: 10.0,
                lifetime: None,
            },
            seed: 0,
        }
    }

    pub fn full_linear() -> Self {
        Self {
            n_sensors: 8,
            duration_steps: 100,
            clutter_rate: 15.0,
            birth_schedule: BirthSchedule::Fixed {
                initial: 12,
                wave_size: 2,
                wave_interval: 2,
                max_targets: 22,
                speed: 10.0,
                lifetime: Some(60),
            },
            ..Self::desk_linear()
        }
    }

    /// Bearing-range sensors on a circle around the region at desk scale.
    pub fn desk_bearing() -> Self {
        Self {
            sensor_type: SensorType::BearingRange,
            measurement_noise: [0.25, 10.0],
            birth_schedule: BirthSchedule::Random {
                interval: 5,
                max_births: 3,
                speed: 50.0,
            },
            ..Self::desk_linear()
        }
    }

    pub fn full_bearing() -> Self {
        Self {
            n_sensors: 8,
            duration_steps: 100,
            clutter_rate: 15.0,
            ..Self::desk_bearing()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            return Err(invalid("scenario.n_sensors", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("scenario.dt", "must be positive"));
        }
        if !(self.clutter_rate >= 0.0) {
            return Err(invalid("scenario.clutter_rate", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.detection_prob) {
            return Err(invalid("scenario.detection_prob", "must be in [0, 1)"));
        }
        if !(self.region_hi > self.region_lo) {
            return Err(invalid("scenario.region_hi", "must exceed region_lo"));
        }
        if self.process_noise.iter().any(|&s| !(s >= 0.0)) {
            return Err(invalid("scenario.process_noise", "must be non-negative"));
        }
        if self.measurement_noise.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("scenario.measurement_noise", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_survival) {
            return Err(invalid("scenario.p_survival", "must be in [0, 1]"));
        }
        match &self.birth_schedule {
            BirthSchedule::Random { interval, speed, .. } => {
                if *interval == 0 {
                    return Err(invalid("scenario.birth_schedule.interval", "must be at least 1"));
                }
                if !(*speed >= 0.0) {
                    return Err(invalid("scenario.birth_schedule.speed", "must be non-negative"));
                }
            }
            BirthSchedule::Fixed {
                wave_interval, speed, ..
            } => {
                if *wave_interval == 0 {
                    return Err(invalid("scenario.birth_schedule.wave_interval", "must be at least 1"));
                }
                if !(*speed >= 0.0) {
                    return Err(invalid("scenario.birth_schedule.speed", "must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 2] {
        let c = 0.5 * (self.region_lo + self.region_hi);
        [c, c]
    }

    /// Radius of the circle carrying bearing-range sensors; encloses the region.
    pub fn sensor_circle_radius(&self) -> f64 {
        0.75 * (self.region_hi - self.region_lo) * 2f64.sqrt()
    }

    pub fn sensor_positions(&self) -> Vec<[f64; 2]> {
        let c = self.center();
        let r = self.sensor_circle_radius();
        (0..self.n_sensors)
            .map(|s| {
                let a = 2.0 * PI * s as f64 / self.n_sensors as f64;
                [c[0] + r * a.cos(), c[1] + r * a.sin()]
            })
            .collect()
    }

    /// Sensor models with uniform clutter over each sensor's observation window.
    pub fn sensors(&self) -> Result<Vec<SensorModel<f64>>> {
        self.validate()?;
        match self.sensor_type {
            SensorType::Linear => {
                let lo = DVector::from_element(2, self.region_lo);
                let hi = DVector::from_element(2, self.region_hi);
                let var = self.measurement_noise.map(|s| s * s);
                (0..self.n_sensors)
                    .map(|_| {
                        let clutter = ClutterModel::uniform(self.model_clutter_rate(), lo.clone(), hi.clone())?;
                        SensorModel::linear_position(self.detection_prob, clutter, var)
                    })
                    .collect()
            }
            SensorType::BearingRange => {
                let max_range = self.sensor_circle_radius() + (self.region_hi - self.region_lo) * 2f64.sqrt();
                self.sensor_positions()
                    .into_iter()
                    .map(|p| {
                        let (lo, hi) = bearing_range_window(max_range);
                        let clutter = ClutterModel::uniform(self.model_clutter_rate(), lo, hi)?;
                        SensorModel::bearing_range(self.detection_prob, clutter, p, self.measurement_noise)
                    })
                    .collect()
            }
        }
    }

    /// Clutter rate assumed by the filter; floored so the clutter intensity stays positive.
    pub fn model_clutter_rate(&self) -> f64 {
        self.clutter_rate.max(MIN_MODEL_CLUTTER_RATE)
    }

    pub fn motion(&self) -> Result<MotionModel<f64>> {
        MotionModel::constant_velocity(self.dt, self.process_noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    pub id: usize,
    pub birth_step: usize,
    /// State `[pₓ, vₓ, p_y, v_y]` at each step from `birth_step` on.
    pub states: Vec<DVector<f64>>,
}

impl TruthTrack {
    /// First step at which the track no longer exists.
    pub fn death_step(&self) -> usize {
        self.birth_step + self.states.len()
    }

    pub fn state_at(&self, k: usize) -> Option<&DVector<f64>> {
        k.checked_sub(self.birth_step).and_then(|i| self.states.get(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthLog {
    pub steps: usize,
    pub tracks: Vec<TruthTrack>,
}

impl TruthLog {
    pub fn alive_at(&self, k: usize) -> Vec<(usize, &DVector<f64>)> {
        self.tracks
            .iter()
            .filter_map(|t| t.state_at(k).map(|x| (t.id, x)))
            .collect()
    }

    pub fn count_at(&self, k: usize) -> usize {
        self.tracks.iter().filter(|t| t.state_at(k).is_some()).count()
    }

    pub fn max_simultaneous(&self) -> usize {
        (0..self.steps).map(|k| self.count_at(k)).max().unwrap_or(0)
    }

    /// Tracks that have existed for at least `lag + 1` steps at `k`.
    pub fn count_established(&self, k: usize, lag: usize) -> usize {
        self.tracks
            .iter()
            .filter(|t| t.state_at(k).is_some() && k >= t.birth_step + lag)
            .count()
    }

    pub fn position_log(&self) -> TrackLog<usize> {
        let mut log = TrackLog::new(self.steps);
        for t in &self.tracks {
            for (i, x) in t.states.iter().enumerate() {
                log.record(t.id, t.birth_step + i, vec![x[0], x[2]]);
            }
        }
        log
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "id", "px", "vx", "py", "vy"])?;
        for k in 0..self.steps {
            for (id, x) in self.alive_at(k) {
                out.write_record([
                    k.to_string(),
                    id.to_string(),
                    x[0].to_string(),
                    x[1].to_string(),
                    x[2].to_string(),
                    x[3].to_string(),
                ])
                ?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Radical inverse in `base`, for well-spread fixed birth locations.
fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Fixed start state of the `i`-th scheduled target.
fn fixed_start(cfg: &ScenarioConfig, i: usize, speed: f64) -> DVector<f64> {
    let span = cfg.region_hi - cfg.region_lo;
    let margin = 0.1 * span;
    let px = cfg.region_lo + margin + (span - 2.0 * margin) * halton(i + 1, 2);
    let py = cfg.region_lo + margin + (span - 2.0 * margin) * halton(i + 1, 3);
    let heading = 2.0 * PI * halton(i + 1, 5) - PI;
    DVector::from_vec(vec![px, speed * heading.cos(), py, speed * heading.sin()])
}

fn propagate<R: Rng + ?Sized>(x: &DVector<f64>, cfg: &ScenarioConfig, rng: &mut R) -> DVector<f64> {
    let dt = cfg.dt;
    let mut y = x.clone();
    for axis in 0..2 {
        let a: f64 = cfg.process_noise[axis] * rng.sample::<f64, _>(StandardNormal);
        let (p, v) = (2 * axis, 2 * axis + 1);
        y[p] = x[p] + dt * x[v] + 0.5 * dt * dt * a;
        y[v] = x[v] + dt * a;
    }
    y
}

fn in_region(x: &DVector<f64>, cfg: &ScenarioConfig) -> bool {
    let r = cfg.region_lo..=cfg.region_hi;
    r.contains(&x[0]) && r.contains(&x[2])
}

pub fn generate_truth(cfg: &ScenarioConfig) -> Result<TruthLog> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, 0x7275_7468));
    let mut tracks: Vec<TruthTrack> = Vec::new();
    let mut alive: Vec<usize> = Vec::new();
    let mut scheduled = 0usize;
    for k in 0..cfg.duration_steps {
        if k > 0 {
            let mut next = Vec::with_capacity(alive.len());
            for &i in &alive {
                let t = &mut tracks[i];
                let x = propagate(t.states.last().expect("alive track has a state"), cfg, &mut rng);
                let keep = match &cfg.birth_schedule {
                    BirthSchedule::Random { .. } => {
                        in_region(&x, cfg) && rng.random::<f64>() < cfg.p_survival
                    }
                    BirthSchedule::Fixed { lifetime, .. } => lifetime.is_none_or(|l| t.states.len() < l),
                };
                if keep {
                    t.states.push(x);
                    next.push(i);
                }
            }
            alive = next;
        }
        let starts: Vec<DVector<f64>> = match &cfg.birth_schedule {
            BirthSchedule::Random {
                interval,
                max_births,
                speed,
            } => {
                if k % interval != 0 {
                    Vec::new()
                } else {
                    let n = rng.random_range(0..=*max_births);
                    (0..n)
                        .map(|_| {
                            let px = rng.random_range(cfg.region_lo..cfg.region_hi);
                            let py = rng.random_range(cfg.region_lo..cfg.region_hi);
                            let h = rng.random_range(-PI..PI);
                            DVector::from_vec(vec![px, speed * h.cos(), py, speed * h.sin()])
                        })
                        .collect()
                }
            }
            BirthSchedule::Fixed {
                initial,
                wave_size,
                wave_interval,
                max_targets,
                speed,
                ..
            } => {
                let wanted = if k == 0 {
                    *initial
                } else if k % wave_interval == 0 {
                    *wave_size
                } else {
                    0
                };
                let n = wanted.min(max_targets.saturating_sub(alive.len()));
                let starts = (0..n).map(|i| fixed_start(cfg, scheduled + i, *speed)).collect();
                scheduled += n;
                starts
            }
        };
        for x in starts {
            alive.push(tracks.len());
            tracks.push(TruthTrack {
                id: tracks.len(),
                birth_step: k,
                states: vec![x],
            });
        }
    }
    Ok(TruthLog {
        steps: cfg.duration_steps,
        tracks,
    })
}

/// One scan per sensor: detections with probability `p_D`, `Poisson(clutter_rate)` clutter
/// uniform over each sensor's observation window, in random order.
pub fn generate_measurements<R: Rng + ?Sized>(
    states: &[&DVector<f64>],
    sensors: &[SensorModel<f64>],
    clutter_rate: f64,
    rng: &mut R,
) -> Result<Vec<MeasurementSet<f64>>> {
    Ok(generate_labeled_measurements(states, sensors, clutter_rate, rng)?
        .into_iter()
        .map(|scan| scan.into_iter().map(|(z, _)| z).collect())
        .collect())
}

/// As [`generate_measurements`], also returning which entry of `states` produced each
/// measurement (`None` for clutter).
pub fn generate_labeled_measurements<R: Rng + ?Sized>(
    states: &[&DVector<f64>],
    sensors: &[SensorModel<f64>],
    clutter_rate: f64,
    rng: &mut R,
) -> Result<Vec<Vec<(DVector<f64>, Option<usize>)>>> {
    sensors
        .iter()
        .map(|sensor| {
            let sqrt_r: DMatrix<f64> = psd_sqrt(sensor.noise());
            let mut scan = Vec::new();
            for (i, x) in states.iter().enumerate() {
                if rng.random::<f64>() >= sensor.detection_prob {
                    continue;
                }
                let e = DVector::from_fn(sensor.meas_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut z = sensor.measure(x) + &sqrt_r * e;
                if !sensor.is_linear() {
                    z[0] = wrap_angle(z[0]);
                }
                scan.push((z, Some(i)));
            }
            let clutter = &sensor.clutter;
            if clutter_rate > 0.0 {
                let n = Poisson::new(clutter_rate)
                    .map_err(|e| invalid("clutter_rate", e.to_string()))?
                    .sample(rng) as usize;
                for _ in 0..n {
                    let z = DVector::from_fn(clutter.lo.len(), |i, _| {
                        rng.random_range(clutter.lo[i]..clutter.hi[i])
                    });
                    scan.push((z, None));
                }
            }
            scan.shuffle(rng);
            Ok(scan)
        })
        .collect()
}

/// A generated scenario: truth, sensors and one scan per step.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub truth: TruthLog,
    pub sensors: Vec<SensorModel<f64>>,
    pub motion: MotionModel<f64>,
    pub scans: Vec<Vec<MeasurementSet<f64>>>,
    /// `origins[k][s][j]`: truth track id behind measurement `j + 1` of sensor `s` at step `k`.
    pub origins: Vec<Vec<Vec<Option<usize>>>>,
}

impl Scenario {
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        let truth = generate_truth(cfg)?;
        let sensors = cfg.sensors()?;
        let motion = cfg.motion()?;
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, 0x6d65_6173));
        let mut scans = Vec::with_capacity(cfg.duration_steps);
        let mut origins = Vec::with_capacity(cfg.duration_steps);
        for k in 0..cfg.duration_steps {
            let alive = truth.alive_at(k);
            let states: Vec<&DVector<f64>> = alive.iter().map(|&(_, x)| x).collect();
            let labeled = generate_labeled_measurements(&states, &sensors, cfg.clutter_rate, &mut rng)?;
            scans.push(labeled.iter().map(|scan| scan.iter().map(|(z, _)| z.clone()).collect()).collect());
            origins.push(
                labeled
                    .iter()
                    .map(|scan| scan.iter().map(|(_, o)| o.map(|i| alive[i].0)).collect())
                    .collect(),
            );
        }
        Ok(Self {
            config: cfg.clone(),
            truth,
            sensors,
            motion,
            scans,
            origins,
        })
    }

    /// Tuple formed by the detections of track `id` at step `k`.
    pub fn detection_tuple(&self, k: usize, id: usize) -> MeasurementTuple {
        MeasurementTuple::new(
            self.origins[k]
                .iter()
                .map(|scan| scan.iter().position(|&o| o == Some(id)).map_or(0, |j| j + 1))
                .collect(),
        )
    }

    /// Mean over steps of the untruncated tuple space size `∏ₛ (mₛ + 1)`.
    pub fn mean_tuple_space(&self) -> f64 {
        let total: f64 = self
            .scans
            .iter()
            .map(|scan| scan.iter().map(|z| z.len() as f64 + 1.0).product::<f64>())
            .sum();
        total / self.scans.len().max(1) as f64
    }

    pub fn write_measurements_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "sensor", "index", "z0", "z1"])?;
        for (k, scan) in self.scans.iter().enumerate() {
            for (s, z_set) in scan.iter().enumerate() {
                for (j, z) in z_set.iter().enumerate() {
                    out.write_record([
                        k.to_string(),
                        s.to_string(),
                        (j + 1).to_string(),
                        z[0].to_string(),
                        z[1].to_string(),
                    ])
                    ?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.truth.write_csv(std::fs::File::create(dir.join("truth.csv"))?)?;
        self.write_measurements_csv(std::fs::File::create(dir.join("measurements.csv"))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_lines_without_noise() {
        let cfg = ScenarioConfig {
            process_noise: [0.0, 0.0],
            ..ScenarioConfig::desk_linear()
        };
        let truth = generate_truth(&cfg).unwrap();
        for t in &truth.tracks {
            let x0 = &t.states[0];
            for (i, x) in t.states.iter().enumerate() {
                assert!((x[0] - (x0[0] + i as f64 * x0[1])).abs() < 1e-9);
                assert!((x[2] - (x0[2] + i as f64 * x0[3])).abs() < 1e-9);
                assert_eq!(x[1], x0[1]);
            }
        }
    }

    #[test]
    fn fixed_schedule_caps_simultaneous_targets() {
        let truth = generate_truth(&ScenarioConfig::full_linear()).unwrap();
        assert_eq!(truth.max_simultaneous(), 22);
        let starts: Vec<(u64, u64)> = truth
            .tracks
            .iter()
            .map(|t| (t.states[0][0].to_bits(), t.states[0][2].to_bits()))
            .collect();
        let mut dedup = starts.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), starts.len());
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let cfg = ScenarioConfig {
            seed: 11,
            ..ScenarioConfig::desk_bearing()
        };
        let a = Scenario::generate(&cfg).unwrap();
        let b = Scenario::generate(&cfg).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.scans, b.scans);
    }

    #[test]
    fn origins_identify_detections() {
        let cfg = ScenarioConfig {
            clutter_rate: 0.0,
            ..ScenarioConfig::desk_linear()
        };
        let sc = Scenario::generate(&cfg).unwrap();
        for (id, x) in sc.truth.alive_at(3) {
            let t = sc.detection_tuple(3, id);
            for (s, &j) in t.indices().iter().enumerate() {
                if j > 0 {
                    let z = &sc.scans[3][s][j - 1];
                    assert!((z[0] - x[0]).abs() < 60.0 && (z[1] - x[2]).abs() < 60.0);
                }
            }
        }
    }

    #[test]
    fn no_detections_and_no_clutter_gives_empty_scans() {
        let cfg = ScenarioConfig {
            detection_prob: 0.0,
            clutter_rate: 0.0,
            ..ScenarioConfig::desk_linear()
        };
        let sc = Scenario::generate(&cfg).unwrap();
        assert!(sc.scans.iter().flatten().all(|z| z.is_empty()));
    }

    #[test]
    fn mean_clutter_count_matches_rate() {
        let cfg = ScenarioConfig {
            clutter_rate: 15.0,
            n_sensors: 1,
            ..ScenarioConfig::desk_linear()
        };
        let sensors = cfg.sensors().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let total: usize = (0..n)
            .map(|_| generate_measurements(&[], &sensors, 15.0, &mut rng).unwrap()[0].len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 15.0).abs() < 0.5, "mean clutter {mean}");
    }

    #[test]
    fn bearing_measurements_round_trip_within_noise() {
        let cfg = ScenarioConfig {
            clutter_rate: 0.0,
            detection_prob: 0.999,
            ..ScenarioConfig::desk_bearing()
        };
        let sensors = cfg.sensors().unwrap();
        let x = DVector::from_vec(vec![4000.0, 10.0, 6000.0, -5.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            for (s, z_set) in generate_measurements(&[&x], &sensors, 0.0, &mut rng).unwrap().iter().enumerate() {
                for z in z_set {
                    let d = sensors[s].residual(z, &x);
                    assert!(d[0].abs() < 3.0 * 0.25 * 1.5 && d[1].abs() < 3.0 * 10.0 * 1.5);
                }
            }
        }
    }
}
