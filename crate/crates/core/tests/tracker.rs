use msab::birth::BirthConfig;
use msab::gibbs::GibbsConfig;
use msab::sim::generate_measurements;
use msab::tracker::{AdaptiveBirth, AdaptivePrior, BirthModel, Tracker, TrackerConfig};
use msab::{ClutterModel, GaussianDensity, MotionModel, SensorModel, SpatialDensity};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sensors(n: usize, pd: f64) -> Vec<SensorModel<f64>> {
    let clutter = ClutterModel::uniform(
        2.0,
        DVector::from_vec(vec![-100.0, -100.0]),
        DVector::from_vec(vec![100.0, 100.0]),
    )
    .unwrap();
    (0..n)
        .map(|_| SensorModel::linear_position(pd, clutter.clone(), [1.0, 1.0]).unwrap())
        .collect()
}

fn adaptive_tracker(n_sensors: usize, seed: u64) -> Tracker<f64> {
    let motion = MotionModel::constant_velocity(1.0, [0.5, 0.5]).unwrap();
    let birth = BirthModel::Adaptive(AdaptiveBirth {
        prior: AdaptivePrior::Gaussian(GaussianDensity::diagonal(&[0.0; 4], &[2500.0, 4.0, 2500.0, 4.0]).unwrap()),
        gibbs: GibbsConfig {
            iterations: 100,
            seed,
            ..GibbsConfig::default()
        },
        birth: BirthConfig::default(),
    });
    let cfg = TrackerConfig {
        seed,
        ..TrackerConfig::default()
    };
    Tracker::new(cfg, motion, sensors(n_sensors, 0.9), birth).unwrap()
}

#[test]
fn existence_stays_a_probability() {
    let mut cycles = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tracker = adaptive_tracker(3, seed);
        let sens = sensors(3, 0.9);
        let mut targets: Vec<DVector<f64>> = Vec::new();
        for k in 0..100u64 {
            if targets.len() < 4 && rng.random::<f64>() < 0.2 {
                targets.push(DVector::from_vec(vec![
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-1.0..1.0),
                ]));
            }
            targets.retain(|_| rng.random::<f64>() < 0.98);
            for x in &mut targets {
                x[0] += x[1];
                x[2] += x[3];
            }
            let refs: Vec<&DVector<f64>> = targets.iter().collect();
            let z = generate_measurements(&refs, &sens, 2.0, &mut rng).unwrap();
            tracker.step(k, &z).unwrap();
            for c in tracker.density().components().iter().chain(tracker.pending_birth().components()) {
                assert!((0.0..=1.0).contains(&c.existence), "existence {}", c.existence);
                let SpatialDensity::Gaussian(g) = &c.spatial else { panic!("linear tracker") };
                assert!(g.mean.iter().all(|v| v.is_finite()));
            }
            cycles += 1;
        }
    }
    assert_eq!(cycles, 1000);
}

#[test]
fn position_error_shrinks_while_tracking_one_target() {
    let sens = sensors(4, 0.95);
    let steps = 12;
    let trials = 20;
    let mut err = vec![0.0; steps];
    let mut hits = vec![0usize; steps];
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut tracker = adaptive_tracker(4, seed);
        let mut x = DVector::from_vec(vec![10.0, 1.0, -5.0, 0.5]);
        for k in 0..steps {
            let z = generate_measurements(&[&x], &sens, 0.0, &mut rng).unwrap();
            let (est, _) = tracker.step(k as u64, &z).unwrap();
            if let Some(e) = est.iter().min_by(|a, b| {
                let d = |s: &DVector<f64>| (s[0] - x[0]).hypot(s[2] - x[2]);
                d(&a.state).total_cmp(&d(&b.state))
            }) {
                err[k] += (e.state[0] - x[0]).powi(2) + (e.state[2] - x[2]).powi(2);
                hits[k] += 1;
            }
            x[0] += x[1];
            x[2] += x[3];
        }
    }
    let rmse: Vec<f64> = err.iter().zip(&hits).map(|(e, &h)| (e / h.max(1) as f64).sqrt()).collect();
    assert!(hits[steps - 1] == trials as usize, "{hits:?}");
    // The birth step has only the scan it was born from; later steps fuse several.
    let first = (1..steps).find(|&k| hits[k] > 0).unwrap();
    let late: f64 = rmse[steps - 4..].iter().sum::<f64>() / 4.0;
    assert!(late < rmse[first], "{rmse:?}");
}
