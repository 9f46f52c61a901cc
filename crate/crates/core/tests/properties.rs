use std::collections::BTreeSet;

use msab::association::{loopy_bp, unassociation_prob, AssociationTable};
use msab::birth::{build_birth_lmb, BirthConfig};
use msab::checks::random_linear_instance;
use msab::gaussian::{log_psi_bar, GaussianBackend, PrecomputeCache};
use msab::gibbs::{sample_birth_tuples, GibbsConfig};
use msab::metrics::{ospa, OspaConfig};
use msab::sim::generate_measurements;
use msab::{ClutterModel, MeasurementTuple, MotionModel, SensorModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn point_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 2), 0..6)
}

fn ospa_cfg(cutoff: f64, order: f64) -> OspaConfig {
    OspaConfig {
        cutoff,
        order,
        ..OspaConfig::default()
    }
}

fn counts_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 2..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ospa_is_a_bounded_symmetric_metric(
        x in point_set(), y in point_set(), w in point_set(),
        cutoff in 1.0..100.0f64, order in 1.0..3.0f64,
    ) {
        let cfg = ospa_cfg(cutoff, order);
        let (xy, yx) = (ospa(&x, &y, &cfg), ospa(&y, &x, &cfg));
        prop_assert!((xy - yx).abs() <= 1e-9 * cutoff);
        prop_assert!((0.0..=cutoff + 1e-12).contains(&xy));
        prop_assert!(ospa(&x, &x, &cfg) <= 1e-12);
        let (xw, wy) = (ospa(&x, &w, &cfg), ospa(&w, &y, &cfg));
        prop_assert!(xy <= xw + wy + 1e-9 * cutoff, "{xy} > {xw} + {wy}");
    }

    #[test]
    fn unassociation_factorizes_over_sensors(
        table in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 1..4), 1..5),
        picks in prop::collection::vec(0usize..4, 5),
    ) {
        let t = AssociationTable::new(table.clone());
        let tuple = MeasurementTuple::new(table.iter().zip(&picks).map(|(r, &p)| p % (r.len() + 1)).collect());
        let mut expected = 1.0;
        for (s, row) in table.iter().enumerate() {
            let j = tuple.get(s);
            if j > 0 {
                expected *= 1.0 - row[j - 1].min(1.0 - 1e-9);
            }
        }
        let got = unassociation_prob(&tuple, &t).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12);
        prop_assert!(got > 0.0 && got <= 1.0);
    }

    #[test]
    fn lbp_marginals_are_probabilities(
        existence in prop::collection::vec(0.0..1.0f64, 1..5),
        m in 1usize..5,
        p_d in 0.1..0.99f64,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ratio = DMatrix::from_fn(existence.len(), m, |_, _| rng.random_range(0.0..50.0));
        let lbp = loopy_bp(&existence, p_d, &ratio);
        for i in 0..existence.len() {
            let row = lbp.missed[i] + lbp.assoc.row(i).sum();
            prop_assert!((row - lbp.existence[i]).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&lbp.existence[i]));
            prop_assert!(lbp.assoc.row(i).iter().all(|&p| p >= 0.0));
        }
        for j in 0..m {
            prop_assert!(lbp.assoc.column(j).sum() <= 1.0 + 1e-9);
        }
        prop_assert!(lbp.measurement_probs().iter().all(|&r| r < 1.0));
    }

    #[test]
    fn more_clutter_never_raises_psi_bar(seed in any::<u64>(), counts in counts_strategy(), scale in 1.0..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_linear_instance(&mut rng, &counts, 0.3).unwrap();
        let louder: Vec<SensorModel<f64>> = inst.sensors.iter().map(|s| {
            let mut louder = s.clone();
            louder.clutter = s.clutter.scaled(scale);
            louder
        }).collect();
        let (a, b) = (
            PrecomputeCache::new(&inst.prior, &inst.sensors).unwrap(),
            PrecomputeCache::new(&inst.prior, &louder).unwrap(),
        );
        for t in MeasurementTuple::enumerate(&counts) {
            let la = log_psi_bar(&t, &inst.z_sets, &inst.sensors, &a).unwrap();
            let lb = log_psi_bar(&t, &inst.z_sets, &louder, &b).unwrap();
            let expected = -(t.non_missed_count() as f64) * scale.ln();
            prop_assert!((lb - la - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn total_birth_existence_is_capped(
        seed in any::<u64>(), counts in counts_strategy(),
        lambda in 0.01..5.0f64, r_max in 0.01..1.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_linear_instance(&mut rng, &counts, 0.3).unwrap();
        let mut backend = GaussianBackend::new(&inst.prior, &inst.sensors, &inst.z_sets).unwrap();
        let all: BTreeSet<MeasurementTuple> = MeasurementTuple::enumerate(&counts).collect();
        let cfg = BirthConfig { lambda_b: lambda, r_b_max: r_max, min_detections: 1 };
        let lmb = build_birth_lmb(&all, &inst.table, &mut backend, &MotionModel::identity(4), &cfg, 3).unwrap();
        let total: f64 = lmb.components().iter().map(|c| c.existence).sum();
        prop_assert!(total <= lambda.min(lmb.len() as f64 * r_max) + 1e-9);
        prop_assert!(lmb.components().iter().all(|c| c.label.timestep == 4 && c.label.tuple.non_missed_count() >= 1));
    }

    #[test]
    fn sampler_is_a_function_of_its_seed(seed in any::<u64>(), counts in counts_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_linear_instance(&mut rng, &counts, 0.3).unwrap();
        let cfg = GibbsConfig { iterations: 50, seed, ..GibbsConfig::default() };
        let run = || {
            let mut backend = GaussianBackend::new(&inst.prior, &inst.sensors, &inst.z_sets).unwrap();
            sample_birth_tuples(&inst.table, &mut backend, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.trace == b.trace);
        prop_assert_eq!(a.tuples, b.tuples);
    }
}

#[test]
fn scan_size_has_the_expected_mean() {
    let lo = DVector::from_vec(vec![0.0, 0.0]);
    let hi = DVector::from_vec(vec![100.0, 100.0]);
    let (pd, rate, n_obj) = (0.8, 6.0, 5);
    let sensor = SensorModel::linear_position(pd, ClutterModel::uniform(rate, lo, hi).unwrap(), [1.0, 1.0]).unwrap();
    let states: Vec<DVector<f64>> = (0..n_obj)
        .map(|i| DVector::from_vec(vec![10.0 * i as f64, 0.0, 50.0, 0.0]))
        .collect();
    let refs: Vec<&DVector<f64>> = states.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scans = 5000;
    let total: usize = (0..scans)
        .map(|_| generate_measurements(&refs, std::slice::from_ref(&sensor), rate, &mut rng).unwrap()[0].len())
        .sum();
    // |Z| = Binomial(n, p_D) + Poisson(λ).
    let mean = n_obj as f64 * pd + rate;
    let var = n_obj as f64 * pd * (1.0 - pd) + rate;
    let got = total as f64 / scans as f64;
    assert!((got - mean).abs() < 3.0 * (var / scans as f64).sqrt(), "{got} vs {mean}");
}

#[test]
fn ospa_of_a_missing_point_is_the_cutoff_share() {
    let cfg = ospa_cfg(10.0, 1.0);
    let x = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
    let y = vec![vec![0.0, 3.0]];
    // Best match costs 3; the unmatched point costs the cutoff.
    assert!((ospa(&x, &y, &cfg) - (3.0 + 10.0) / 2.0).abs() < 1e-12);
    assert_eq!(ospa(&[], &[], &cfg), 0.0);
    assert_eq!(ospa(&x, &[], &cfg), 10.0);
}
