use std::collections::BTreeSet;

use msab::birth::{build_birth_lmb, BirthConfig, PsiBackend};
use msab::checks::{random_linear_instance, LinearInstance};
use msab::gaussian::{birth_spatial, log_psi_bar, GaussianBackend, PrecomputeCache};
use msab::gibbs::ConditionalBackend;
use msab::mc::{birth_spatial_mc, draw_proposal, psi_bar_mc, BirthPrior, McDiagnostics, MonteCarloBackend};
use msab::{MeasurementTuple, MotionModel};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, counts: &[usize]) -> LinearInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_linear_instance(&mut rng, counts, 0.3).unwrap()
}

fn mc_prior(inst: &LinearInstance) -> BirthPrior<f64> {
    BirthPrior::from_gaussian(&inst.prior, vec![0, 2]).unwrap()
}

/// The `k` tuples with at least two detections and the largest `ψ̄`.
fn plausible_tuples(inst: &LinearInstance, k: usize) -> Vec<MeasurementTuple> {
    let cache = PrecomputeCache::new(&inst.prior, &inst.sensors).unwrap();
    let mut all: Vec<(f64, MeasurementTuple)> = MeasurementTuple::enumerate(&inst.counts())
        .filter(|t| t.non_missed_count() >= 2)
        .map(|t| (log_psi_bar(&t, &inst.z_sets, &inst.sensors, &cache).unwrap(), t))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all.into_iter().take(k).map(|(_, t)| t).collect()
}

#[test]
fn psi_bar_estimate_is_unbiased() {
    let inst = instance(21, &[2, 2, 2]);
    let prior = mc_prior(&inst);
    let cache = PrecomputeCache::new(&inst.prior, &inst.sensors).unwrap();
    for tuple in plausible_tuples(&inst, 3) {
        let exact = log_psi_bar(&tuple, &inst.z_sets, &inst.sensors, &cache).unwrap().exp();
        let runs = 200;
        let mean = (0..runs)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                psi_bar_mc(&draw_proposal(&tuple, &inst.z_sets, &inst.sensors, &prior, 1000, &mut rng).unwrap())
            })
            .sum::<f64>()
            / runs as f64;
        assert!((mean / exact - 1.0).abs() < 0.01, "{tuple}: {mean} vs {exact}");
    }
}

#[test]
fn static_birth_matches_the_closed_form_mean() {
    let inst = instance(22, &[2, 2, 2]);
    let prior = mc_prior(&inst);
    let tuple = plausible_tuples(&inst, 1).remove(0);
    let identity = MotionModel::identity(4);
    let cache = PrecomputeCache::new(&inst.prior, &inst.sensors).unwrap();
    let g = birth_spatial(&tuple, &inst.z_sets, &inst.sensors, &cache, &identity).unwrap();
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut diag = McDiagnostics::default();
    let p = birth_spatial_mc(&tuple, &inst.z_sets, &inst.sensors, &prior, &identity, n, &mut rng, &mut diag).unwrap();
    let mean = p.mean();
    for d in 0..4 {
        let se = (g.cov[(d, d)] / n as f64).sqrt();
        assert!((mean[d] - g.mean[d]).abs() < 3.0 * se + 1e-12, "dim {d}: {} vs {}", mean[d], g.mean[d]);
    }
}

#[test]
fn process_noise_adds_to_the_covariance() {
    let inst = instance(23, &[2, 2]);
    let prior = mc_prior(&inst);
    let tuple = plausible_tuples(&inst, 1).remove(0);
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![50.0, 20.0, 50.0, 20.0]));
    let noisy = MotionModel::new(DMatrix::identity(4, 4), q.clone(), 1.0).unwrap();
    let n = 40_000;
    let cov_with = |motion: &MotionModel<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut diag = McDiagnostics::default();
        birth_spatial_mc(&tuple, &inst.z_sets, &inst.sensors, &prior, motion, n, &mut rng, &mut diag)
            .unwrap()
            .covariance()
    };
    let grown = cov_with(&noisy) - cov_with(&MotionModel::identity(4));
    for d in 0..4 {
        assert!((grown[(d, d)] / q[(d, d)] - 1.0).abs() < 0.1, "dim {d}: {}", grown[(d, d)]);
    }
}

#[test]
fn same_seed_same_conditionals() {
    let inst = instance(24, &[3, 2, 2]);
    let tuple = MeasurementTuple::new(vec![1, 0, 2]);
    let run = |seed: u64| {
        let mut mc = MonteCarloBackend::new(mc_prior(&inst), &inst.sensors, &inst.z_sets, 500, seed).unwrap();
        let mut out = Vec::new();
        let mut w = Vec::new();
        for s in 0..3 {
            mc.conditional_weights(s, &tuple, &inst.table, &mut w).unwrap();
            out.extend_from_slice(&w);
        }
        out
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn birth_existences_agree_across_backends() {
    let inst = instance(25, &[2, 2, 2]);
    let all: BTreeSet<MeasurementTuple> = MeasurementTuple::enumerate(&inst.counts()).collect();
    let cfg = BirthConfig {
        lambda_b: 1.0,
        ..BirthConfig::default()
    };
    let motion = MotionModel::constant_velocity(1.0, [1.0, 1.0]).unwrap();
    let mut gauss = GaussianBackend::new(&inst.prior, &inst.sensors, &inst.z_sets).unwrap();
    let mut mc = MonteCarloBackend::new(mc_prior(&inst), &inst.sensors, &inst.z_sets, 10_000, 3).unwrap();
    let a = build_birth_lmb(&all, &inst.table, &mut gauss, &motion, &cfg, 0).unwrap();
    let b = build_birth_lmb(&all, &inst.table, &mut mc, &motion, &cfg, 0).unwrap();
    assert_eq!(a.len(), b.len());
    let tv: f64 = 0.5
        * a.components()
            .iter()
            .zip(b.components())
            .map(|(x, y)| {
                assert_eq!(x.label, y.label);
                (x.existence - y.existence).abs()
            })
            .sum::<f64>();
    assert!(tv < 0.03, "tv {tv}");
    let tuple = plausible_tuples(&inst, 1).remove(0);
    let lg = gauss.log_psi_bar(&tuple).unwrap();
    let lm = mc.log_psi_bar(&tuple).unwrap();
    assert!((lg - lm).abs() < 0.05, "{lg} vs {lm}");
}
