//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use msab::{ClutterModel, GaussianDensity, MeasurementSet, MeasurementTuple, SensorKind, SensorModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Linear-position instance with a correlated 4D prior and full 2×2 noise covariances.
pub struct GaussianInstance {
    pub prior: GaussianDensity<f64>,
    pub sensors: Vec<SensorModel<f64>>,
    pub z_sets: Vec<MeasurementSet<f64>>,
}

fn random_spd2<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> [[f64; 2]; 2] {
    let (a, b) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
    let rho = rng.random_range(-0.6..0.6);
    let c = rho * (a * b).sqrt();
    [[a, c], [c, b]]
}

pub fn random_gaussian_instance<R: Rng + ?Sized>(rng: &mut R, counts: &[usize]) -> GaussianInstance {
    let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
    let mut cov = &a * a.transpose() + DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 2.0, 20.0, 2.0]));
    cov = (&cov + cov.transpose()) * 0.5;
    let mean = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
    let prior = GaussianDensity::new(mean, cov).unwrap();
    let mut sensors = Vec::new();
    let mut z_sets = Vec::new();
    for &m in counts {
        let r = random_spd2(rng, 0.5, 4.0);
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = 1.0;
        h[(1, 2)] = 1.0;
        let kappa = rng.random_range(1e-3..1e-1);
        sensors.push(
            SensorModel::new(
                rng.random_range(0.5..0.95),
                ClutterModel::constant(kappa, 2).unwrap(),
                SensorKind::LinearGaussian {
                    h,
                    r: DMatrix::from_row_slice(2, 2, &[r[0][0], r[0][1], r[1][0], r[1][1]]),
                },
                4,
            )
            .unwrap(),
        );
        z_sets.push(
            (0..m)
                .map(|_| DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]))
                .collect(),
        );
    }
    GaussianInstance {
        prior,
        sensors,
        z_sets,
    }
}

pub fn random_tuple<R: Rng + ?Sized>(rng: &mut R, counts: &[usize]) -> MeasurementTuple {
    MeasurementTuple::new(counts.iter().map(|&m| rng.random_range(0..=m)).collect())
}

/// Bivariate normal density written out by hand.
fn normal2(x: [f64; 2], mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
    let q = (cov[1][1] * dx * dx - 2.0 * cov[0][1] * dx * dy + cov[0][0] * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

fn noise2(sensor: &SensorModel<f64>) -> [[f64; 2]; 2] {
    let r = sensor.noise();
    [[r[(0, 0)], r[(0, 1)]], [r[(1, 0)], r[(1, 1)]]]
}

/// `∫ p_B(x) ∏ₛ ψ⁽ˢ⁾(x; j⁽ˢ⁾) dx` by the trapezoid rule on a dense position grid. The
/// velocities are unobserved, so only the position marginal of the prior enters.
pub fn quadrature_psi_bar(inst: &GaussianInstance, tuple: &MeasurementTuple, n: usize) -> f64 {
    let p = &inst.prior;
    let pm = [p.mean[0], p.mean[2]];
    let pc = [[p.cov[(0, 0)], p.cov[(0, 2)]], [p.cov[(2, 0)], p.cov[(2, 2)]]];
    let mut miss = 1.0;
    let mut detected = Vec::new();
    for (s, sensor) in inst.sensors.iter().enumerate() {
        let j = tuple.get(s);
        if j == 0 {
            miss *= 1.0 - sensor.detection_prob;
        } else {
            let z = &inst.z_sets[s][j - 1];
            let kappa = sensor.clutter.intensity(z);
            detected.push(([z[0], z[1]], noise2(sensor), sensor.detection_prob / kappa));
        }
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut spread: f64 = 0.0;
    for (z, r, _) in &detected {
        for a in 0..2 {
            lo[a] = lo[a].min(z[a]);
            hi[a] = hi[a].max(z[a]);
            spread = spread.max(r[a][a].sqrt());
        }
    }
    if detected.is_empty() {
        for a in 0..2 {
            lo[a] = pm[a];
            hi[a] = pm[a];
            spread = spread.max(pc[a][a].sqrt());
        }
    }
    for a in 0..2 {
        lo[a] -= 12.0 * spread;
        hi[a] += 12.0 * spread;
    }
    let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let mut total = 0.0;
    for i in 0..=n {
        let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
        let x = lo[0] + h[0] * i as f64;
        for k in 0..=n {
            let wy = if k == 0 || k == n { 0.5 } else { 1.0 };
            let y = lo[1] + h[1] * k as f64;
            let mut f = normal2([x, y], pm, pc);
            for (z, r, c) in &detected {
                f *= c * normal2(*z, [x, y], *r);
            }
            total += wx * wy * f;
        }
    }
    miss * total * h[0] * h[1]
}

/// Generalized least squares over the prior and every detected measurement, solved as one
/// whitened stacked system through the SVD.
pub fn stacked_wls(inst: &GaussianInstance, tuple: &MeasurementTuple) -> DVector<f64> {
    let n = inst.prior.mean.len();
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    let l0 = inst.prior.cov.clone().cholesky().unwrap().l();
    let w0 = l0.try_inverse().unwrap();
    rows.push((w0.clone(), &w0 * &inst.prior.mean));
    for (s, sensor) in inst.sensors.iter().enumerate() {
        let j = tuple.get(s);
        if j == 0 {
            continue;
        }
        let SensorKind::LinearGaussian { h, r } = &sensor.kind else {
            panic!("linear sensors only");
        };
        let w = r.clone().cholesky().unwrap().l().try_inverse().unwrap();
        rows.push((&w * h, &w * &inst.z_sets[s][j - 1]));
    }
    let total: usize = rows.iter().map(|(a, _)| a.nrows()).sum();
    let mut a = DMatrix::zeros(total, n);
    let mut y = DVector::zeros(total);
    let mut at = 0;
    for (ai, yi) in rows {
        let k = ai.nrows();
        a.view_mut((at, 0), (k, n)).copy_from(&ai);
        y.rows_mut(at, k).copy_from(&yi);
        at += k;
    }
    a.svd(true, true).solve(&y, 1e-14).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
