//! Sensor, clutter and motion models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_psd, check_spd, GaussianKernel};
use crate::scalar::{lit, Real};

/// Measurements of one sensor at one time step, indexed 1-based by measurement tuples.
pub type MeasurementSet<T> = Vec<DVector<T>>;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    let mut x = a % two_pi;
    if x > pi {
        x -= two_pi;
    } else if x <= -pi {
        x += two_pi;
    }
    x
}

/// Poisson clutter with constant intensity `λ / |window|` over an axis-aligned window.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterModel<T: Real> {
    pub rate: T,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
    intensity: T,
}

impl<T: Real> ClutterModel<T> {
    pub fn uniform(rate: T, lo: DVector<T>, hi: DVector<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "clutter window",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(b > a)) {
            return Err(invalid("clutter window", "each upper bound must exceed its lower bound"));
        }
        if !(rate > T::zero()) {
            return Err(invalid("clutter rate", "must be positive"));
        }
        let volume = lo
            .iter()
            .zip(hi.iter())
            .fold(T::one(), |v, (&a, &b)| v * (b - a));
        Ok(Self {
            rate,
            lo,
            hi,
            intensity: rate / volume,
        })
    }

    /// A window-free model with the given constant intensity (rate 1 over volume `1/κ`).
    pub fn constant(intensity: T, dim: usize) -> Result<Self> {
        if !(intensity > T::zero()) {
            return Err(invalid("clutter intensity", "must be positive"));
        }
        let side = (T::one() / intensity).powf(T::one() / lit::<T>(dim as f64));
        Self::uniform(T::one(), DVector::zeros(dim), DVector::from_element(dim, side))
    }

    pub fn volume(&self) -> T {
        self.rate / self.intensity
    }

    /// `κ(z)`. Constant everywhere so that measurements pushed outside the window by noise
    /// keep a finite pseudolikelihood.
    pub fn intensity(&self, _z: &DVector<T>) -> T {
        self.intensity
    }

    pub fn log_intensity(&self, _z: &DVector<T>) -> T {
        self.intensity.ln()
    }

    /// Scales the intensity, keeping the window.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            rate: self.rate * factor,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            intensity: self.intensity * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SensorKind<T: Real> {
    /// `z = Hx + v`, `v ~ N(0, R)`.
    LinearGaussian { h: DMatrix<T>, r: DMatrix<T> },
    /// `z = (α, ρ) + v` with `α = atan2(pₓˢ − pₓ, p_yˢ − p_y)` (bearing from north) and `ρ` the
    /// range. `position_dims` picks `(pₓ, p_y)` out of the state.
    BearingRange {
        position: [T; 2],
        r: DMatrix<T>,
        position_dims: [usize; 2],
    },
}

#[derive(Debug, Clone)]
pub struct SensorModel<T: Real> {
    pub detection_prob: T,
    pub clutter: ClutterModel<T>,
    pub kind: SensorKind<T>,
    kernel: GaussianKernel<T>,
    state_dim: usize,
}

impl<T: Real> SensorModel<T> {
    pub fn new(
        detection_prob: T,
        clutter: ClutterModel<T>,
        kind: SensorKind<T>,
        state_dim: usize,
    ) -> Result<Self> {
        if !(detection_prob >= T::zero() && detection_prob < T::one()) {
            return Err(invalid("detection probability", "must lie in [0, 1)"));
        }
        let r = match &kind {
            SensorKind::LinearGaussian { h, r } => {
                if h.ncols() != state_dim {
                    return Err(Error::DimensionMismatch {
                        what: "measurement matrix columns",
                        expected: state_dim,
                        got: h.ncols(),
                    });
                }
                if r.nrows() != h.nrows() {
                    return Err(Error::DimensionMismatch {
                        what: "measurement noise",
                        expected: h.nrows(),
                        got: r.nrows(),
                    });
                }
                r
            }
            SensorKind::BearingRange {
                r, position_dims, ..
            } => {
                if r.nrows() != 2 || r.ncols() != 2 {
                    return Err(Error::DimensionMismatch {
                        what: "bearing-range noise",
                        expected: 2,
                        got: r.nrows(),
                    });
                }
                if position_dims.iter().any(|&d| d >= state_dim) {
                    return Err(invalid("position_dims", "index exceeds the state dimension"));
                }
                r
            }
        };
        check_spd(r, "measurement noise")?;
        if clutter.lo.len() != r.nrows() {
            return Err(Error::DimensionMismatch {
                what: "clutter window",
                expected: r.nrows(),
                got: clutter.lo.len(),
            });
        }
        let kernel = GaussianKernel::new(r, "measurement noise")?;
        Ok(Self {
            detection_prob,
            clutter,
            kind,
            kernel,
            state_dim,
        })
    }

    /// Linear sensor measuring `(pₓ, p_y)` of a `[pₓ, vₓ, p_y, v_y]` state.
    pub fn linear_position(
        detection_prob: T,
        clutter: ClutterModel<T>,
        noise_var: [f64; 2],
    ) -> Result<Self> {
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = T::one();
        h[(1, 2)] = T::one();
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![
            lit(noise_var[0]),
            lit(noise_var[1]),
        ]));
        Self::new(detection_prob, clutter, SensorKind::LinearGaussian { h, r }, 4)
    }

    /// Bearing-range sensor at `position` for a `[pₓ, vₓ, p_y, v_y]` state.
    pub fn bearing_range(
        detection_prob: T,
        clutter: ClutterModel<T>,
        position: [T; 2],
        noise_std: [f64; 2],
    ) -> Result<Self> {
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![
            lit(noise_std[0] * noise_std[0]),
            lit(noise_std[1] * noise_std[1]),
        ]));
        Self::new(
            detection_prob,
            clutter,
            SensorKind::BearingRange {
                position,
                r,
                position_dims: [0, 2],
            },
            4,
        )
    }

    pub fn meas_dim(&self) -> usize {
        self.noise().nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise(&self) -> &DMatrix<T> {
        match &self.kind {
            SensorKind::LinearGaussian { r, .. } | SensorKind::BearingRange { r, .. } => r,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, SensorKind::LinearGaussian { .. })
    }

    pub fn kernel(&self) -> &GaussianKernel<T> {
        &self.kernel
    }

    /// Noise-free measurement `h(x)`.
    pub fn measure(&self, x: &DVector<T>) -> DVector<T> {
        match &self.kind {
            SensorKind::LinearGaussian { h, .. } => h * x,
            SensorKind::BearingRange {
                position,
                position_dims,
                ..
            } => {
                let dx = position[0] - x[position_dims[0]];
                let dy = position[1] - x[position_dims[1]];
                DVector::from_vec(vec![dx.atan2(dy), (dx * dx + dy * dy).sqrt()])
            }
        }
    }

    /// `z − h(x)`, with the bearing component wrapped.
    pub fn residual(&self, z: &DVector<T>, x: &DVector<T>) -> DVector<T> {
        let mut d = z - self.measure(x);
        if !self.is_linear() {
            d[0] = wrap_angle(d[0]);
        }
        d
    }

    /// `ln g(z | x)`.
    pub fn log_likelihood(&self, z: &DVector<T>, x: &DVector<T>) -> T {
        self.kernel.log_pdf_residual(&self.residual(z, x))
    }

    /// `ln ψ(x; j)`: `ln(1 − p_D)` for `j = 0`, else `ln(p_D g(z_j|x) / κ(z_j))`.
    pub fn log_pseudolikelihood(
        &self,
        x: &DVector<T>,
        j: usize,
        z_set: &[DVector<T>],
    ) -> Result<T> {
        if j > z_set.len() {
            return Err(Error::IndexOutOfRange {
                sensor: 0,
                index: j,
                count: z_set.len(),
            });
        }
        if j == 0 {
            return Ok((T::one() - self.detection_prob).ln());
        }
        let z = &z_set[j - 1];
        Ok(self.detection_prob.ln() + self.log_likelihood(z, x) - self.clutter.log_intensity(z))
    }

    pub fn pseudolikelihood(&self, x: &DVector<T>, j: usize, z_set: &[DVector<T>]) -> Result<T> {
        self.log_pseudolikelihood(x, j, z_set).map(|l| l.exp())
    }

    /// State dimensions determined by one measurement.
    pub fn observable_dims(&self) -> Vec<usize> {
        match &self.kind {
            SensorKind::LinearGaussian { h, .. } => (0..h.ncols())
                .filter(|&c| h.column(c).iter().any(|&v| v != T::zero()))
                .collect(),
            SensorKind::BearingRange { position_dims, .. } => position_dims.to_vec(),
        }
    }

    /// `h⁻¹(z)` on the observable dimensions together with its Jacobian `∂h⁻¹/∂z`.
    pub fn inverse(&self, z: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        match &self.kind {
            SensorKind::LinearGaussian { h, .. } => {
                let obs = self.observable_dims();
                let sub = h.select_columns(&obs);
                if !sub.is_square() {
                    return Err(invalid(
                        "measurement matrix",
                        "observable block must be square to invert",
                    ));
                }
                let inv = sub
                    .try_inverse()
                    .ok_or_else(|| invalid("measurement matrix", "observable block is singular"))?;
                Ok((&inv * z, inv))
            }
            SensorKind::BearingRange { position, .. } => {
                let (a, rho) = (z[0], z[1]);
                let (s, c) = (a.sin(), a.cos());
                let p = DVector::from_vec(vec![position[0] - rho * s, position[1] - rho * c]);
                let jac = DMatrix::from_row_slice(2, 2, &[-rho * c, -s, rho * s, -c]);
                Ok((p, jac))
            }
        }
    }

    /// Proposal covariance `H̃ R H̃ᵀ` for the observable dimensions at `z`.
    pub fn inverse_covariance(&self, z: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        let (x, jac) = self.inverse(z)?;
        let cov = &jac * self.noise() * jac.transpose();
        Ok((x, cov))
    }
}

/// Linear-Gaussian transition `x₊ = F x + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel<T: Real> {
    pub f: DMatrix<T>,
    pub q: DMatrix<T>,
    pub dt: T,
}

impl<T: Real> MotionModel<T> {
    pub fn new(f: DMatrix<T>, q: DMatrix<T>, dt: T) -> Result<Self> {
        if !f.is_square() || f.shape() != q.shape() {
            return Err(Error::DimensionMismatch {
                what: "motion model",
                expected: f.nrows(),
                got: q.nrows(),
            });
        }
        check_psd(&q, "process noise")?;
        Ok(Self { f, q, dt })
    }

    /// Constant velocity in 2D with state `[pₓ, vₓ, p_y, v_y]` and white acceleration noise
    /// of standard deviation `sigma` per axis.
    pub fn constant_velocity(dt: f64, sigma: [f64; 2]) -> Result<Self> {
        let mut f = DMatrix::<T>::identity(4, 4);
        let mut q = DMatrix::<T>::zeros(4, 4);
        for (axis, &s) in sigma.iter().enumerate() {
            let o = 2 * axis;
            f[(o, o + 1)] = lit(dt);
            let v = s * s;
            q[(o, o)] = lit(v * dt.powi(4) / 4.0);
            q[(o, o + 1)] = lit(v * dt.powi(3) / 2.0);
            q[(o + 1, o)] = lit(v * dt.powi(3) / 2.0);
            q[(o + 1, o + 1)] = lit(v * dt * dt);
        }
        Self::new(f, q, lit(dt))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            f: DMatrix::identity(dim, dim),
            q: DMatrix::zeros(dim, dim),
            dt: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }
}

/// Clutter window for a bearing-range sensor: bearings over `(-π, π]`, ranges in `[0, max_range]`.
pub fn bearing_range_window<T: Real>(max_range: f64) -> (DVector<T>, DVector<T>) {
    (
        DVector::from_vec(vec![lit(-PI), T::zero()]),
        DVector::from_vec(vec![lit(PI), lit(max_range)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(pd: f64, kappa: f64, var: f64) -> SensorModel<f64> {
        SensorModel::new(
            pd,
            ClutterModel::constant(kappa, 2).unwrap(),
            SensorKind::LinearGaussian {
                h: DMatrix::identity(2, 2),
                r: DMatrix::identity(2, 2) * var,
            },
            2,
        )
        .unwrap()
    }

    #[test]
    fn missed_branch_is_one_minus_pd() {
        let s = linear(0.95, 1e-8, 100.0);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let v = s.pseudolikelihood(&x, 0, &[]).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn detection_at_mean() {
        let s = linear(0.95, 1e-8, 100.0);
        let x = DVector::from_vec(vec![3.0, -4.0]);
        let v = s.pseudolikelihood(&x, 1, &[x.clone()]).unwrap();
        let expected = 0.95 / (2.0 * PI * 100.0 * 1e-8);
        assert!((v / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_tail_vanishes() {
        let s = linear(0.95, 1e-8, 100.0);
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let z = DVector::from_vec(vec![1e4, 0.0]);
        assert!(s.pseudolikelihood(&x, 1, &[z]).unwrap() < 1e-100);
    }

    #[test]
    fn index_out_of_range() {
        let s = linear(0.9, 1.0, 1.0);
        let x = DVector::zeros(2);
        assert!(matches!(
            s.pseudolikelihood(&x, 2, &[x.clone()]),
            Err(Error::IndexOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn bearing_inverse_round_trips() {
        let clutter = {
            let (lo, hi) = bearing_range_window(5000.0);
            ClutterModel::uniform(15.0, lo, hi).unwrap()
        };
        let s = SensorModel::bearing_range(0.95, clutter, [1000.0, -200.0], [0.25, 10.0]).unwrap();
        for (a, r) in [(0.3f64, 100.0f64), (-2.9, 4000.0), (3.1, 12.0), (-0.01, 999.0)] {
            let z = DVector::from_vec(vec![a, r]);
            let (p, jac) = s.inverse(&z).unwrap();
            let x = DVector::from_vec(vec![p[0], 0.0, p[1], 0.0]);
            let back = s.measure(&x);
            assert!(wrap_angle(back[0] - a).abs() < 1e-9);
            assert!((back[1] - r).abs() < 1e-9);
            let eps = 1e-6;
            for k in 0..2 {
                let mut zp = z.clone();
                zp[k] += eps;
                let (pp, _) = s.inverse(&zp).unwrap();
                let fd: DVector<f64> = (pp - &p) / eps;
                assert!((fd[0] - jac[(0, k)]).abs() < 1e-3 * (1.0 + jac[(0, k)].abs()));
                assert!((fd[1] - jac[(1, k)]).abs() < 1e-3 * (1.0 + jac[(1, k)].abs()));
            }
        }
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0f64, -PI, 0.0, PI, 7.0, 3.0 * PI] {
            let w = wrap_angle(a);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_velocity_structure() {
        let m = MotionModel::<f64>::constant_velocity(1.0, [5.0, 5.0]).unwrap();
        assert_eq!(m.f[(0, 1)], 1.0);
        assert_eq!(m.f[(2, 3)], 1.0);
        assert!((m.q[(0, 0)] - 25.0 / 4.0).abs() < 1e-12);
        assert!((m.q[(1, 1)] - 25.0).abs() < 1e-12);
        assert_eq!(m.q[(0, 2)], 0.0);
    }

    #[test]
    fn linear_inverse_selects_positions() {
        let s = SensorModel::<f64>::linear_position(
            0.9,
            ClutterModel::constant(1e-6, 2).unwrap(),
            [100.0, 100.0],
        )
        .unwrap();
        assert_eq!(s.observable_dims(), vec![0, 2]);
        let (p, cov) = s.inverse_covariance(&DVector::from_vec(vec![5.0, 6.0])).unwrap();
        assert_eq!(p.as_slice(), &[5.0, 6.0]);
        assert!((cov[(0, 0)] - 100.0).abs() < 1e-12);
    }
}
