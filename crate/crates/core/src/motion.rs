//! Discrete white noise acceleration (DWNA) motion model.

use nalgebra::{Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::types::{Covariance4, StateVector};

/// Default pedestrian acceleration variance, (m/s²)².
pub const DEFAULT_SIGMA_AX2: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionModel {
    dt: f64,
    sigma_ax2: f64,
}

impl MotionModel {
    /// `dt = 0` is accepted and yields `F = I`, `Q = 0` (a pure measurement update).
    pub fn new(dt: f64, sigma_ax2: f64) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be finite and >= 0, got {dt}"
            )));
        }
        if !(sigma_ax2.is_finite() && sigma_ax2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "acceleration variance must be finite and >= 0, got {sigma_ax2}"
            )));
        }
        Ok(Self { dt, sigma_ax2 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma_ax2(&self) -> f64 {
        self.sigma_ax2
    }

    pub fn transition_matrix(&self) -> Matrix4<f64> {
        let ft = Matrix2::new(1.0, self.dt, 0.0, 1.0);
        block_diag(&ft)
    }

    pub fn process_noise(&self) -> Matrix4<f64> {
        let dt = self.dt;
        let dt2 = dt * dt;
        let qt =
            Matrix2::new(dt2 * dt2 / 4.0, dt2 * dt / 2.0, dt2 * dt / 2.0, dt2) * self.sigma_ax2;
        block_diag(&qt)
    }

    /// Time update: `(F·x, F·P·Fᵀ + Q)`, covariance symmetrized.
    pub fn predict(&self, state: &StateVector, cov: &Covariance4) -> (StateVector, Covariance4) {
        let f = self.transition_matrix();
        let x = f * state.as_vector();
        let p = f * cov.as_matrix() * f.transpose() + self.process_noise();
        (
            StateVector::from_vector(x),
            Covariance4::from_symmetrized(&p),
        )
    }
}

/// `diag(b, b)` in the `(x, vx, y, vy)` ordering.
fn block_diag(b: &Matrix2<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(b);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(b);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn transition_unit_dt() {
        let f = MotionModel::new(1.0, 0.0).unwrap().transition_matrix();
        #[rustfmt::skip]
        let expected = Matrix4::new(
            1.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn transition_ble_epoch() {
        let f = MotionModel::new(1.0 / 3.0, 0.35)
            .unwrap()
            .transition_matrix();
        assert_eq!(f[(0, 1)], 1.0 / 3.0);
        assert_eq!(f[(2, 3)], 1.0 / 3.0);
        assert_eq!(f[(0, 0)], 1.0);
        assert_eq!(f[(1, 0)], 0.0);
    }

    #[test]
    fn transition_uniform_motion() {
        let m = MotionModel::new(0.5, 0.0).unwrap();
        let x = m.transition_matrix() * StateVector::new(0.0, 1.0, 0.0, 2.0).as_vector();
        assert_eq!(x.as_slice(), &[0.5, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn process_noise_values() {
        let q = MotionModel::new(1.0, 1.0).unwrap().process_noise();
        assert_eq!(
            q.fixed_view::<2, 2>(0, 0).into_owned(),
            Matrix2::new(0.25, 0.5, 0.5, 1.0)
        );
        assert_eq!(
            q.fixed_view::<2, 2>(2, 2).into_owned(),
            Matrix2::new(0.25, 0.5, 0.5, 1.0)
        );
        assert_eq!(q[(0, 2)], 0.0);

        assert_eq!(
            MotionModel::new(3.0, 0.0).unwrap().process_noise(),
            Matrix4::zeros()
        );

        let q = MotionModel::new(2.0, 0.5).unwrap().process_noise();
        assert_eq!(
            q.fixed_view::<2, 2>(0, 0).into_owned(),
            Matrix2::new(2.0, 2.0, 2.0, 2.0)
        );
    }

    #[test]
    fn predict_stationary_noiseless() {
        let m = MotionModel::new(0.7, 0.0).unwrap();
        let s = StateVector::new(1.0, 0.0, 2.0, 0.0);
        let (x, p) = m.predict(&s, &Covariance4::zeros());
        assert_eq!(x, s);
        assert_eq!(p, Covariance4::zeros());
    }

    #[test]
    fn predict_unit_velocity() {
        let m = MotionModel::new(1.0, 0.35).unwrap();
        let (x, _) = m.predict(
            &StateVector::new(0.0, 1.0, 0.0, 0.0),
            &Covariance4::identity(),
        );
        assert_eq!(x.x(), 1.0);
    }

    #[test]
    fn predict_identity_covariance() {
        // F_t·I·F_tᵀ = [[2, 1], [1, 1]]; plus Q_t = [[0.25, 0.5], [0.5, 1]].
        let m = MotionModel::new(1.0, 1.0).unwrap();
        let (_, p) = m.predict(
            &StateVector::new(0.0, 0.0, 0.0, 0.0),
            &Covariance4::identity(),
        );
        let p = p.as_matrix();
        assert!(close(p[(0, 0)], 2.25, 1e-15));
        assert!(close(p[(0, 1)], 1.5, 1e-15));
        assert!(close(p[(1, 0)], 1.5, 1e-15));
        assert!(close(p[(1, 1)], 2.0, 1e-15));
    }

    #[test]
    fn zero_dt_is_identity() {
        let m = MotionModel::new(0.0, 0.35).unwrap();
        assert_eq!(m.transition_matrix(), Matrix4::identity());
        assert_eq!(m.process_noise(), Matrix4::zeros());
    }

    #[test]
    fn rejects_invalid() {
        assert!(MotionModel::new(-1.0, 0.1).is_err());
        assert!(MotionModel::new(1.0, -0.1).is_err());
        assert!(MotionModel::new(f64::NAN, 0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn process_noise_is_psd(dt in 1e-3f64..10.0, s in 0.0f64..5.0) {
                let q = MotionModel::new(dt, s).unwrap().process_noise();
                let qt = q.fixed_view::<2, 2>(0, 0);
                let det = qt[(0, 0)] * qt[(1, 1)] - qt[(0, 1)] * qt[(1, 0)];
                prop_assert!(det.abs() <= 1e-9 * qt[(0, 0)].max(1.0) * qt[(1, 1)].max(1.0));
                prop_assert!(qt.trace() >= 0.0);
                prop_assert!(crate::types::is_psd(&q));
            }

            #[test]
            fn two_half_steps_equal_one_step_in_mean(
                dt in 1e-3f64..5.0,
                x in -10.0f64..10.0, vx in -3.0f64..3.0,
                y in -10.0f64..10.0, vy in -3.0f64..3.0,
            ) {
                let s = StateVector::new(x, vx, y, vy);
                let half = MotionModel::new(dt, 0.35).unwrap();
                let full = MotionModel::new(2.0 * dt, 0.35).unwrap();
                let p = Covariance4::identity();
                let (a, pa) = half.predict(&s, &p);
                let (a, _) = half.predict(&a, &pa);
                let (b, _) = full.predict(&s, &p);
                prop_assert!((a.as_vector() - b.as_vector()).amax() < 1e-9);
            }

            #[test]
            fn predict_preserves_health(dt in 0.0f64..5.0, s in 0.0f64..2.0, d in 0.01f64..10.0) {
                let m = MotionModel::new(dt, s).unwrap();
                let (_, p) = m.predict(&StateVector::new(0.0, 1.0, 0.0, 1.0), &Covariance4::from_diagonal([d, 1.0, d, 1.0]));
                prop_assert!(p.is_healthy());
            }
        }
    }
}
