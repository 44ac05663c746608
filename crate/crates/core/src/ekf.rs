//! Extended Kalman filter measurement update.

use nalgebra::{DMatrix, Matrix4};

use crate::error::Result;
use crate::innovation::{Equilibrated, InnovationReport};
use crate::sensors::{FrameModel, MeasurementFrame, MeasurementModel, PathLossParams};
use crate::types::{AnchorLayout, Covariance4, StateVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CovarianceForm {
    /// `(I − K·H)·P`
    Standard,
    /// `(I − K·H)·P·(I − K·H)ᵀ + K·R·Kᵀ`
    #[default]
    Joseph,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EkfConfig {
    pub covariance_form: CovarianceForm,
}

/// Result of an accepted measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub state: StateVector,
    pub cov: Covariance4,
    pub report: InnovationReport,
}

/// EKF update against an arbitrary measurement model.
///
/// Returns [`crate::Error::SingularInnovation`] when the innovation covariance
/// is numerically singular; the caller keeps the prediction in that case.
pub fn update<M: MeasurementModel + ?Sized>(
    pred_state: &StateVector,
    pred_cov: &Covariance4,
    model: &M,
    cfg: &EkfConfig,
) -> Result<Posterior> {
    let p = DMatrix::from_column_slice(4, 4, pred_cov.as_matrix().as_slice());
    let h = model.jacobian(pred_state)?;
    let r = model.noise_covariance();
    let innovation = model.observation() - model.predict(pred_state)?;

    let s = &h * &p * h.transpose() + &r;
    let eq = Equilibrated::new(&s)?;
    eq.check_condition()?;
    let k = eq.gain(&(&p * h.transpose()))?;

    let x = pred_state.as_vector() + to4(&(&k * &innovation));
    let i_kh = DMatrix::<f64>::identity(4, 4) - &k * &h;
    let post = match cfg.covariance_form {
        CovarianceForm::Standard => &i_kh * &p,
        CovarianceForm::Joseph => &i_kh * &p * i_kh.transpose() + &k * &r * k.transpose(),
    };

    Ok(Posterior {
        state: StateVector::from_vector(x),
        cov: Covariance4::from_symmetrized(&to4x4(&post)),
        report: InnovationReport {
            innovation,
            log_det: eq.log_det(),
            covariance: s,
            psd_repaired: false,
            sqrt_repaired: false,
        },
    })
}

/// EKF update for one measurement frame.
pub fn ekf_update(
    pred_state: &StateVector,
    pred_cov: &Covariance4,
    frame: &MeasurementFrame,
    layout: &AnchorLayout,
    params: &PathLossParams,
    cfg: &EkfConfig,
) -> Result<Posterior> {
    let model = FrameModel::new(frame, layout, params)?;
    update(pred_state, pred_cov, &model, cfg)
}

pub(crate) fn to4(v: &nalgebra::DVector<f64>) -> nalgebra::Vector4<f64> {
    nalgebra::Vector4::from_column_slice(v.as_slice())
}

pub(crate) fn to4x4(m: &DMatrix<f64>) -> Matrix4<f64> {
    Matrix4::from_column_slice(m.as_slice())
}
