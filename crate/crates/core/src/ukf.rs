//! Unscented Kalman filter measurement update.
//!
//! The time update is linear and shared with the EKF (see [`crate::motion`]);
//! sigma points are drawn fresh from the predicted moments at every
//! measurement update, with noise entering additively through `R`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::ekf::{to4, to4x4, Posterior};
use crate::error::{Error, Result};
use crate::innovation::{repair_psd4, Equilibrated, InnovationReport};
use crate::sensors::{FrameModel, MeasurementFrame, MeasurementModel, PathLossParams};
use crate::types::{cholesky_psd, AnchorLayout, Covariance4, StateVector, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub kappa: f64,
    pub beta: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            kappa: 0.0,
            beta: 2.0,
        }
    }
}

impl UkfParams {
    pub fn new(alpha: f64, kappa: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, kappa, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.kappa.is_finite() || !self.beta.is_finite() {
            return Err(Error::NonFinite("UKF parameters"));
        }
        if self.scale() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "L + lambda must be positive, got {}",
                self.scale()
            )));
        }
        Ok(())
    }

    /// `λ = α²(L + κ) − L`
    pub fn lambda(&self) -> f64 {
        let l = STATE_DIM as f64;
        self.alpha * self.alpha * (l + self.kappa) - l
    }

    /// `L + λ`
    pub fn scale(&self) -> f64 {
        STATE_DIM as f64 + self.lambda()
    }

    /// `(W⁽ᵐ⁾, W⁽ᶜ⁾)` for the `2L + 1` points.
    pub fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let n = 2 * STATE_DIM + 1;
        let scale = self.scale();
        let w0m = self.lambda() / scale;
        let w0c = w0m + (1.0 - self.alpha * self.alpha + self.beta);
        let wi = 1.0 / (2.0 * scale);
        let mut wm = vec![wi; n];
        let mut wc = vec![wi; n];
        wm[0] = w0m;
        wc[0] = w0c;
        (wm, wc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<Vector4<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
    /// The square root of the scaled covariance needed diagonal jitter.
    pub sqrt_repaired: bool,
}

impl SigmaPointSet {
    /// Weighted mean `Σ W⁽ᵐ⁾ 𝒳_i`.
    pub fn mean(&self) -> Vector4<f64> {
        self.points
            .iter()
            .zip(&self.mean_weights)
            .fold(Vector4::zeros(), |acc, (p, w)| acc + p * *w)
    }

    /// Weighted covariance `Σ W⁽ᶜ⁾ (𝒳_i − m)(𝒳_i − m)ᵀ` about `center`.
    pub fn covariance_about(&self, center: &Vector4<f64>) -> Matrix4<f64> {
        self.points
            .iter()
            .zip(&self.cov_weights)
            .fold(Matrix4::zeros(), |acc, (p, w)| {
                let d = p - center;
                acc + d * d.transpose() * *w
            })
    }
}

/// Scaled sigma points `𝒳_0 = x`, `𝒳_i = x ± (√((L+λ)P))_i`.
pub fn sigma_points(mean: &StateVector, cov: &Covariance4, p: &UkfParams) -> Result<SigmaPointSet> {
    p.validate()?;
    let root = cholesky_psd(&(cov.as_matrix() * p.scale()))?;
    let x = *mean.as_vector();
    let mut points = Vec::with_capacity(2 * STATE_DIM + 1);
    points.push(x);
    for i in 0..STATE_DIM {
        points.push(x + root.lower.column(i));
    }
    for i in 0..STATE_DIM {
        points.push(x - root.lower.column(i));
    }
    let (mean_weights, cov_weights) = p.weights();
    Ok(SigmaPointSet {
        points,
        mean_weights,
        cov_weights,
        sqrt_repaired: root.repaired(),
    })
}

/// Moments of the sigma points pushed through a measurement model.
#[derive(Clone, Debug, PartialEq)]
pub struct UnscentedMeasurement {
    pub z_hat: DVector<f64>,
    /// `P_zz`, including `R`.
    pub pzz: DMatrix<f64>,
    pub pxz: DMatrix<f64>,
    /// `𝒵_i = h(𝒳_i)`
    pub transformed: Vec<DVector<f64>>,
}

pub fn unscented_transform<M: MeasurementModel + ?Sized>(
    points: &SigmaPointSet,
    model: &M,
) -> Result<UnscentedMeasurement> {
    let transformed = points
        .points
        .iter()
        .map(|p| model.predict(&StateVector::from_vector(*p)))
        .collect::<Result<Vec<_>>>()?;
    let m = model.dim();
    // Accumulated about 𝒵_0; equal to Σ W⁽ᵐ⁾ 𝒵_i since the weights sum to one,
    // without the cancellation a large negative W_0 causes.
    let z0 = &transformed[0];
    let z_hat = transformed
        .iter()
        .zip(&points.mean_weights)
        .skip(1)
        .fold(z0.clone(), |acc, (z, w)| acc + (z - z0) * *w);
    let x_mean = points.points[0];
    let mut pzz = model.noise_covariance();
    let mut pxz = DMatrix::zeros(STATE_DIM, m);
    for ((x, z), w) in points
        .points
        .iter()
        .zip(&transformed)
        .zip(&points.cov_weights)
    {
        let dz = z - &z_hat;
        let dx = DVector::from_column_slice((x - x_mean).as_slice());
        pzz += &dz * dz.transpose() * *w;
        pxz += dx * dz.transpose() * *w;
    }
    Ok(UnscentedMeasurement {
        z_hat,
        pzz,
        pxz,
        transformed,
    })
}

pub fn unscented_measurement(
    points: &SigmaPointSet,
    frame: &MeasurementFrame,
    layout: &AnchorLayout,
    params: &PathLossParams,
) -> Result<UnscentedMeasurement> {
    let model = FrameModel::new(frame, layout, params)?;
    unscented_transform(points, &model)
}

/// UKF update against an arbitrary measurement model.
pub fn update<M: MeasurementModel + ?Sized>(
    pred_state: &StateVector,
    pred_cov: &Covariance4,
    model: &M,
    p: &UkfParams,
) -> Result<Posterior> {
    let points = sigma_points(pred_state, pred_cov, p)?;
    let ut = unscented_transform(&points, model)?;

    // A negative W₀⁽ᶜ⁾ can push P_zz out of the PSD cone.
    let mut eq = Equilibrated::new(&ut.pzz)?;
    let mut pzz = ut.pzz;
    let mut psd_repaired = false;
    if eq.min_eigenvalue() < crate::innovation::EIGEN_FLOOR {
        pzz = eq.clipped();
        eq = Equilibrated::new(&pzz)?;
        psd_repaired = true;
    }
    eq.check_condition()?;

    let k = eq.gain(&ut.pxz)?;
    let innovation = model.observation() - &ut.z_hat;
    let x = pred_state.as_vector() + to4(&(&k * &innovation));
    let pm = DMatrix::from_column_slice(4, 4, pred_cov.as_matrix().as_slice());
    let post = pm - &k * &pzz * k.transpose();
    let (post, repaired) = repair_psd4(&to4x4(&post));
    psd_repaired |= repaired;

    Ok(Posterior {
        state: StateVector::from_vector(x),
        cov: Covariance4::from_symmetrized(&post),
        report: InnovationReport {
            innovation,
            log_det: eq.log_det(),
            covariance: pzz,
            psd_repaired,
            sqrt_repaired: points.sqrt_repaired,
        },
    })
}

/// UKF update for one measurement frame.
pub fn ukf_update(
    pred_state: &StateVector,
    pred_cov: &Covariance4,
    frame: &MeasurementFrame,
    layout: &AnchorLayout,
    params: &PathLossParams,
    p: &UkfParams,
) -> Result<Posterior> {
    let model = FrameModel::new(frame, layout, params)?;
    update(pred_state, pred_cov, &model, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::TdoaEntry;
    use crate::types::{Anchor, Capabilities};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_weights() {
        let p = UkfParams::default();
        assert_eq!(p.lambda(), -3.0);
        assert_eq!(p.scale(), 1.0);
        let (wm, wc) = p.weights();
        assert_eq!(wm[0], -3.0);
        assert_eq!(wc[0], -0.25);
        assert!(wm[1..].iter().all(|w| *w == 0.5));
        assert!(wc[1..].iter().all(|w| *w == 0.5));
        assert_eq!(wm.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(UkfParams::new(0.0, 0.0, 2.0).is_err());
        assert!(UkfParams::new(1.5, 0.0, 2.0).is_err());
        assert!(UkfParams::new(0.5, -4.0, 2.0).is_err());
        assert!(UkfParams::new(1.0, 0.0, 2.0).is_ok());
    }

    #[test]
    fn zero_covariance_collapses_points() {
        let mean = StateVector::new(1.0, 2.0, 3.0, 4.0);
        let set = sigma_points(&mean, &Covariance4::zeros(), &UkfParams::default()).unwrap();
        assert_eq!(set.points.len(), 9);
        assert!(set.points.iter().all(|p| p == mean.as_vector()));
    }

    #[test]
    fn reconstruction_recovers_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for params in [
            UkfParams::default(),
            UkfParams::new(1.0, 0.0, 2.0).unwrap(),
            UkfParams::new(0.1, 1.0, 0.0).unwrap(),
        ] {
            for _ in 0..20 {
                let b = Matrix4::<f64>::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let cov = Covariance4::new(crate::types::symmetrize(
                    &(b.transpose() * b + Matrix4::identity() * 0.1),
                ))
                .unwrap();
                let mean = StateVector::new(
                    rng.random_range(-5.0..5.0),
                    0.3,
                    rng.random_range(-5.0..5.0),
                    -0.3,
                );
                let set = sigma_points(&mean, &cov, &params).unwrap();
                assert!((set.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((set.mean() - mean.as_vector()).amax() < 1e-10);
                let recon = set.covariance_about(mean.as_vector());
                assert!(
                    (recon - cov.as_matrix()).amax() < 1e-9,
                    "{recon} vs {}",
                    cov.as_matrix()
                );
            }
        }
    }

    #[test]
    fn degenerate_spread_gives_noise_only() {
        let layout = AnchorLayout::new(
            vec![
                Anchor::new("A1", 0.0, 0.0, Capabilities::HYBRID),
                Anchor::new("A2", 8.0, 0.0, Capabilities::HYBRID),
                Anchor::new("A3", 4.0, 6.0, Capabilities::HYBRID),
            ],
            Some("A1".into()),
        )
        .unwrap();
        let params = PathLossParams::new(-59.0, 2.0).unwrap();
        let mut frame = MeasurementFrame::new(0.0);
        frame.rss.push(crate::sensors::RssEntry {
            anchor: "A3".into(),
            value: -70.0,
            variance: 16.0,
        });
        frame.tdoa.push(TdoaEntry {
            anchor: "A2".into(),
            reference: "A1".into(),
            value: 0.0,
            variance: 2e-18,
        });
        let mean = StateVector::new(4.0, 0.0, 2.0, 0.0);
        let set = sigma_points(&mean, &Covariance4::zeros(), &UkfParams::default()).unwrap();
        let ut = unscented_measurement(&set, &frame, &layout, &params).unwrap();
        let h = crate::sensors::predict_frame(&mean, &frame, &layout, &params, false)
            .unwrap()
            .values;
        assert!((&ut.z_hat - &h).amax() < 1e-12 * h.amax());
        assert_eq!(ut.pzz, DMatrix::from_diagonal(&frame.variances()));
        assert!(ut.pxz.iter().all(|v| *v == 0.0));

        // Tag on the perpendicular bisector of (A1, A2) with axis-aligned
        // covariance: the TDOA prediction cancels.
        let set = sigma_points(
            &mean,
            &Covariance4::from_diagonal([1.0, 0.2, 0.5, 0.2]),
            &UkfParams::default(),
        )
        .unwrap();
        let ut = unscented_measurement(&set, &frame, &layout, &params).unwrap();
        assert!(ut.z_hat[1].abs() < 1e-12);
    }
}
