mod common;

use common::{closed_form_kf, max_abs_diff, random_spd4, random_state, random_stub, rng};
use hybridloc::ekf::{self, CovarianceForm, EkfConfig};
use hybridloc::fusion::{FilterKind, FilterTuning, Track};
use hybridloc::ukf::{self, sigma_points, unscented_transform, UkfParams};
use nalgebra::{DMatrix, DVector};

#[test]
fn ekf_ukf_and_closed_form_agree() {
    let mut r = rng(11);
    let joseph = EkfConfig::default();
    let standard = EkfConfig {
        covariance_form: CovarianceForm::Standard,
    };
    for case in 0..200 {
        let x = random_state(&mut r);
        let p = random_spd4(&mut r);
        let truth = random_state(&mut r);
        let stub = random_stub(&mut r, &truth);
        let (x_ref, p_ref) = closed_form_kf(&x, &p, &stub);

        for cfg in [&joseph, &standard] {
            let e = ekf::update(&x, &p, &stub, cfg).unwrap();
            assert!(
                max_abs_diff(e.state.as_vector(), &x_ref) < 1e-9,
                "case {case} ekf state"
            );
            assert!(
                max_abs_diff(e.cov.as_matrix(), &p_ref) < 1e-8,
                "case {case} ekf cov"
            );
        }
        let u = ukf::update(&x, &p, &stub, &UkfParams::default()).unwrap();
        assert!(
            max_abs_diff(u.state.as_vector(), &x_ref) < 1e-9,
            "case {case} ukf state"
        );
        assert!(
            max_abs_diff(u.cov.as_matrix(), &p_ref) < 1e-8,
            "case {case} ukf cov"
        );
    }
}

#[test]
fn unscented_transform_of_linear_stub_is_exact() {
    let mut r = rng(12);
    for params in [
        UkfParams::default(),
        UkfParams::new(1.0, 0.0, 2.0).unwrap(),
        UkfParams::new(0.1, 1.0, 0.0).unwrap(),
    ] {
        for _ in 0..50 {
            let x = random_state(&mut r);
            let p = random_spd4(&mut r);
            let stub = random_stub(&mut r, &x);
            let pts = sigma_points(&x, &p, &params).unwrap();
            let ut = unscented_transform(&pts, &stub).unwrap();
            let xd = DVector::from_column_slice(x.as_vector().as_slice());
            let pd = DMatrix::from_column_slice(4, 4, p.as_matrix().as_slice());
            let scale = 1.0 + pd.abs().max();
            assert!((&ut.z_hat - &stub.h * &xd).abs().max() < 1e-9 * scale);
            assert!(
                (&ut.pzz - (&stub.h * &pd * stub.h.transpose() + &stub.r))
                    .abs()
                    .max()
                    < 1e-9 * scale
            );
            assert!((&ut.pxz - &pd * stub.h.transpose()).abs().max() < 1e-9 * scale);
        }
    }
}

#[test]
fn hundred_epoch_runs_match() {
    let mut r = rng(13);
    let tuning = FilterTuning::default();
    let x0 = random_state(&mut r);
    let p0 = random_spd4(&mut r);
    let mut ekf_track = Track::new(x0, p0, 0.0, FilterKind::Ekf);
    let mut ukf_track = Track::new(x0, p0, 0.0, FilterKind::Ukf);
    let mut truth = x0;
    for k in 1..=100 {
        let t = k as f64 / 3.0;
        truth = (random_state(&mut r).as_vector() * 0.05 + truth.as_vector()).into();
        let stub = random_stub(&mut r, &truth);
        ekf_track = ekf_track.advance(t, Some(&stub), &tuning).unwrap();
        ukf_track = ukf_track.advance(t, Some(&stub), &tuning).unwrap();
        let ds = max_abs_diff(ekf_track.state.as_vector(), ukf_track.state.as_vector());
        let dp = max_abs_diff(ekf_track.cov.as_matrix(), ukf_track.cov.as_matrix());
        assert!(ds < 1e-9, "epoch {k}: state differs by {ds:e}");
        assert!(dp < 1e-9, "epoch {k}: cov differs by {dp:e}");
    }
    assert_eq!(ekf_track.counters.updates, 100);
    assert_eq!(ukf_track.counters, ekf_track.counters);
}
