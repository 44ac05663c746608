//! Shared fixtures: a linear measurement stub and an explicit-inverse
//! Kalman update used as an oracle.
#![allow(dead_code)]

use hybridloc::sensors::MeasurementModel;
use hybridloc::{Covariance4, Result, StateVector};
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `z = H·x + v`, `v ~ N(0, R)`
#[derive(Clone, Debug)]
pub struct LinearStub {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl MeasurementModel for LinearStub {
    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn observation(&self) -> DVector<f64> {
        self.z.clone()
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        self.r.clone()
    }

    fn predict(&self, state: &StateVector) -> Result<DVector<f64>> {
        Ok(&self.h * DVector::from_column_slice(state.as_vector().as_slice()))
    }

    fn jacobian(&self, _: &StateVector) -> Result<DMatrix<f64>> {
        Ok(self.h.clone())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-half..half))
}

pub fn random_spd4(rng: &mut ChaCha8Rng) -> Covariance4 {
    let a = uniform_matrix(rng, 4, 4, 2.0);
    let m = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
    Covariance4::from_symmetrized(&Matrix4::from_column_slice(m.as_slice()))
}

pub fn random_state(rng: &mut ChaCha8Rng) -> StateVector {
    StateVector::from_vector(Vector4::from_fn(|_, _| rng.random_range(-10.0..10.0)))
}

/// Random stub with 1 to 6 rows observing a state near `truth`.
pub fn random_stub(rng: &mut ChaCha8Rng, truth: &StateVector) -> LinearStub {
    let m = rng.random_range(1..=6);
    let h = uniform_matrix(rng, m, 4, 1.0);
    let b = uniform_matrix(rng, m, m, 1.0);
    let r = &b * b.transpose() + DMatrix::identity(m, m) * 0.05;
    let noise = uniform_matrix(rng, m, 1, 1.0).column(0).into_owned();
    let z = &h * DVector::from_column_slice(truth.as_vector().as_slice()) + noise;
    LinearStub { h, r, z }
}

/// Textbook update with an explicit inverse of `H·P·Hᵀ + R`.
pub fn closed_form_kf(
    x: &StateVector,
    p: &Covariance4,
    stub: &LinearStub,
) -> (Vector4<f64>, Matrix4<f64>) {
    let xd = DVector::from_column_slice(x.as_vector().as_slice());
    let pd = DMatrix::from_column_slice(4, 4, p.as_matrix().as_slice());
    let s = &stub.h * &pd * stub.h.transpose() + &stub.r;
    let k = &pd * stub.h.transpose() * s.try_inverse().expect("invertible S");
    let xn = &xd + &k * (&stub.z - &stub.h * &xd);
    let pn = (DMatrix::identity(4, 4) - &k * &stub.h) * &pd;
    (
        Vector4::from_column_slice(xn.as_slice()),
        Matrix4::from_column_slice(pn.as_slice()),
    )
}

pub fn max_abs_diff<const R: usize, const C: usize>(
    a: &nalgebra::SMatrix<f64, R, C>,
    b: &nalgebra::SMatrix<f64, R, C>,
) -> f64 {
    (a - b).abs().max()
}
