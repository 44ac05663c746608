//! Innovation-covariance handling shared by both filters.
//!
//! RSS rows live in dBm² and TDOA rows in s², so the raw innovation covariance
//! spans some twenty orders of magnitude. Conditioning, repair and solves are
//! therefore done on the diagonally equilibrated matrix `D·S·D` with
//! `D = diag(S_ii^-1/2)`, which is scale free.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};

use crate::error::{Error, Result};
use crate::types::{is_psd, symmetrize};

/// Largest accepted condition number of the equilibrated innovation covariance.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalue floor applied when repairing an innovation covariance.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Diagnostics of one measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct InnovationReport {
    /// `z − ẑ`
    pub innovation: DVector<f64>,
    /// Innovation covariance `S` (EKF) or `P_zz` (UKF).
    pub covariance: DMatrix<f64>,
    pub log_det: f64,
    /// An eigenvalue clip was applied to the innovation or posterior covariance.
    pub psd_repaired: bool,
    /// The sigma-point square root needed diagonal jitter.
    pub sqrt_repaired: bool,
}

pub(crate) fn symmetrize_dyn(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Equilibrated innovation covariance with its eigendecomposition.
pub(crate) struct Equilibrated {
    /// `S_ii^-1/2`
    scale: DVector<f64>,
    normalized: DMatrix<f64>,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl Equilibrated {
    pub(crate) fn new(s: &DMatrix<f64>) -> Result<Self> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("innovation covariance"));
        }
        let diag = s.diagonal();
        if diag.iter().any(|v| *v <= 0.0) {
            return Err(Error::SingularInnovation {
                condition: f64::INFINITY,
            });
        }
        let scale = diag.map(|v| 1.0 / v.sqrt());
        let mut normalized = symmetrize_dyn(s);
        for i in 0..normalized.nrows() {
            for j in 0..normalized.ncols() {
                normalized[(i, j)] *= scale[i] * scale[j];
            }
        }
        let eigen = SymmetricEigen::new(normalized.clone());
        Ok(Self {
            scale,
            normalized,
            eigen,
        })
    }

    pub(crate) fn min_eigenvalue(&self) -> f64 {
        self.eigen.eigenvalues.min()
    }

    pub(crate) fn condition(&self) -> f64 {
        let max = self.eigen.eigenvalues.max();
        let min = self.eigen.eigenvalues.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Clips eigenvalues of the equilibrated matrix at [`EIGEN_FLOOR`] and maps
    /// the result back to the original scale.
    pub(crate) fn clipped(&self) -> DMatrix<f64> {
        let vals = self.eigen.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
        let v = &self.eigen.eigenvectors;
        let n = v * DMatrix::from_diagonal(&vals) * v.transpose();
        let mut out = symmetrize_dyn(&n);
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] /= self.scale[i] * self.scale[j];
            }
        }
        out
    }

    pub(crate) fn check_condition(&self) -> Result<()> {
        let condition = self.condition();
        if condition > MAX_CONDITION {
            Err(Error::SingularInnovation { condition })
        } else {
            Ok(())
        }
    }

    /// `log det S`
    pub(crate) fn log_det(&self) -> f64 {
        let normalized: f64 = self.eigen.eigenvalues.iter().map(|v| v.ln()).sum();
        normalized - 2.0 * self.scale.iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Gain `K = B·S⁻¹` for a `4 × m` cross term `B`, by linear solve.
    pub(crate) fn gain(&self, cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        // Kᵀ = D·Sn⁻¹·D·Bᵀ
        let mut rhs = cross.transpose();
        for i in 0..rhs.nrows() {
            rhs.row_mut(i).scale_mut(self.scale[i]);
        }
        let solved = match self.normalized.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => self
                .normalized
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or(Error::SingularInnovation {
                    condition: f64::INFINITY,
                })?,
        };
        let mut kt = solved;
        for i in 0..kt.nrows() {
            kt.row_mut(i).scale_mut(self.scale[i]);
        }
        Ok(kt.transpose())
    }
}

/// Clips negative eigenvalues of a 4×4 covariance to zero when it fails the
/// PSD check. Returns the (possibly) repaired matrix and whether a repair ran.
pub(crate) fn repair_psd4(p: &Matrix4<f64>) -> (Matrix4<f64>, bool) {
    let p = symmetrize(p);
    if is_psd(&p) {
        return (p, false);
    }
    let eig = SymmetricEigen::new(p);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = eig.eigenvectors;
    (
        symmetrize(&(v * Matrix4::from_diagonal(&vals) * v.transpose())),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_scale_is_well_conditioned() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![16.0, 2e-18, 36.0]));
        let eq = Equilibrated::new(&s).unwrap();
        assert!((eq.condition() - 1.0).abs() < 1e-12);
        eq.check_condition().unwrap();
        let expected = 16.0_f64.ln() + 2e-18_f64.ln() + 36.0_f64.ln();
        assert!((eq.log_det() - expected).abs() < 1e-9);
    }

    #[test]
    fn gain_matches_explicit_inverse() {
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let k = Equilibrated::new(&s).unwrap().gain(&b).unwrap();
        let explicit = &b * s.clone().try_inverse().unwrap();
        assert!((k - explicit).amax() < 1e-12);
    }

    #[test]
    fn singular_is_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let eq = Equilibrated::new(&s).unwrap();
        assert!(matches!(
            eq.check_condition(),
            Err(Error::SingularInnovation { .. })
        ));
        let clipped = Equilibrated::new(&eq.clipped()).unwrap();
        assert!(clipped.min_eigenvalue() > 0.0);
    }

    #[test]
    fn repair_psd4_clips() {
        let m = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 2.0, -0.5, 3.0));
        let (r, repaired) = repair_psd4(&m);
        assert!(repaired);
        assert!(is_psd(&r));
        let (same, repaired) = repair_psd4(&Matrix4::identity());
        assert!(!repaired);
        assert_eq!(same, Matrix4::identity());
    }
}
