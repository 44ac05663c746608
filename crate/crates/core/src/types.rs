//! Shared domain types: the planar constant-velocity state, its covariance,
//! anchors and their layout, plus the small matrix helpers every filter uses.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{Matrix4, Point2, SMatrix, SymmetricEigen, Vector2, Vector4};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// State dimension of the constant-velocity model.
pub const STATE_DIM: usize = 4;

/// Relative asymmetry tolerated before a matrix is considered non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Negative eigenvalues down to `-PSD_TOL * λ_max` are accepted as round-off.
pub const PSD_TOL: f64 = 1e-10;

/// Diagonal jitter ladder, as fractions of `trace / n`.
const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Filter state `(x, vx, y, vy)` as a column vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector(Vector4<f64>);

impl StateVector {
    pub fn new(x: f64, vx: f64, y: f64, vy: f64) -> Self {
        Self(Vector4::new(x, vx, y, vy))
    }

    pub fn from_vector(v: Vector4<f64>) -> Self {
        Self(v)
    }

    pub fn at_rest(position: Point2<f64>) -> Self {
        Self::new(position.x, 0.0, position.y, 0.0)
    }

    pub fn as_vector(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn vx(&self) -> f64 {
        self.0[1]
    }

    pub fn y(&self) -> f64 {
        self.0[2]
    }

    pub fn vy(&self) -> f64 {
        self.0[3]
    }

    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.x(), self.y())
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.vx(), self.vy())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("state vector"))
        }
    }
}

impl From<Vector4<f64>> for StateVector {
    fn from(v: Vector4<f64>) -> Self {
        Self(v)
    }
}

/// Symmetric positive semi-definite 4×4 state covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance4(Matrix4<f64>);

impl Covariance4 {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        let c = Self(symmetrize(&m));
        if !c.is_psd() {
            return Err(Error::InvalidParameter(
                "covariance is not positive semi-definite".into(),
            ));
        }
        Ok(c)
    }

    /// Symmetrizes without checking definiteness. Callers track health with
    /// [`Covariance4::is_healthy`].
    pub fn from_symmetrized(m: &Matrix4<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn from_diagonal(d: [f64; 4]) -> Self {
        Self(Matrix4::from_diagonal(&Vector4::from(d)))
    }

    pub fn zeros() -> Self {
        Self(Matrix4::zeros())
    }

    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn as_matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_symmetric(&self) -> bool {
        max_asymmetry(&self.0) <= SYMMETRY_TOL * max_abs(&self.0).max(f64::MIN_POSITIVE)
    }

    pub fn is_psd(&self) -> bool {
        is_psd(&self.0)
    }

    pub fn is_healthy(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.is_symmetric() && self.is_psd()
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

fn max_abs<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn max_asymmetry<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..N {
        for j in (i + 1)..N {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let asymmetry = max_asymmetry(m);
    if asymmetry > SYMMETRY_TOL * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// All eigenvalues ≥ `-PSD_TOL · λ_max`.
pub fn is_psd(m: &Matrix4<f64>) -> bool {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    min >= -PSD_TOL * max.max(0.0)
}

/// Lower-triangular square-root factor of a symmetric PSD matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CholeskyFactor<const N: usize> {
    pub lower: SMatrix<f64, N, N>,
    /// Jitter added to the diagonal, zero when the plain factorization succeeded.
    pub jitter: f64,
}

impl<const N: usize> CholeskyFactor<N> {
    pub fn repaired(&self) -> bool {
        self.jitter > 0.0
    }
}

/// Cholesky factorization tolerant of exactly semi-definite inputs.
///
/// A vanishing pivot is accepted when the rest of its column vanishes too, so
/// rank-deficient covariances (including the zero matrix) factor exactly.
/// Otherwise the diagonal jitter ladder `ε · trace / N · I` is tried in turn.
pub fn cholesky_psd<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<CholeskyFactor<N>> {
    check_symmetric(m)?;
    let m = symmetrize(m);
    if let Some(lower) = factor(&m) {
        return Ok(CholeskyFactor { lower, jitter: 0.0 });
    }
    let mean_diag = m.trace() / N as f64;
    if mean_diag <= 0.0 {
        return Err(Error::IndefiniteBeyondRepair);
    }
    for eps in JITTER_LADDER {
        let jitter = eps * mean_diag;
        let mut shifted = m;
        for i in 0..N {
            shifted[(i, i)] += jitter;
        }
        if let Some(lower) = factor(&shifted) {
            return Ok(CholeskyFactor { lower, jitter });
        }
    }
    Err(Error::IndefiniteBeyondRepair)
}

fn factor<const N: usize>(a: &SMatrix<f64, N, N>) -> Option<SMatrix<f64, N, N>> {
    let scale = (0..N).fold(0.0_f64, |acc, i| acc.max(a[(i, i)].abs()));
    let tiny = 64.0 * f64::EPSILON * scale;
    let mut l = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot > tiny {
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..N {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        } else if pivot >= -tiny {
            // Semi-definite direction: the remaining column must vanish.
            for i in (j + 1)..N {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tiny.max(f64::MIN_POSITIVE) {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Opaque anchor identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnchorId(String);

impl AnchorId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnchorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnchorId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub ble: bool,
    pub uwb: bool,
}

impl Capabilities {
    pub const HYBRID: Capabilities = Capabilities {
        ble: true,
        uwb: true,
    };
    pub const BLE: Capabilities = Capabilities {
        ble: true,
        uwb: false,
    };
    pub const UWB: Capabilities = Capabilities {
        ble: false,
        uwb: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub id: AnchorId,
    pub position: Point2<f64>,
    pub capabilities: Capabilities,
}

impl Anchor {
    pub fn new(id: impl Into<String>, x: f64, y: f64, capabilities: Capabilities) -> Self {
        Self {
            id: AnchorId::new(id),
            position: Point2::new(x, y),
            capabilities,
        }
    }
}

/// Fixed receivers plus the UWB reference anchor every TDOA is taken against.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorLayout {
    anchors: Vec<Anchor>,
    reference: Option<AnchorId>,
}

impl AnchorLayout {
    pub fn new(anchors: Vec<Anchor>, reference: Option<AnchorId>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &anchors {
            if !a.position.x.is_finite() || !a.position.y.is_finite() {
                return Err(Error::InvalidLayout(format!(
                    "anchor {} has a non-finite position",
                    a.id
                )));
            }
            if !seen.insert(&a.id) {
                return Err(Error::InvalidLayout(format!(
                    "duplicate anchor id {}",
                    a.id
                )));
            }
        }
        let ble = anchors.iter().filter(|a| a.capabilities.ble).count();
        if ble < 3 {
            return Err(Error::InvalidLayout(format!(
                "at least 3 BLE-capable anchors required, found {ble}"
            )));
        }
        let any_uwb = anchors.iter().any(|a| a.capabilities.uwb);
        match &reference {
            Some(id) => {
                let anchor = anchors.iter().find(|a| &a.id == id).ok_or_else(|| {
                    Error::InvalidLayout(format!("reference anchor {id} not in layout"))
                })?;
                if !anchor.capabilities.uwb {
                    return Err(Error::InvalidLayout(format!(
                        "reference anchor {id} is not UWB-capable"
                    )));
                }
            }
            None if any_uwb => {
                return Err(Error::InvalidLayout(
                    "layout has UWB anchors but no reference anchor".into(),
                ));
            }
            None => {}
        }
        Ok(Self { anchors, reference })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn get(&self, id: &AnchorId) -> Option<&Anchor> {
        self.anchors.iter().find(|a| &a.id == id)
    }

    pub fn anchor(&self, id: &AnchorId) -> Result<&Anchor> {
        self.get(id).ok_or_else(|| Error::UnknownAnchor(id.clone()))
    }

    pub fn reference(&self) -> Option<&AnchorId> {
        self.reference.as_ref()
    }

    pub fn ble_anchors(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter().filter(|a| a.capabilities.ble)
    }

    pub fn uwb_anchors(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter().filter(|a| a.capabilities.uwb)
    }

    /// Largest distance between any two anchors.
    pub fn max_spacing(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.anchors.iter().enumerate() {
            for b in &self.anchors[i + 1..] {
                best = best.max((a.position - b.position).norm());
            }
        }
        best
    }
}
