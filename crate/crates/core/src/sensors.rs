//! Measurement model: log-distance path-loss RSS, TDOA against a reference
//! anchor, stacked frame prediction and its analytic Jacobian.

use std::collections::BTreeMap;
use std::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector, Point2};

use crate::error::{Error, Result};
use crate::types::{Anchor, AnchorId, AnchorLayout, StateVector, SPEED_OF_LIGHT, STATE_DIM};

/// Distances below this are clamped, in meters.
pub const DISTANCE_FLOOR: f64 = 0.1;

/// Reference distance of the path-loss model, in meters.
pub const REFERENCE_DISTANCE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PathLossParams {
    /// Received power at the reference distance, dBm, shared default.
    pub p0: f64,
    /// Per-anchor overrides of `p0`.
    pub p0_per_anchor: BTreeMap<AnchorId, f64>,
    /// Path-loss exponent.
    pub gamma: f64,
}

impl PathLossParams {
    pub fn new(p0: f64, gamma: f64) -> Result<Self> {
        let params = Self {
            p0,
            p0_per_anchor: BTreeMap::new(),
            gamma,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_anchor_p0(mut self, id: AnchorId, p0: f64) -> Result<Self> {
        self.p0_per_anchor.insert(id, p0);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "path-loss exponent must be > 0, got {}",
                self.gamma
            )));
        }
        if !self.p0.is_finite() || self.p0_per_anchor.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference power"));
        }
        Ok(())
    }

    pub fn p0_for(&self, id: &AnchorId) -> f64 {
        self.p0_per_anchor.get(id).copied().unwrap_or(self.p0)
    }

    pub fn d0(&self) -> f64 {
        REFERENCE_DISTANCE
    }
}

fn check_point(p: &Point2<f64>) -> Result<()> {
    if p.x.is_finite() && p.y.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("position"))
    }
}

fn rss_at(pos: &Point2<f64>, anchor: &Point2<f64>, p0: f64, gamma: f64) -> f64 {
    let d = (pos - anchor).norm().max(DISTANCE_FLOOR);
    p0 - 10.0 * gamma * (d / REFERENCE_DISTANCE).log10()
}

fn tdoa_at(pos: &Point2<f64>, k: &Point2<f64>, l: &Point2<f64>) -> f64 {
    ((pos - k).norm() - (pos - l).norm()) / SPEED_OF_LIGHT
}

/// Received power (dBm) predicted by the log-distance path-loss model.
pub fn predict_rss(pos: &Point2<f64>, anchor: &Anchor, params: &PathLossParams) -> Result<f64> {
    check_point(pos)?;
    Ok(rss_at(
        pos,
        &anchor.position,
        params.p0_for(&anchor.id),
        params.gamma,
    ))
}

/// Time difference of arrival (seconds) of anchor `k` relative to anchor `l`.
pub fn predict_tdoa(pos: &Point2<f64>, anchor_k: &Anchor, anchor_l: &Anchor) -> Result<f64> {
    check_point(pos)?;
    if anchor_k.id == anchor_l.id {
        return Err(Error::InvalidFrame(format!(
            "TDOA pair uses anchor {} twice",
            anchor_k.id
        )));
    }
    Ok(tdoa_at(pos, &anchor_k.position, &anchor_l.position))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RssEntry {
    pub anchor: AnchorId,
    /// dBm
    pub value: f64,
    /// dBm²
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdoaEntry {
    pub anchor: AnchorId,
    pub reference: AnchorId,
    /// seconds
    pub value: f64,
    /// seconds²
    pub variance: f64,
}

/// One epoch of stacked measurements: RSS rows first, then TDOA rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementFrame {
    pub timestamp: f64,
    pub rss: Vec<RssEntry>,
    pub tdoa: Vec<TdoaEntry>,
}

impl MeasurementFrame {
    pub fn new(timestamp: f64) -> Self {
        Self {
            timestamp,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rss.len() + self.tdoa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacked measurement vector `z`.
    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.rss
                .iter()
                .map(|e| e.value)
                .chain(self.tdoa.iter().map(|e| e.value)),
        )
    }

    /// Diagonal of `R`.
    pub fn variances(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.rss
                .iter()
                .map(|e| e.variance)
                .chain(self.tdoa.iter().map(|e| e.variance)),
        )
    }

    /// Copy with the TDOA rows removed.
    pub fn rss_only(&self) -> Self {
        Self {
            timestamp: self.timestamp,
            rss: self.rss.clone(),
            tdoa: Vec::new(),
        }
    }

    pub fn validate(&self, layout: &AnchorLayout) -> Result<()> {
        if !self.timestamp.is_finite() {
            return Err(Error::NonFinite("frame timestamp"));
        }
        if self.is_empty() {
            return Err(Error::InvalidFrame("frame has no measurements".into()));
        }
        for e in &self.rss {
            layout.anchor(&e.anchor)?;
            check_entry(e.value, e.variance, &e.anchor)?;
        }
        for e in &self.tdoa {
            layout.anchor(&e.anchor)?;
            layout.anchor(&e.reference)?;
            if e.anchor == e.reference {
                return Err(Error::InvalidFrame(format!(
                    "TDOA pair uses anchor {} twice",
                    e.anchor
                )));
            }
            if layout.reference() != Some(&e.reference) {
                return Err(Error::InvalidFrame(format!(
                    "TDOA entry {} is referenced to {} rather than the layout reference anchor",
                    e.anchor, e.reference
                )));
            }
            check_entry(e.value, e.variance, &e.anchor)?;
        }
        Ok(())
    }
}

fn check_entry(value: f64, variance: f64, id: &AnchorId) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite("measurement value"));
    }
    if !(variance.is_finite() && variance > 0.0) {
        return Err(Error::InvalidFrame(format!(
            "entry for {id} has non-positive variance {variance}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementPrediction {
    pub values: DVector<f64>,
    /// `(m + n) × 4`, present when requested.
    pub jacobian: Option<DMatrix<f64>>,
}

/// Stacked prediction `h(x)` for a frame, optionally with `∂h/∂x`.
pub fn predict_frame(
    state: &StateVector,
    frame: &MeasurementFrame,
    layout: &AnchorLayout,
    params: &PathLossParams,
    want_jacobian: bool,
) -> Result<MeasurementPrediction> {
    let model = FrameModel::new(frame, layout, params)?;
    let values = model.predict(state)?;
    let jacobian = if want_jacobian {
        Some(model.jacobian(state)?)
    } else {
        None
    };
    Ok(MeasurementPrediction { values, jacobian })
}

/// Measurement model consumed by the filters.
///
/// The stacked observation and its (additive) noise covariance travel with the
/// model so a filter update needs nothing else.
pub trait MeasurementModel {
    fn dim(&self) -> usize;
    fn observation(&self) -> DVector<f64>;
    fn noise_covariance(&self) -> DMatrix<f64>;
    fn predict(&self, state: &StateVector) -> Result<DVector<f64>>;
    fn jacobian(&self, state: &StateVector) -> Result<DMatrix<f64>>;
}

#[derive(Clone, Copy, Debug)]
enum Row {
    Rss { anchor: Point2<f64>, p0: f64 },
    Tdoa { k: Point2<f64>, l: Point2<f64> },
}

/// A [`MeasurementFrame`] resolved against a layout and path-loss parameters.
#[derive(Clone, Debug)]
pub struct FrameModel {
    rows: Vec<Row>,
    gamma: f64,
    z: DVector<f64>,
    variances: DVector<f64>,
}

impl FrameModel {
    pub fn new(
        frame: &MeasurementFrame,
        layout: &AnchorLayout,
        params: &PathLossParams,
    ) -> Result<Self> {
        frame.validate(layout)?;
        params.validate()?;
        let mut rows = Vec::with_capacity(frame.len());
        for e in &frame.rss {
            let a = layout.anchor(&e.anchor)?;
            rows.push(Row::Rss {
                anchor: a.position,
                p0: params.p0_for(&a.id),
            });
        }
        for e in &frame.tdoa {
            rows.push(Row::Tdoa {
                k: layout.anchor(&e.anchor)?.position,
                l: layout.anchor(&e.reference)?.position,
            });
        }
        Ok(Self {
            rows,
            gamma: params.gamma,
            z: frame.values(),
            variances: frame.variances(),
        })
    }
}

/// Gradient of `|p − s|` w.r.t. `p`, with the distance floored.
fn unit_from(anchor: &Point2<f64>, pos: &Point2<f64>) -> (f64, f64) {
    let d = pos - anchor;
    let n = d.norm().max(DISTANCE_FLOOR);
    (d.x / n, d.y / n)
}

impl MeasurementModel for FrameModel {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn observation(&self) -> DVector<f64> {
        self.z.clone()
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.variances)
    }

    fn predict(&self, state: &StateVector) -> Result<DVector<f64>> {
        state.validate()?;
        let pos = state.position();
        Ok(DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| match *row {
                Row::Rss { anchor, p0 } => rss_at(&pos, &anchor, p0, self.gamma),
                Row::Tdoa { k, l } => tdoa_at(&pos, &k, &l),
            }),
        ))
    }

    fn jacobian(&self, state: &StateVector) -> Result<DMatrix<f64>> {
        state.validate()?;
        let pos = state.position();
        let mut h = DMatrix::zeros(self.rows.len(), STATE_DIM);
        for (i, row) in self.rows.iter().enumerate() {
            let (gx, gy) = match *row {
                Row::Rss { anchor, .. } => {
                    let dx = pos.x - anchor.x;
                    let dy = pos.y - anchor.y;
                    let d2 = dx * dx + dy * dy;
                    if d2 < DISTANCE_FLOOR * DISTANCE_FLOOR {
                        // Clamped region: the prediction is constant there.
                        (0.0, 0.0)
                    } else {
                        let g = -10.0 * self.gamma / LN_10;
                        (g * dx / d2, g * dy / d2)
                    }
                }
                Row::Tdoa { k, l } => {
                    let (ukx, uky) = unit_from(&k, &pos);
                    let (ulx, uly) = unit_from(&l, &pos);
                    ((ukx - ulx) / SPEED_OF_LIGHT, (uky - uly) / SPEED_OF_LIGHT)
                }
            };
            h[(i, 0)] = gx;
            h[(i, 2)] = gy;
        }
        Ok(h)
    }
}
