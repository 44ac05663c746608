//! Per-tag tracking pipeline over the asymmetric BLE/UWB schedule.
//!
//! Raw records are grouped into epochs of one BLE period. UWB (TDOA) records
//! join the epoch whose window contains them and may be thinned to one in
//! `decimation` UWB-bearing epochs, emulating a lower UWB rate after the fact.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::ekf::{self, EkfConfig, Posterior};
use crate::error::{Error, Result};
use crate::log::MeasurementRecord;
use crate::motion::MotionModel;
use crate::sensors::{
    FrameModel, MeasurementFrame, MeasurementModel, PathLossParams, RssEntry, TdoaEntry,
    DISTANCE_FLOOR,
};
use crate::types::{AnchorId, AnchorLayout, Covariance4, StateVector};
use crate::ukf::{self, UkfParams};

/// Slack used when mapping timestamps onto epoch indices.
const EPOCH_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    /// BLE packets per second; sets the epoch length.
    pub ble_rate: f64,
    /// UWB packets per second, `0` for BLE-only operation. At most `ble_rate`.
    pub uwb_rate: f64,
    /// Keep one in `decimation` UWB-bearing epochs.
    pub decimation: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            ble_rate: 3.0,
            uwb_rate: 3.0,
            decimation: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ble_rate.is_finite() && self.ble_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ble_rate must be > 0, got {}",
                self.ble_rate
            )));
        }
        if !(self.uwb_rate.is_finite() && self.uwb_rate >= 0.0 && self.uwb_rate <= self.ble_rate) {
            return Err(Error::InvalidParameter(format!(
                "uwb_rate must lie in [0, ble_rate], got {}",
                self.uwb_rate
            )));
        }
        if self.decimation < 1 {
            return Err(Error::InvalidParameter("decimation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn epoch_length(&self) -> f64 {
        1.0 / self.ble_rate
    }

    /// UWB rate after decimation, in Hz.
    pub fn effective_uwb_rate(&self) -> f64 {
        self.uwb_rate / self.decimation as f64
    }

    pub fn epoch_index(&self, timestamp: f64) -> i64 {
        (timestamp * self.ble_rate + EPOCH_SLACK).floor() as i64
    }

    /// Whether the tag transmits UWB during BLE epoch `k` (before decimation).
    pub fn transmits_uwb(&self, k: u64) -> bool {
        if self.uwb_rate <= 0.0 {
            return false;
        }
        let ratio = self.uwb_rate / self.ble_rate;
        let slot = |k: u64| (k as f64 * ratio + EPOCH_SLACK).floor() as i64;
        k == 0 || slot(k) > slot(k - 1)
    }
}

/// Groups a time-sorted record stream into per-epoch frames.
pub fn assemble_epochs(
    raw: &[MeasurementRecord],
    sched: &ScheduleConfig,
) -> Result<Vec<MeasurementFrame>> {
    sched.validate()?;
    if let Some(i) = raw
        .windows(2)
        .position(|w| w[1].timestamp() < w[0].timestamp())
    {
        return Err(Error::UnsortedInput { index: i + 1 });
    }
    let keep_uwb = sched.uwb_rate > 0.0;
    let mut frames = Vec::new();
    let mut uwb_epochs_seen: u64 = 0;
    let mut start = 0;
    while start < raw.len() {
        let epoch = sched.epoch_index(raw[start].timestamp());
        let end = start
            + raw[start..]
                .iter()
                .position(|r| sched.epoch_index(r.timestamp()) != epoch)
                .unwrap_or(raw.len() - start);
        let group = &raw[start..end];
        start = end;

        let has_uwb = group
            .iter()
            .any(|r| matches!(r, MeasurementRecord::Tdoa { .. }));
        let take_uwb =
            keep_uwb && has_uwb && uwb_epochs_seen.is_multiple_of(u64::from(sched.decimation));
        if has_uwb {
            uwb_epochs_seen += 1;
        }

        let mut frame = MeasurementFrame::new(group[0].timestamp());
        for r in group {
            match r {
                MeasurementRecord::Rss {
                    anchor,
                    value,
                    variance,
                    ..
                } => frame.rss.push(RssEntry {
                    anchor: anchor.clone(),
                    value: *value,
                    variance: *variance,
                }),
                MeasurementRecord::Tdoa {
                    anchor,
                    reference,
                    value,
                    variance,
                    ..
                } if take_uwb => frame.tdoa.push(TdoaEntry {
                    anchor: anchor.clone(),
                    reference: reference.clone(),
                    value: *value,
                    variance: *variance,
                }),
                MeasurementRecord::Tdoa { .. } => {}
            }
        }
        if !frame.is_empty() {
            frames.push(frame);
        }
    }
    Ok(frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Ekf,
    Ukf,
    BleOnlyEkf,
    BleOnlyUkf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [
        FilterKind::Ekf,
        FilterKind::Ukf,
        FilterKind::BleOnlyEkf,
        FilterKind::BleOnlyUkf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Ukf => "ukf",
            FilterKind::BleOnlyEkf => "ble-ekf",
            FilterKind::BleOnlyUkf => "ble-ukf",
        }
    }

    pub fn ble_only(&self) -> bool {
        matches!(self, FilterKind::BleOnlyEkf | FilterKind::BleOnlyUkf)
    }

    pub fn unscented(&self) -> bool {
        matches!(self, FilterKind::Ukf | FilterKind::BleOnlyUkf)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown filter `{s}` (expected ekf, ukf, ble-ekf or ble-ukf)"
                ))
            })
    }
}

/// Filter tuning that does not depend on the anchor geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterTuning {
    pub sigma_ax2: f64,
    pub ukf: UkfParams,
    pub ekf: EkfConfig,
}

impl Default for FilterTuning {
    fn default() -> Self {
        Self {
            sigma_ax2: crate::motion::DEFAULT_SIGMA_AX2,
            ukf: UkfParams::default(),
            ekf: EkfConfig::default(),
        }
    }
}

/// Everything a track step needs besides the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterModels {
    pub layout: AnchorLayout,
    pub path_loss: PathLossParams,
    pub tuning: FilterTuning,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrackCounters {
    /// Accepted measurement updates.
    pub updates: u64,
    /// Updates skipped on a singular innovation covariance.
    pub skipped: u64,
    /// Accepted updates that needed an eigenvalue clip.
    pub psd_repairs: u64,
    /// Sigma-point square roots that needed diagonal jitter.
    pub sqrt_repairs: u64,
    /// Accepted updates whose posterior failed the symmetry/PSD check.
    pub unhealthy: u64,
}

impl TrackCounters {
    pub fn merge(&mut self, other: &TrackCounters) {
        self.updates += other.updates;
        self.skipped += other.skipped;
        self.psd_repairs += other.psd_repairs;
        self.sqrt_repairs += other.sqrt_repairs;
        self.unhealthy += other.unhealthy;
    }

    pub fn repair_rate(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.psd_repairs as f64 / self.updates as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub state: StateVector,
    pub cov: Covariance4,
    pub timestamp: f64,
    pub kind: FilterKind,
    pub counters: TrackCounters,
}

impl Track {
    pub fn new(state: StateVector, cov: Covariance4, timestamp: f64, kind: FilterKind) -> Self {
        Self {
            state,
            cov,
            timestamp,
            kind,
            counters: TrackCounters::default(),
        }
    }

    /// Time update to the frame timestamp, then a measurement update with the
    /// track's filter.
    pub fn step(&self, frame: &MeasurementFrame, models: &FilterModels) -> Result<Track> {
        let frame = if self.kind.ble_only() && !frame.tdoa.is_empty() {
            Cow::Owned(frame.rss_only())
        } else {
            Cow::Borrowed(frame)
        };
        if frame.is_empty() {
            return self.advance::<FrameModel>(frame.timestamp, None, &models.tuning);
        }
        let model = FrameModel::new(&frame, &models.layout, &models.path_loss)?;
        self.advance(frame.timestamp, Some(&model), &models.tuning)
    }

    /// [`Track::step`] against an arbitrary measurement model; `None` only
    /// propagates the state.
    pub fn advance<M: MeasurementModel + ?Sized>(
        &self,
        timestamp: f64,
        model: Option<&M>,
        tuning: &FilterTuning,
    ) -> Result<Track> {
        if !timestamp.is_finite() {
            return Err(Error::NonFinite("frame timestamp"));
        }
        if timestamp < self.timestamp {
            return Err(Error::TimeRegression {
                track: self.timestamp,
                frame: timestamp,
            });
        }
        let motion = MotionModel::new(timestamp - self.timestamp, tuning.sigma_ax2)?;
        let (pred_state, pred_cov) = motion.predict(&self.state, &self.cov);
        let mut next = Track {
            state: pred_state,
            cov: pred_cov,
            timestamp,
            kind: self.kind,
            counters: self.counters,
        };
        let Some(model) = model else {
            return Ok(next);
        };
        let outcome: Result<Posterior> = if self.kind.unscented() {
            ukf::update(&pred_state, &pred_cov, model, &tuning.ukf)
        } else {
            ekf::update(&pred_state, &pred_cov, model, &tuning.ekf)
        };
        match outcome {
            Ok(post) => {
                next.counters.updates += 1;
                if post.report.psd_repaired {
                    next.counters.psd_repairs += 1;
                }
                if post.report.sqrt_repaired {
                    next.counters.sqrt_repairs += 1;
                }
                if !post.cov.is_healthy() || !post.state.is_finite() {
                    next.counters.unhealthy += 1;
                }
                next.state = post.state;
                next.cov = post.cov;
            }
            Err(Error::SingularInnovation { .. }) => {
                next.counters.skipped += 1;
            }
            Err(e) => return Err(e),
        }
        Ok(next)
    }
}

/// Initial-belief settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    /// Position standard deviation, m.
    pub sigma_p: f64,
    /// Velocity standard deviation, m/s.
    pub sigma_v: f64,
    /// Number of leading frames pooled for initialization.
    pub frames: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            sigma_p: 3.0,
            sigma_v: 1.0,
            frames: 3,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p.is_finite()
            && self.sigma_p > 0.0
            && self.sigma_v.is_finite()
            && self.sigma_v > 0.0)
        {
            return Err(Error::InvalidParameter(
                "initial standard deviations must be > 0".into(),
            ));
        }
        if self.frames == 0 {
            return Err(Error::InvalidParameter(
                "initialization needs at least one frame".into(),
            ));
        }
        Ok(())
    }
}

/// Starts a track at the weighted centroid of the three strongest anchors.
///
/// Readings are averaged per anchor over the batch; each of the three anchors
/// is weighted by the inverse of its path-loss range estimate.
pub fn initialize_track(
    first_frames: &[MeasurementFrame],
    layout: &AnchorLayout,
    params: &PathLossParams,
    init: &InitConfig,
    kind: FilterKind,
) -> Result<Track> {
    init.validate()?;
    let mut sums: BTreeMap<&AnchorId, (f64, usize)> = BTreeMap::new();
    for e in first_frames.iter().flat_map(|f| &f.rss) {
        let slot = sums.entry(&e.anchor).or_insert((0.0, 0));
        slot.0 += e.value;
        slot.1 += 1;
    }
    if sums.len() < 3 {
        return Err(Error::InsufficientAnchors(sums.len()));
    }
    let mut means: Vec<(&AnchorId, f64)> = sums
        .into_iter()
        .map(|(id, (s, n))| (id, s / n as f64))
        .collect();
    // Strongest first; BTreeMap order breaks ties deterministically.
    means.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut wsum = 0.0;
    let mut acc = nalgebra::Vector2::zeros();
    for (id, rss) in means.iter().take(3) {
        let anchor = layout.anchor(id)?;
        let range = 10f64.powf((params.p0_for(id) - rss) / (10.0 * params.gamma)) * params.d0();
        let w = 1.0 / range.max(DISTANCE_FLOOR);
        acc += anchor.position.coords * w;
        wsum += w;
    }
    let position = nalgebra::Point2::from(acc / wsum);
    let timestamp = first_frames.first().map(|f| f.timestamp).unwrap_or(0.0);
    let (p2, v2) = (init.sigma_p * init.sigma_p, init.sigma_v * init.sigma_v);
    Ok(Track::new(
        StateVector::at_rest(position),
        Covariance4::from_diagonal([p2, v2, p2, v2]),
        timestamp,
        kind,
    ))
}

/// One filtered estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub timestamp: f64,
    pub state: StateVector,
}

/// Initializes from the leading frames and steps through the whole sequence.
pub fn run_track(
    frames: &[MeasurementFrame],
    models: &FilterModels,
    init: &InitConfig,
    kind: FilterKind,
) -> Result<(Track, Vec<TrackPoint>)> {
    let batch = &frames[..init.frames.min(frames.len())];
    let mut track = initialize_track(batch, &models.layout, &models.path_loss, init, kind)?;
    let mut points = Vec::with_capacity(frames.len());
    for frame in frames {
        track = track.step(frame, models)?;
        points.push(TrackPoint {
            timestamp: track.timestamp,
            state: track.state,
        });
    }
    Ok((track, points))
}
