//! Ground-truth walks and synthetic RSS/TDOA measurement streams.

use nalgebra::{Point2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fusion::ScheduleConfig;
use crate::log::MeasurementRecord;
use crate::sensors::{predict_rss, predict_tdoa, PathLossParams};
use crate::types::{Anchor, AnchorLayout, Capabilities};

/// RSS variance written for noiseless synthesis, dBm².
pub const RSS_VARIANCE_FLOOR: f64 = 1e-6;
/// TDOA variance written for noiseless synthesis, s².
pub const TDOA_VARIANCE_FLOOR: f64 = 1e-24;

/// Polyline walked at constant speed.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePath {
    waypoints: Vec<Point2<f64>>,
    speed: f64,
}

impl ReferencePath {
    pub fn new(waypoints: Vec<Point2<f64>>, speed: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidParameter(
                "a path needs at least 2 waypoints".into(),
            ));
        }
        if waypoints
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::NonFinite("waypoint"));
        }
        if let Some(i) = waypoints.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "waypoints {i} and {} coincide",
                i + 1
            )));
        }
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "speed must be > 0, got {speed}"
            )));
        }
        Ok(Self { waypoints, speed })
    }

    pub fn waypoints(&self) -> &[Point2<f64>] {
        &self.waypoints
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
        self.waypoints.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (b - a).norm()).sum()
    }

    pub fn duration(&self) -> f64 {
        self.length() / self.speed
    }

    /// Position and unit direction at arc length `s`, clamped to the path.
    pub fn at_arc_length(&self, s: f64) -> (Point2<f64>, Vector2<f64>) {
        let mut remaining = s.max(0.0);
        let n = self.waypoints.len() - 1;
        for (i, (a, b)) in self.segments().enumerate() {
            let len = (b - a).norm();
            let dir = (b - a) / len;
            if remaining < len || i == n - 1 {
                let t = remaining.min(len);
                return (a + dir * t, dir);
            }
            remaining -= len;
        }
        unreachable!("path has at least one segment")
    }
}

/// True kinematic state at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub timestamp: f64,
    pub position: Point2<f64>,
    pub velocity: Vector2<f64>,
}

/// Constant-speed traversal sampled at `rate` Hz from `t = 0`.
pub fn sample_path(path: &ReferencePath, rate: f64) -> Result<Vec<TruthSample>> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample rate must be > 0, got {rate}"
        )));
    }
    let count = (path.duration() * rate + 1e-9).floor() as u64 + 1;
    Ok((0..count)
        .map(|k| {
            let t = k as f64 / rate;
            let (position, dir) = path.at_arc_length(t * path.speed);
            TruthSample {
                timestamp: t,
                position,
                velocity: dir * path.speed,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// RSS standard deviation, dB.
    pub rss_sigma: f64,
    /// Per-anchor TOA jitter, s. TDOA noise has variance `2·toa_sigma²`.
    pub toa_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            rss_sigma: 4.0,
            toa_sigma: 1e-9,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rss_sigma.is_finite()
            && self.rss_sigma >= 0.0
            && self.toa_sigma.is_finite()
            && self.toa_sigma >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "noise standard deviations must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn rss_variance(&self) -> f64 {
        (self.rss_sigma * self.rss_sigma).max(RSS_VARIANCE_FLOOR)
    }

    pub fn tdoa_variance(&self) -> f64 {
        (2.0 * self.toa_sigma * self.toa_sigma).max(TDOA_VARIANCE_FLOOR)
    }
}

/// Noisy measurement stream over the sampled truth.
///
/// Every truth sample is a BLE epoch producing one RSS record per BLE anchor.
/// On epochs where the schedule transmits UWB, each UWB anchor draws one TOA
/// error and every non-reference anchor emits a TDOA against the reference,
/// so pairs sharing the reference carry correlated noise.
pub fn synthesize_stream(
    truth: &[TruthSample],
    layout: &AnchorLayout,
    params: &PathLossParams,
    sched: &ScheduleConfig,
    noise: &NoiseConfig,
) -> Result<Vec<MeasurementRecord>> {
    sched.validate()?;
    noise.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let rss_noise =
        Normal::new(0.0, noise.rss_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let toa_noise =
        Normal::new(0.0, noise.toa_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let (rss_var, tdoa_var) = (noise.rss_variance(), noise.tdoa_variance());

    let ble: Vec<&Anchor> = layout.ble_anchors().collect();
    let uwb: Vec<&Anchor> = layout.uwb_anchors().collect();
    let reference = layout
        .reference()
        .and_then(|id| uwb.iter().position(|a| &a.id == id));

    let mut out = Vec::new();
    let mut toa = vec![0.0; uwb.len()];
    for (k, sample) in truth.iter().enumerate() {
        let t = sample.timestamp;
        for a in &ble {
            let value = predict_rss(&sample.position, a, params)? + rss_noise.sample(&mut rng);
            out.push(MeasurementRecord::Rss {
                timestamp: t,
                anchor: a.id.clone(),
                value,
                variance: rss_var,
            });
        }
        let Some(r) = reference else { continue };
        if !sched.transmits_uwb(k as u64) {
            continue;
        }
        for e in toa.iter_mut() {
            *e = toa_noise.sample(&mut rng);
        }
        for (i, a) in uwb.iter().enumerate() {
            if i == r {
                continue;
            }
            let value = predict_tdoa(&sample.position, a, uwb[r])? + (toa[i] - toa[r]);
            out.push(MeasurementRecord::Tdoa {
                timestamp: t,
                anchor: a.id.clone(),
                reference: uwb[r].id.clone(),
                value,
                variance: tdoa_var,
            });
        }
    }
    Ok(out)
}

/// Nine hybrid anchors on a 12 m × 6 m floor: five along the south wall,
/// four staggered along the north wall; `A3` is the UWB reference.
pub fn desk_layout() -> AnchorLayout {
    let south = [0.0, 3.0, 6.0, 9.0, 12.0];
    let north = [1.5, 4.5, 7.5, 10.5];
    let anchors = south
        .iter()
        .map(|x| (*x, 0.0))
        .chain(north.iter().map(|x| (*x, 6.0)))
        .enumerate()
        .map(|(i, (x, y))| Anchor::new(format!("A{}", i + 1), x, y, Capabilities::HYBRID))
        .collect();
    AnchorLayout::new(anchors, Some("A3".into())).expect("desk layout is valid")
}

/// Serpentine walk through the floor's five bays, returning along the middle
/// corridor (34 m).
pub fn desk_path() -> ReferencePath {
    let pts = [
        (1.0, 1.0),
        (3.5, 1.0),
        (3.5, 5.0),
        (6.0, 5.0),
        (6.0, 1.0),
        (8.5, 1.0),
        (8.5, 5.0),
        (11.0, 5.0),
        (11.0, 3.0),
        (1.0, 3.0),
    ];
    ReferencePath::new(pts.iter().map(|(x, y)| Point2::new(*x, *y)).collect(), 1.0)
        .expect("desk path is valid")
}
