//! Experiment configuration (TOML).
//!
//! Every key is optional; omitted keys take the defaults of the selected
//! `preset`. Unknown keys are rejected. A fully explicit echo of the parsed
//! configuration is written to every run manifest.
//!
//! ```toml
//! preset = "paper-lowrate"      # default | paper-highrate | paper-lowrate
//! runs = 100
//! seed = 1
//! filters = ["ekf", "ukf"]      # ekf | ukf | ble-ekf | ble-ukf
//! thresholds = [1.0, 1.5, 2.0, 3.0]
//! output_dir = "results"
//!
//! [layout]
//! reference = "A3"
//! anchors = [
//!   { id = "A1", position = [0.0, 0.0], capabilities = ["ble", "uwb"], p0 = -58.5 },
//!   # ...
//! ]
//!
//! [path]
//! waypoints = [[1.0, 1.0], [11.0, 1.0]]
//! speed = 1.0
//!
//! [path_loss]
//! p0 = -59.0
//! gamma = 2.0
//!
//! [motion]
//! sigma_ax2 = 0.35
//!
//! [noise]
//! rss_sigma = 4.0
//! toa_sigma = 1e-9
//!
//! [schedule]
//! ble_rate = 3.0
//! uwb_rate = 3.0
//! decimation = 1
//!
//! [ukf]
//! alpha = 0.5
//! kappa = 0.0
//! beta = 2.0
//!
//! [ekf]
//! covariance_form = "joseph"    # joseph | standard
//!
//! [init]
//! sigma_p = 3.0
//! sigma_v = 1.0
//! frames = 3
//! ```

use std::path::PathBuf;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::ekf::{CovarianceForm, EkfConfig};
use crate::error::{Error, Result};
use crate::fusion::{FilterKind, FilterModels, FilterTuning, InitConfig, ScheduleConfig};
use crate::sensors::PathLossParams;
use crate::simulator::{desk_layout, desk_path, NoiseConfig, ReferencePath};
use crate::types::{Anchor, AnchorId, AnchorLayout, Capabilities};
use crate::ukf::UkfParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Default,
    PaperHighRate,
    PaperLowRate,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::PaperHighRate => "paper-highrate",
            Preset::PaperLowRate => "paper-lowrate",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [Preset::Default, Preset::PaperHighRate, Preset::PaperLowRate]
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Validation(format!("unknown preset `{name}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub layout: AnchorLayout,
    pub path: ReferencePath,
    pub path_loss: PathLossParams,
    pub tuning: FilterTuning,
    /// Noise levels; the seed field is the master seed.
    pub noise: NoiseConfig,
    pub schedule: ScheduleConfig,
    pub init: InitConfig,
    pub filters: Vec<FilterKind>,
    pub runs: u32,
    pub thresholds: Vec<f64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self {
            preset,
            layout: desk_layout(),
            path: desk_path(),
            path_loss: PathLossParams::new(-59.0, 2.0).expect("valid defaults"),
            tuning: FilterTuning::default(),
            noise: NoiseConfig {
                rss_sigma: 4.0,
                toa_sigma: 1e-9,
                seed: 1,
            },
            schedule: ScheduleConfig::default(),
            init: InitConfig::default(),
            filters: vec![FilterKind::Ekf, FilterKind::Ukf],
            runs: 100,
            thresholds: vec![1.0, 1.5, 2.0, 3.0],
            output_dir: PathBuf::from("results"),
        };
        if preset == Preset::PaperLowRate {
            cfg.noise.rss_sigma = 6.0;
            cfg.noise.toa_sigma = 2e-9;
            cfg.schedule.decimation = 6;
        }
        cfg
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed
    }

    pub fn models(&self) -> FilterModels {
        FilterModels {
            layout: self.layout.clone(),
            path_loss: self.path_loss.clone(),
            tuning: self.tuning,
        }
    }

    /// Fully explicit TOML echo; parses back to an identical configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(&RawConfig::from(self)).expect("config serializes")
    }

    pub fn to_toml_value(&self) -> toml::Value {
        toml::Value::try_from(RawConfig::from(self)).expect("config serializes")
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Default)
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    filters: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<RawLayout>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<RawPath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path_loss: Option<RawPathLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    motion: Option<RawMotion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<RawNoise>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<RawSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ukf: Option<RawUkf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ekf: Option<RawEkf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init: Option<RawInit>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    anchors: Vec<RawAnchor>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawAnchor {
    id: String,
    position: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    capabilities: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p0: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPath {
    waypoints: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speed: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPathLoss {
    p0: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawMotion {
    sigma_ax2: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    rss_sigma: Option<f64>,
    toa_sigma: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    ble_rate: Option<f64>,
    uwb_rate: Option<f64>,
    decimation: Option<u32>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawUkf {
    alpha: Option<f64>,
    kappa: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEkf {
    covariance_form: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    sigma_p: Option<f64>,
    sigma_v: Option<f64>,
    frames: Option<usize>,
}

impl From<&ExperimentConfig> for RawConfig {
    fn from(c: &ExperimentConfig) -> Self {
        let anchors = c
            .layout
            .anchors()
            .iter()
            .map(|a| RawAnchor {
                id: a.id.to_string(),
                position: [a.position.x, a.position.y],
                capabilities: Some(
                    [(a.capabilities.ble, "ble"), (a.capabilities.uwb, "uwb")]
                        .iter()
                        .filter(|(on, _)| *on)
                        .map(|(_, n)| n.to_string())
                        .collect(),
                ),
                p0: c.path_loss.p0_per_anchor.get(&a.id).copied(),
            })
            .collect();
        RawConfig {
            preset: Some(c.preset.name().into()),
            runs: Some(c.runs),
            seed: Some(c.noise.seed),
            filters: Some(c.filters.iter().map(|f| f.name().to_string()).collect()),
            thresholds: Some(c.thresholds.clone()),
            output_dir: Some(c.output_dir.to_string_lossy().into_owned()),
            layout: Some(RawLayout {
                reference: c.layout.reference().map(|r| r.to_string()),
                anchors,
            }),
            path: Some(RawPath {
                waypoints: c.path.waypoints().iter().map(|p| [p.x, p.y]).collect(),
                speed: Some(c.path.speed()),
            }),
            path_loss: Some(RawPathLoss {
                p0: Some(c.path_loss.p0),
                gamma: Some(c.path_loss.gamma),
            }),
            motion: Some(RawMotion {
                sigma_ax2: Some(c.tuning.sigma_ax2),
            }),
            noise: Some(RawNoise {
                rss_sigma: Some(c.noise.rss_sigma),
                toa_sigma: Some(c.noise.toa_sigma),
            }),
            schedule: Some(RawSchedule {
                ble_rate: Some(c.schedule.ble_rate),
                uwb_rate: Some(c.schedule.uwb_rate),
                decimation: Some(c.schedule.decimation),
            }),
            ukf: Some(RawUkf {
                alpha: Some(c.tuning.ukf.alpha),
                kappa: Some(c.tuning.ukf.kappa),
                beta: Some(c.tuning.ukf.beta),
            }),
            ekf: Some(RawEkf {
                covariance_form: Some(
                    match c.tuning.ekf.covariance_form {
                        CovarianceForm::Joseph => "joseph",
                        CovarianceForm::Standard => "standard",
                    }
                    .into(),
                ),
            }),
            init: Some(RawInit {
                sigma_p: Some(c.init.sigma_p),
                sigma_v: Some(c.init.sigma_v),
                frames: Some(c.init.frames),
            }),
        }
    }
}

fn invalid(section: &str, e: Error) -> Error {
    match e {
        Error::Validation(_) => e,
        other => Error::Validation(format!("{section}: {other}")),
    }
}

/// Seeds are echoed as TOML integers, which are signed 64-bit.
pub fn check_seed(seed: u64) -> Result<()> {
    if seed > i64::MAX as u64 {
        return Err(Error::Validation(format!(
            "seed {seed} exceeds {}",
            i64::MAX
        )));
    }
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().trim().to_string(),
    })?;
    build(raw)
}

fn build(raw: RawConfig) -> Result<ExperimentConfig> {
    let preset = match &raw.preset {
        Some(name) => Preset::parse(name)?,
        None => Preset::Default,
    };
    let mut cfg = ExperimentConfig::preset(preset);

    if let Some(runs) = raw.runs {
        if runs == 0 {
            return Err(Error::Validation("runs must be >= 1".into()));
        }
        cfg.runs = runs;
    }
    if let Some(seed) = raw.seed {
        cfg.noise.seed = seed;
    }
    check_seed(cfg.noise.seed)?;
    if let Some(filters) = &raw.filters {
        if filters.is_empty() {
            return Err(Error::Validation("filters must not be empty".into()));
        }
        let mut kinds = Vec::new();
        for f in filters {
            let kind: FilterKind = f.parse()?;
            if kinds.contains(&kind) {
                return Err(Error::Validation(format!("filter `{f}` listed twice")));
            }
            kinds.push(kind);
        }
        cfg.filters = kinds;
    }
    if let Some(t) = raw.thresholds {
        if t.is_empty() || t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation(
                "thresholds must be a non-empty list of finite values >= 0".into(),
            ));
        }
        cfg.thresholds = t;
    }
    if let Some(dir) = raw.output_dir {
        cfg.output_dir = PathBuf::from(dir);
    }

    let mut per_anchor_p0 = Vec::new();
    if let Some(layout) = raw.layout {
        let mut anchors = Vec::with_capacity(layout.anchors.len());
        for a in layout.anchors {
            if a.id.is_empty() || a.id.contains(',') || a.id.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "anchor id `{}` must be non-empty without commas or whitespace",
                    a.id
                )));
            }
            let capabilities = match a.capabilities {
                None => Capabilities::HYBRID,
                Some(list) => {
                    let mut caps = Capabilities {
                        ble: false,
                        uwb: false,
                    };
                    for c in list {
                        match c.as_str() {
                            "ble" => caps.ble = true,
                            "uwb" => caps.uwb = true,
                            other => {
                                return Err(Error::Validation(format!(
                                    "anchor {}: unknown capability `{other}`",
                                    a.id
                                )))
                            }
                        }
                    }
                    caps
                }
            };
            if let Some(p0) = a.p0 {
                per_anchor_p0.push((AnchorId::new(a.id.clone()), p0));
            }
            anchors.push(Anchor::new(
                a.id,
                a.position[0],
                a.position[1],
                capabilities,
            ));
        }
        cfg.layout = AnchorLayout::new(anchors, layout.reference.map(AnchorId::new))
            .map_err(|e| invalid("layout", e))?;
    }

    if let Some(path) = raw.path {
        let speed = path.speed.unwrap_or(cfg.path.speed());
        let pts = path
            .waypoints
            .iter()
            .map(|p| Point2::new(p[0], p[1]))
            .collect();
        cfg.path = ReferencePath::new(pts, speed).map_err(|e| invalid("path", e))?;
    }

    if let Some(pl) = raw.path_loss {
        cfg.path_loss.p0 = pl.p0.unwrap_or(cfg.path_loss.p0);
        cfg.path_loss.gamma = pl.gamma.unwrap_or(cfg.path_loss.gamma);
    }
    for (id, p0) in per_anchor_p0 {
        cfg.path_loss.p0_per_anchor.insert(id, p0);
    }
    cfg.path_loss
        .validate()
        .map_err(|e| invalid("path_loss", e))?;

    if let Some(m) = raw.motion {
        cfg.tuning.sigma_ax2 = m.sigma_ax2.unwrap_or(cfg.tuning.sigma_ax2);
    }
    if !(cfg.tuning.sigma_ax2.is_finite() && cfg.tuning.sigma_ax2 >= 0.0) {
        return Err(Error::Validation(format!(
            "motion: sigma_ax2 must be >= 0, got {}",
            cfg.tuning.sigma_ax2
        )));
    }

    if let Some(n) = raw.noise {
        cfg.noise.rss_sigma = n.rss_sigma.unwrap_or(cfg.noise.rss_sigma);
        cfg.noise.toa_sigma = n.toa_sigma.unwrap_or(cfg.noise.toa_sigma);
    }
    cfg.noise.validate().map_err(|e| invalid("noise", e))?;

    if let Some(s) = raw.schedule {
        cfg.schedule.ble_rate = s.ble_rate.unwrap_or(cfg.schedule.ble_rate);
        cfg.schedule.uwb_rate = s.uwb_rate.unwrap_or(cfg.schedule.uwb_rate);
        cfg.schedule.decimation = s.decimation.unwrap_or(cfg.schedule.decimation);
    }
    cfg.schedule
        .validate()
        .map_err(|e| invalid("schedule", e))?;

    if let Some(u) = raw.ukf {
        cfg.tuning.ukf = UkfParams {
            alpha: u.alpha.unwrap_or(cfg.tuning.ukf.alpha),
            kappa: u.kappa.unwrap_or(cfg.tuning.ukf.kappa),
            beta: u.beta.unwrap_or(cfg.tuning.ukf.beta),
        };
    }
    cfg.tuning.ukf.validate().map_err(|e| invalid("ukf", e))?;

    if let Some(e) = raw.ekf {
        if let Some(form) = e.covariance_form {
            cfg.tuning.ekf = EkfConfig {
                covariance_form: match form.as_str() {
                    "joseph" => CovarianceForm::Joseph,
                    "standard" => CovarianceForm::Standard,
                    other => {
                        return Err(Error::Validation(format!(
                            "ekf: unknown covariance_form `{other}`"
                        )))
                    }
                },
            };
        }
    }

    if let Some(i) = raw.init {
        cfg.init.sigma_p = i.sigma_p.unwrap_or(cfg.init.sigma_p);
        cfg.init.sigma_v = i.sigma_v.unwrap_or(cfg.init.sigma_v);
        cfg.init.frames = i.frames.unwrap_or(cfg.init.frames);
    }
    cfg.init.validate().map_err(|e| invalid("init", e))?;

    Ok(cfg)
}

/// Rebuilds a configuration from the `[config]` table of a manifest.
pub fn from_toml_value(value: toml::Value) -> Result<ExperimentConfig> {
    let raw: RawConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse {
            line: 0,
            message: e.message().trim().to_string(),
        })?;
    build(raw)
}
