//! Trajectory error and empirical CDFs.

use std::fmt::Write as _;

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::simulator::ReferencePath;

fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Shortest distance from `point` to the reference polyline.
pub fn trajectory_error(point: &Point2<f64>, path: &ReferencePath) -> f64 {
    path.segments()
        .map(|(a, b)| point_segment_distance(point, &a, &b))
        .fold(f64::INFINITY, f64::min)
}

/// Right-continuous empirical CDF, `F(t) = #{x ≤ t} / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ecdf {
    samples: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Validation(
                "error samples must be finite and non-negative".into(),
            ));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.samples.partition_point(|s| *s <= t) as f64 / self.samples.len() as f64
    }

    /// `1 − F(t)`
    pub fn exceedance(&self, t: f64) -> f64 {
        1.0 - self.eval(t)
    }

    /// Smallest sample `x` with `F(x) ≥ p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.samples.len();
        let rank = (p.clamp(0.0, 1.0) * n as f64).ceil() as usize;
        self.samples[rank.clamp(1, n) - 1]
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// `(error, F)` at every distinct sample.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.samples.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == *s => last.1 = f,
                _ => out.push((*s, f)),
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("error,F\n");
        for (e, f) in self.points() {
            let _ = writeln!(out, "{e:?},{f:?}");
        }
        out
    }
}

/// Filtered positions of one run plus the path they are scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub label: String,
    pub estimates: Vec<(f64, Point2<f64>)>,
    pub reference: ReferencePath,
}

impl TrajectoryRecord {
    pub fn new(
        label: impl Into<String>,
        estimates: Vec<(f64, Point2<f64>)>,
        reference: ReferencePath,
    ) -> Result<Self> {
        if estimates.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Validation(
                "trajectory estimates are not time-sorted".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            estimates,
            reference,
        })
    }

    pub fn errors(&self) -> Vec<f64> {
        self.estimates
            .iter()
            .map(|(_, p)| trajectory_error(p, &self.reference))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub samples: usize,
    pub median: f64,
    pub p90: f64,
    /// Exceedance fraction per threshold, in table threshold order.
    pub exceedance: Vec<f64>,
    /// Time-aligned position RMSE, when truth is available.
    pub position_rmse: Option<f64>,
}

impl ComparisonRow {
    pub fn from_ecdf(label: impl Into<String>, ecdf: &Ecdf, thresholds: &[f64]) -> Self {
        Self {
            label: label.into(),
            samples: ecdf.len(),
            median: ecdf.median(),
            p90: ecdf.quantile(0.9),
            exceedance: thresholds.iter().map(|t| ecdf.exceedance(*t)).collect(),
            position_rmse: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub thresholds: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,samples,median,p90");
        for t in &self.thresholds {
            let _ = write!(out, ",exceed_{t:?}");
        }
        out.push_str(",position_rmse\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{:?},{:?}", r.label, r.samples, r.median, r.p90);
            for e in &r.exceedance {
                let _ = write!(out, ",{e:?}");
            }
            match r.position_rmse {
                Some(v) => {
                    let _ = writeln!(out, ",{v:?}");
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Median, 90th percentile and per-threshold exceedance of two runs.
pub fn compare_runs(
    a: &TrajectoryRecord,
    b: &TrajectoryRecord,
    thresholds: &[f64],
) -> Result<ComparisonTable> {
    let rows = [a, b]
        .iter()
        .map(|r| {
            Ok(ComparisonRow::from_ecdf(
                r.label.clone(),
                &Ecdf::new(r.errors())?,
                thresholds,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable {
        thresholds: thresholds.to_vec(),
        rows,
    })
}
