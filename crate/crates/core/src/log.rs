//! Measurement-log CSV format.
//!
//! ```text
//! timestamp_s,kind,anchor_id[,anchor_id2],value,variance
//! 0.333,RSS,A3,-61.25,16.0
//! 1.000,TDOA,A5,A1,1.2e-9,2e-18
//! ```
//!
//! RSS values are dBm and variances dBm²; TDOA values are seconds of anchor
//! `anchor_id` relative to the reference `anchor_id2`, variances s². Numbers
//! are written in shortest round-trip form, so a written log reads back
//! bit-identically.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::AnchorId;

pub const LOG_HEADER: &str = "timestamp_s,kind,anchor_id[,anchor_id2],value,variance";

#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementRecord {
    Rss {
        timestamp: f64,
        anchor: AnchorId,
        value: f64,
        variance: f64,
    },
    Tdoa {
        timestamp: f64,
        anchor: AnchorId,
        reference: AnchorId,
        value: f64,
        variance: f64,
    },
}

impl MeasurementRecord {
    pub fn timestamp(&self) -> f64 {
        match self {
            MeasurementRecord::Rss { timestamp, .. }
            | MeasurementRecord::Tdoa { timestamp, .. } => *timestamp,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            MeasurementRecord::Rss { value, .. } | MeasurementRecord::Tdoa { value, .. } => *value,
        }
    }

    pub fn is_rss(&self) -> bool {
        matches!(self, MeasurementRecord::Rss { .. })
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

fn parse_variance(field: &str, line: usize) -> Result<f64> {
    let v = parse_num(field, "variance", line)?;
    if v <= 0.0 {
        return Err(parse_err(
            line,
            format!("variance `{field}` must be positive"),
        ));
    }
    Ok(v)
}

fn parse_id(field: &str, line: usize) -> Result<AnchorId> {
    let id = field.trim();
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(parse_err(line, format!("invalid anchor id `{field}`")));
    }
    Ok(AnchorId::new(id))
}

fn parse_record(text: &str, line: usize) -> Result<MeasurementRecord> {
    let fields: Vec<&str> = text.split(',').collect();
    let kind = fields.get(1).map(|s| s.trim()).unwrap_or("");
    match (kind, fields.len()) {
        ("RSS", 5) => Ok(MeasurementRecord::Rss {
            timestamp: parse_num(fields[0], "timestamp", line)?,
            anchor: parse_id(fields[2], line)?,
            value: parse_num(fields[3], "value", line)?,
            variance: parse_variance(fields[4], line)?,
        }),
        ("TDOA", 6) => {
            let anchor = parse_id(fields[2], line)?;
            let reference = parse_id(fields[3], line)?;
            if anchor == reference {
                return Err(parse_err(line, "TDOA pair uses the same anchor twice"));
            }
            Ok(MeasurementRecord::Tdoa {
                timestamp: parse_num(fields[0], "timestamp", line)?,
                anchor,
                reference,
                value: parse_num(fields[4], "value", line)?,
                variance: parse_variance(fields[5], line)?,
            })
        }
        ("RSS", n) | ("TDOA", n) => Err(parse_err(line, format!("{kind} record has {n} fields"))),
        _ => Err(parse_err(line, format!("unknown record kind `{kind}`"))),
    }
}

/// Parses a whole log held in memory.
pub fn parse_log(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LOG_HEADER => {}
        Some((_, h)) => {
            return Err(parse_err(
                1,
                format!("expected header `{LOG_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(parse_err(1, "missing header")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1))
        .collect()
}

pub fn read_log<R: BufRead>(mut reader: R) -> Result<Vec<MeasurementRecord>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_log(&text)
}

pub fn format_log(records: &[MeasurementRecord]) -> String {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(LOG_HEADER);
    out.push('\n');
    for r in records {
        // Writing into a String cannot fail.
        let _ = match r {
            MeasurementRecord::Rss {
                timestamp,
                anchor,
                value,
                variance,
            } => writeln!(out, "{timestamp:?},RSS,{anchor},{value:?},{variance:?}"),
            MeasurementRecord::Tdoa {
                timestamp,
                anchor,
                reference,
                value,
                variance,
            } => writeln!(
                out,
                "{timestamp:?},TDOA,{anchor},{reference},{value:?},{variance:?}"
            ),
        };
    }
    out
}

pub fn write_log<W: Write>(mut writer: W, records: &[MeasurementRecord]) -> Result<()> {
    writer.write_all(format_log(records).as_bytes())?;
    Ok(())
}
