use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{SweepParameter, TopologyKind};
use super::runner::Summary;
use crate::error::UsageError;

/// Metrics plotted by every family, in column order.
pub const FIGURE_METRICS: [&str; 4] = ["coding_gain", "throughput_gain", "avg_queue", "loss_rate"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rate,
    Channels,
    Pus,
    Activity,
    Random,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Rate,
        Family::Channels,
        Family::Pus,
        Family::Activity,
        Family::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rate => "rate",
            Family::Channels => "channels",
            Family::Pus => "pus",
            Family::Activity => "activity",
            Family::Random => "random",
        }
    }

    /// The sweep the family's x-axis comes from.
    pub fn parameter(self) -> SweepParameter {
        match self {
            Family::Rate | Family::Random => SweepParameter::DataRateKbps,
            Family::Channels => SweepParameter::Channels,
            Family::Pus => SweepParameter::PuCount,
            Family::Activity => SweepParameter::Lambda,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Family, UsageError> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| UsageError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub x: f64,
    pub mode: String,
    pub metric: String,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FigureTable {
    pub rows: Vec<FigureRow>,
    /// One line per omitted (x, mode, metric).
    pub warnings: Vec<String>,
}

/// Tidy rows for one figure family. Metrics undefined at a point are
/// skipped with a warning.
pub fn figure_table(summary: &Summary, family: Family) -> Result<FigureTable, UsageError> {
    let want = family.parameter();
    if summary.parameter != Some(want) {
        return Err(UsageError::FamilyMismatch {
            family: family.name(),
            needs: want.name(),
            found: summary.parameter.map_or("nothing", SweepParameter::name),
        });
    }
    if family == Family::Random && summary.topology != TopologyKind::Random {
        return Err(UsageError::FamilyMismatch {
            family: family.name(),
            needs: "a random topology",
            found: "a star topology",
        });
    }
    let mut t = FigureTable::default();
    for p in &summary.points {
        let Some(x) = p.x else { continue };
        for m in FIGURE_METRICS {
            match p.metric(m) {
                Some(s) => t.rows.push(FigureRow {
                    x,
                    mode: p.mode.label().to_string(),
                    metric: m.to_string(),
                    mean: s.mean,
                    stddev: s.std,
                }),
                None => {
                    let w = format!("{m} undefined for {} at {x}; row omitted", p.mode.label());
                    log::warn!("{w}");
                    t.warnings.push(w);
                }
            }
        }
    }
    Ok(t)
}

pub fn write_figure_csv<W: Write>(table: &FigureTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "mode", "metric", "mean", "stddev"])?;
    for r in &table.rows {
        w.write_record([
            r.x.to_string(),
            r.mode.clone(),
            r.metric.clone(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.stddev),
        ])?;
    }
    w.flush()?;
    Ok(())
}
