use std::io::Write;

use super::PckCurve;

/// First line of every CSV this crate writes.
pub const CSV_VERSION_LINE: &str = "# htt-csv v1";

/// One line of the metric report: `metric,space,hand,value`.
///
/// `space` is `camera` or `root-aligned`; `hand` is `single`, `left` or
/// `right`. Classification accuracies use `-` in both columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub space: String,
    pub hand: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, space: impl Into<String>, hand: impl Into<String>, value: f64) -> Self {
        MetricRow {
            metric: metric.into(),
            space: space.into(),
            hand: hand.into(),
            value,
        }
    }
}

pub fn write_metric_csv(out: &mut impl Write, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    writeln!(out, "metric,space,hand,value")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.metric, r.space, r.hand, r.value)?;
    }
    Ok(())
}

pub fn write_pck_csv(out: &mut impl Write, curve: &PckCurve) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    writeln!(out, "threshold_mm,pck")?;
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        writeln!(out, "{t},{v}")?;
    }
    Ok(())
}
