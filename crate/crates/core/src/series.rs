//! Time-indexed metric records and their CSV form
//! (`run_id,metric,epoch,value`).

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub run_id: String,
    pub metric: String,
    pub epoch: f64,
    pub value: f64,
}

/// Records keyed uniquely by `(run, metric, epoch)`.
#[derive(Clone, Debug, Default)]
pub struct MetricSeries {
    records: Vec<MetricRecord>,
    keys: HashSet<(String, String, u64)>,
}

impl PartialEq for MetricSeries {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

pub const CSV_HEADER: &str = "run_id,metric,epoch,value";

impl MetricSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, run_id: &str, metric: &str, epoch: f64, value: f64) -> Result<()> {
        if run_id.contains(',') || metric.contains(',') {
            return Err(Error::invalid("run ids and metric names may not contain commas"));
        }
        let key = (run_id.to_string(), metric.to_string(), epoch.to_bits());
        if !self.keys.insert(key) {
            return Err(Error::invalid(format!("duplicate record ({run_id}, {metric}, {epoch})")));
        }
        self.records.push(MetricRecord {
            run_id: run_id.to_string(),
            metric: metric.to_string(),
            epoch,
            value,
        });
        Ok(())
    }

    pub fn extend(&mut self, other: &MetricSeries) -> Result<()> {
        for r in &other.records {
            self.push(&r.run_id, &r.metric, r.epoch, r.value)?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(epoch, value)` pairs of one metric, in insertion order.
    pub fn values(&self, metric: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.run_id, r.metric, r.epoch, r.value));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::invalid("metric CSV header mismatch"));
        }
        let mut series = MetricSeries::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("metric CSV line {}: `{line}`", n + 2));
            if parts.len() != 4 {
                return Err(bad());
            }
            let epoch = parts[2].parse().map_err(|_| bad())?;
            let value = parts[3].parse().map_err(|_| bad())?;
            series.push(parts[0], parts[1], epoch, value)?;
        }
        Ok(series)
    }
}

/// Centered moving average over a `±window` epoch neighbourhood, per
/// `(run, metric)`. Raw series are never modified.
pub fn smooth(series: &MetricSeries, window: f64) -> Result<MetricSeries> {
    let mut out = MetricSeries::new();
    for r in series.records() {
        let near: Vec<f64> = series
            .records()
            .iter()
            .filter(|o| o.run_id == r.run_id && o.metric == r.metric && (o.epoch - r.epoch).abs() <= window)
            .map(|o| o.value)
            .collect();
        out.push(&r.run_id, &r.metric, r.epoch, near.iter().sum::<f64>() / near.len() as f64)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_keys_rejected() {
        let mut s = MetricSeries::new();
        s.push("r", "test_err", 1.0, 0.5).unwrap();
        s.push("r", "test_err", 2.0, 0.4).unwrap();
        assert!(s.push("r", "test_err", 1.0, 0.3).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut s = MetricSeries::new();
        s.push("a", "m", 1.0 / 3.0, 0.1 + 0.2).unwrap();
        s.push("a", "m", 2.0 / 3.0, 1e-9).unwrap();
        let back = MetricSeries::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
        assert!(s.to_csv().starts_with("run_id,metric,epoch,value\n"));
    }

    #[test]
    fn smoothing_averages_window() {
        let mut s = MetricSeries::new();
        for e in 0..5 {
            s.push("a", "m", e as f64, e as f64).unwrap();
        }
        let sm = smooth(&s, 1.0).unwrap();
        assert_eq!(sm.values("m"), vec![(0.0, 0.5), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 3.5)]);
    }
}
