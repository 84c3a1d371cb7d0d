//! Coverage regain and compression factors between two regressions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coverage::{total_cpu, Regression};
use crate::error::{Error, Result};

/// Ratios are `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub coverage_regain_percent: Option<f64>,
    pub compression_runs: Option<f64>,
    pub compression_cpu: Option<f64>,
    pub original_runs: usize,
    pub optimized_runs: usize,
    pub original_cpu_seconds: f64,
    pub optimized_cpu_seconds: f64,
    pub original_coverage_percent: f64,
    pub optimized_coverage_percent: f64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

impl ComparisonMetrics {
    pub fn from_totals(
        original_runs: usize,
        optimized_runs: usize,
        original_cpu_seconds: f64,
        optimized_cpu_seconds: f64,
        original_coverage_percent: f64,
        optimized_coverage_percent: f64,
    ) -> Self {
        Self {
            coverage_regain_percent: ratio(optimized_coverage_percent, original_coverage_percent).map(|r| r * 100.0),
            compression_runs: ratio(original_runs as f64, optimized_runs as f64),
            compression_cpu: ratio(original_cpu_seconds, optimized_cpu_seconds),
            original_runs,
            optimized_runs,
            original_cpu_seconds,
            optimized_cpu_seconds,
            original_coverage_percent,
            optimized_coverage_percent,
        }
    }

    fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("compression_cpu", self.compression_cpu),
            ("compression_runs", self.compression_runs),
            ("coverage_regain_percent", self.coverage_regain_percent),
            ("optimized_coverage_percent", Some(self.optimized_coverage_percent)),
            ("optimized_cpu_seconds", Some(self.optimized_cpu_seconds)),
            ("optimized_runs", Some(self.optimized_runs as f64)),
            ("original_coverage_percent", Some(self.original_coverage_percent)),
            ("original_cpu_seconds", Some(self.original_cpu_seconds)),
            ("original_runs", Some(self.original_runs as f64)),
        ]
    }

    /// `name,value` rows in name order; undefined ratios print `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,value\n");
        for (name, value) in self.rows() {
            match value {
                Some(v) => writeln!(out, "{name},{v}"),
                None => writeln!(out, "{name},undefined"),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = std::collections::BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line == "name,value") {
                continue;
            }
            let bad = |message: String| Error::Parse { line: n + 1, message };
            let (name, value) = line
                .split_once(',')
                .ok_or_else(|| bad("expected `name,value`".into()))?;
            let parsed = if value == "undefined" {
                None
            } else {
                Some(value.parse::<f64>().map_err(|_| bad(format!("bad number `{value}`")))?)
            };
            values.insert(name.to_string(), parsed);
        }
        let get = |name: &str| -> Result<Option<f64>> {
            values
                .get(name)
                .copied()
                .ok_or_else(|| Error::Validation(format!("metrics CSV lacks `{name}`")))
        };
        let required = |name: &str| -> Result<f64> {
            get(name)?.ok_or_else(|| Error::Validation(format!("metric `{name}` must be defined")))
        };
        let count = |name: &str| -> Result<usize> {
            let v = required(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Validation(format!("metric `{name}` must be a count")));
            }
            Ok(v as usize)
        };
        Ok(Self {
            coverage_regain_percent: get("coverage_regain_percent")?,
            compression_runs: get("compression_runs")?,
            compression_cpu: get("compression_cpu")?,
            original_runs: count("original_runs")?,
            optimized_runs: count("optimized_runs")?,
            original_cpu_seconds: required("original_cpu_seconds")?,
            optimized_cpu_seconds: required("optimized_cpu_seconds")?,
            original_coverage_percent: required("original_coverage_percent")?,
            optimized_coverage_percent: required("optimized_coverage_percent")?,
        })
    }
}

pub fn compare(original: &Regression, optimized: &Regression) -> Result<ComparisonMetrics> {
    let diffs = original.space.differences(&optimized.space);
    if !diffs.is_empty() {
        return Err(Error::SpaceMismatch(diffs.join("; ")));
    }
    Ok(ComparisonMetrics::from_totals(
        original.runs.len(),
        optimized.runs.len(),
        total_cpu(&original.runs),
        total_cpu(&optimized.runs),
        original.coverage_percent()?,
        optimized.coverage_percent()?,
    ))
}
