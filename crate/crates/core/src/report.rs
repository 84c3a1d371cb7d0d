//! Grouped-bar comparisons of methods across scenarios: CSV plus SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest;
use crate::metrics::ComparisonMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSeries {
    pub name: String,
    /// One entry per scenario; `None` marks an undefined value.
    pub regain: Vec<Option<f64>>,
    pub compression_runs: Vec<Option<f64>>,
    pub compression_cpu: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonPlotData {
    pub scenarios: Vec<String>,
    pub methods: Vec<MethodSeries>,
}

const METRICS: [(&str, &str); 3] = [
    ("regain", "Coverage regain (%)"),
    ("compression_runs", "Compression in runs (x)"),
    ("compression_cpu", "Compression in CPU time (x)"),
];

impl MethodSeries {
    fn series(&self, metric: &str) -> &[Option<f64>] {
        match metric {
            "regain" => &self.regain,
            "compression_runs" => &self.compression_runs,
            _ => &self.compression_cpu,
        }
    }
}

impl ComparisonPlotData {
    /// Assemble from `(scenario, method, metrics)` entries. Scenarios and
    /// methods keep first-appearance order; missing pairs are undefined.
    pub fn from_entries(entries: &[(String, String, ComparisonMetrics)]) -> Result<Self> {
        let mut scenarios: Vec<String> = Vec::new();
        let mut methods: Vec<String> = Vec::new();
        let mut table = BTreeMap::new();
        for (scenario, method, metrics) in entries {
            if !scenarios.contains(scenario) {
                scenarios.push(scenario.clone());
            }
            if !methods.contains(method) {
                methods.push(method.clone());
            }
            if table.insert((scenario.clone(), method.clone()), metrics).is_some() {
                return Err(Error::Validation(format!("duplicate entry for {scenario}/{method}")));
            }
        }
        let methods = methods
            .into_iter()
            .map(|name| {
                let pick = |f: fn(&ComparisonMetrics) -> Option<f64>| {
                    scenarios
                        .iter()
                        .map(|s| table.get(&(s.clone(), name.clone())).and_then(|m| f(m)))
                        .collect()
                };
                MethodSeries {
                    regain: pick(|m| m.coverage_regain_percent),
                    compression_runs: pick(|m| m.compression_runs),
                    compression_cpu: pick(|m| m.compression_cpu),
                    name,
                }
            })
            .collect();
        let data = Self { scenarios, methods };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.methods.is_empty() {
            return Err(Error::Validation("comparison needs at least one scenario and one method".into()));
        }
        for m in &self.methods {
            for (metric, _) in METRICS {
                let s = m.series(metric);
                if s.len() != self.scenarios.len() {
                    return Err(Error::Validation(format!(
                        "method `{}` has {} {metric} values for {} scenarios",
                        m.name,
                        s.len(),
                        self.scenarios.len()
                    )));
                }
                if s.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("method `{}` has a non-finite {metric}", m.name)));
                }
            }
        }
        Ok(())
    }

    pub fn csv(&self, metric: &str) -> String {
        let mut out = String::from("scenario,method,value\n");
        for (i, scenario) in self.scenarios.iter().enumerate() {
            for m in &self.methods {
                let value = m.series(metric)[i].map_or_else(|| "undefined".to_string(), |v| v.to_string());
                writeln!(out, "{scenario},{},{value}", m.name).expect("String write");
            }
        }
        out
    }

    pub fn svg(&self, metric: &str, title: &str) -> String {
        const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];
        let (bar, gap, left, top, plot_h) = (28.0, 24.0, 60.0, 40.0, 220.0);
        let group_w = bar * self.methods.len() as f64 + gap;
        let width = left + group_w * self.scenarios.len() as f64 + 20.0;
        let height = top + plot_h + 70.0 + 18.0 * self.methods.len() as f64;
        let max = self
            .methods
            .iter()
            .flat_map(|m| m.series(metric).iter().flatten())
            .fold(0.0f64, |a, &b| a.max(b));
        let scale = if max > 0.0 { plot_h / max } else { 0.0 };
        let base = top + plot_h;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{left:.0}" y="22" font-size="14">{}</text>"#, escape(title));
        let _ = writeln!(
            s,
            r##"<line x1="{left:.0}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="#333"/>"##,
            width - 10.0
        );
        let _ = writeln!(s, r#"<text x="6" y="{:.1}">{max:.2}</text>"#, top + 4.0);
        let _ = writeln!(s, r#"<text x="6" y="{base:.1}">0</text>"#);
        for (i, scenario) in self.scenarios.iter().enumerate() {
            let x0 = left + gap / 2.0 + group_w * i as f64;
            for (j, m) in self.methods.iter().enumerate() {
                let x = x0 + bar * j as f64;
                let color = PALETTE[j % PALETTE.len()];
                match m.series(metric)[i] {
                    Some(v) => {
                        let h = v * scale;
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{color}"/>"#,
                            base - h,
                            bar - 2.0
                        );
                        let _ = writeln!(
                            s,
                            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{v:.2}</text>"#,
                            x + bar / 2.0 - 1.0,
                            base - h - 3.0
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">n/a</text>"#,
                            x + bar / 2.0 - 1.0,
                            base - 3.0
                        );
                    }
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x0 + bar * self.methods.len() as f64 / 2.0,
                base + 16.0,
                escape(scenario)
            );
        }
        for (j, m) in self.methods.iter().enumerate() {
            let y = base + 40.0 + 18.0 * j as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{left:.0}" y="{:.1}" width="12" height="12" fill="{}"/>"#,
                y - 10.0,
                PALETTE[j % PALETTE.len()]
            );
            let _ = writeln!(s, r#"<text x="{:.0}" y="{y:.1}">{}</text>"#, left + 18.0, escape(&m.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Write `<metric>.csv` and `<metric>.svg` for each of the three metrics.
/// Returns the written paths in write order.
pub fn emit_comparison(data: &ComparisonPlotData, out_dir: &Path) -> Result<Vec<PathBuf>> {
    data.validate()?;
    let mut written = Vec::new();
    for (metric, title) in METRICS {
        let csv = out_dir.join(format!("{metric}.csv"));
        ingest::write_text(&csv, &data.csv(metric))?;
        let svg = out_dir.join(format!("{metric}.svg"));
        ingest::write_text(&svg, &data.svg(metric, title))?;
        written.push(csv);
        written.push(svg);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(s: &str, m: &str, regain: f64) -> (String, String, ComparisonMetrics) {
        let opt = ComparisonMetrics::from_totals(100, 10, 50.0, 4.0, 90.0, 90.0 * regain / 100.0);
        (s.into(), m.into(), opt)
    }

    #[test]
    fn two_by_two_has_four_rows_per_metric() {
        let data = ComparisonPlotData::from_entries(&[
            entry("stage1", "ranking", 100.0),
            entry("stage1", "ml", 99.9),
            entry("stage2", "ranking", 100.0),
            entry("stage2", "ml", 101.2),
        ])
        .unwrap();
        for (metric, _) in METRICS {
            assert_eq!(data.csv(metric).lines().count(), 5);
        }
        let regain = data.csv("regain");
        assert!(regain.contains("stage1,ranking,100\n"));
        assert!(data.svg("regain", "t").starts_with("<svg"));
    }

    #[test]
    fn empty_or_ragged_series_rejected() {
        assert!(ComparisonPlotData::default().validate().is_err());
        assert!(ComparisonPlotData::from_entries(&[]).is_err());
        let mut data = ComparisonPlotData::from_entries(&[entry("s", "m", 100.0)]).unwrap();
        data.methods[0].compression_cpu.push(Some(1.0));
        assert!(data.validate().is_err());
    }

    #[test]
    fn output_is_byte_deterministic() {
        let data = ComparisonPlotData::from_entries(&[entry("a<b", "m", 100.0), entry("c", "n", 98.0)]).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = emit_comparison(&data, d1.path()).unwrap();
        let p2 = emit_comparison(&data, d2.path()).unwrap();
        assert_eq!(p1.len(), 6);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        assert!(std::fs::read_to_string(d1.path().join("regain.svg")).unwrap().contains("a&lt;b"));
    }
}
