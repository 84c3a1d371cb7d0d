//! On-disk artifacts.
//!
//! Regression archives are line oriented: line 1 is a header object carrying
//! the coverage space and control-point declarations, every following line
//! is one run. Model sets, plans and DUT specs are single JSON documents.
//! All writers emit canonical JSON (sorted keys, shortest round-trip
//! floats), so saving a freshly loaded canonical file reproduces it byte for
//! byte.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::{ControlPointDecl, CoverageSpace, Regression, RunRecord};
use crate::error::{Error, Result};
use crate::{par, FORMAT_VERSION};

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveHeader {
    format_version: u32,
    space: CoverageSpace,
    declarations: Vec<ControlPointDecl>,
}

/// A record dropped by lenient loading.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub line: usize,
    pub message: String,
}

/// Compact canonical JSON: keys sorted at every level.
pub fn canonical_line<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&value)?)
}

/// Indented canonical JSON with a trailing newline.
pub fn canonical_document<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn serialize_regression(regression: &Regression) -> Result<String> {
    let header = ArchiveHeader {
        format_version: FORMAT_VERSION,
        space: regression.space.clone(),
        declarations: regression.declarations.clone(),
    };
    let mut out = canonical_line(&header)?;
    out.push('\n');
    for run in &regression.runs {
        out.push_str(&canonical_line(run)?);
        out.push('\n');
    }
    Ok(out)
}

/// Content digest of the canonical archive serialization.
pub fn regression_digest(regression: &Regression) -> Result<String> {
    Ok(digest_bytes(serialize_regression(regression)?.as_bytes()))
}

pub fn save_regression(regression: &Regression, path: &Path) -> Result<()> {
    write_text(path, &serialize_regression(regression)?)
}

pub fn load_regression(path: &Path) -> Result<Regression> {
    parse_regression(&read_text(path)?)
}

/// Strict parse: any invalid record fails the load, reporting how many
/// records were bad and where the first one is.
pub fn parse_regression(text: &str) -> Result<Regression> {
    let (regression, rejected) = parse_regression_lenient(text)?;
    match rejected.first() {
        None => Ok(regression),
        Some(first) => Err(Error::InvalidRecords {
            count: rejected.len(),
            line: first.line,
            message: first.message.clone(),
        }),
    }
}

/// Parse keeping every valid record; invalid records are returned with
/// their line numbers. Header problems are always fatal.
pub fn parse_regression_lenient(text: &str) -> Result<(Regression, Vec<Rejected>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (header_line, header_text) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(Error::Parse {
            line: 1,
            message: "empty archive: missing header".into(),
        })?;
    let header: ArchiveHeader = serde_json::from_str(header_text).map_err(|e| Error::Parse {
        line: header_line,
        message: format!("header: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let base = Regression::empty(header.space, header.declarations)?;

    let records: Vec<(usize, &str)> = lines.filter(|(_, l)| !l.trim().is_empty()).collect();
    let parsed = par::map(&records, |&(line, text)| {
        let run: RunRecord = serde_json::from_str(text).map_err(|e| Rejected {
            line,
            message: e.to_string(),
        })?;
        base.validate_run(&run).map_err(|e| Rejected {
            line,
            message: match e {
                Error::Validation(m) => m,
                other => other.to_string(),
            },
        })?;
        Ok::<_, Rejected>(run)
    });

    let mut runs = Vec::with_capacity(parsed.len());
    let mut rejected = Vec::new();
    for item in parsed {
        match item {
            Ok(run) => runs.push(run),
            Err(r) => rejected.push(r),
        }
    }
    Ok((base.with_runs(runs), rejected))
}

/// Concatenate runs of compatible regressions in input order.
pub fn merge_regressions(regressions: &[Regression]) -> Result<Regression> {
    let first = regressions
        .first()
        .ok_or_else(|| Error::Merge("no regressions given".into()))?;
    let mut runs = Vec::new();
    for (i, other) in regressions.iter().enumerate() {
        let bins = first.space.differences(&other.space);
        if !bins.is_empty() {
            return Err(Error::Merge(format!(
                "input {i} differs in bins: {}",
                bins.join(", ")
            )));
        }
        let controls = declaration_differences(&first.declarations, &other.declarations);
        if !controls.is_empty() {
            return Err(Error::Merge(format!(
                "input {i} differs in control points: {}",
                controls.join(", ")
            )));
        }
        runs.extend(other.runs.iter().cloned());
    }
    Ok(first.with_runs(runs))
}

fn declaration_differences(a: &[ControlPointDecl], b: &[ControlPointDecl]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for decl in a {
        if !b.contains(decl) {
            out.push(decl.name.clone());
        }
    }
    for decl in b {
        if !a.contains(decl) && !out.contains(&decl.name) {
            out.push(decl.name.clone());
        }
    }
    if out.is_empty() && a != b {
        out.push("<declaration order>".into());
    }
    out.sort();
    out
}

/// Implemented by single-document artifacts so loaders can reject
/// foreign versions and run type-specific checks.
pub trait Document: Serialize + DeserializeOwned {
    fn format_version(&self) -> u32;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

pub fn serialize_document<T: Document>(doc: &T) -> Result<String> {
    doc.validate()?;
    canonical_document(doc)
}

pub fn parse_document<T: Document>(text: &str, path: &Path) -> Result<T> {
    let doc: T = serde_json::from_str(text).map_err(|source| Error::Document {
        path: path.to_path_buf(),
        source,
    })?;
    if doc.format_version() != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: doc.format_version(),
            expected: FORMAT_VERSION,
        });
    }
    doc.validate()?;
    Ok(doc)
}

pub fn save_document<T: Document>(doc: &T, path: &Path) -> Result<()> {
    write_text(path, &serialize_document(doc)?)
}

pub fn load_document<T: Document>(path: &Path) -> Result<T> {
    parse_document(&read_text(path)?, path)
}

pub fn document_digest<T: Document>(doc: &T) -> Result<String> {
    Ok(digest_bytes(serialize_document(doc)?.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{ControlValue, CoverageBin, RunStatus};

    fn sample() -> Regression {
        let space = CoverageSpace::new(vec![
            CoverageBin::new("b1"),
            CoverageBin::new("b2").with_weight(2),
        ])
        .unwrap();
        let decls = vec![
            ControlPointDecl::numeric("x", 0.0, 1.0),
            ControlPointDecl::categorical("mode", ["A", "B", "C"]),
        ];
        let mut runs = vec![];
        for i in 0..3u64 {
            let mut run = RunRecord::new(format!("t{i}"), 10 + i, 0.1 * (i + 1) as f64)
                .control("x", 0.3 * i as f64)
                .control("mode", "A")
                .hit("b1", i + 1);
            if i == 2 {
                run.status = RunStatus::Fail;
            }
            runs.push(run);
        }
        Regression::new(space, decls, runs).unwrap()
    }

    #[test]
    fn round_trip_preserves_order_and_bytes() {
        let reg = sample();
        let text = serialize_regression(&reg).unwrap();
        let back = parse_regression(&text).unwrap();
        assert_eq!(back, reg);
        assert_eq!(back.runs[2].test, "t2");
        assert_eq!(serialize_regression(&back).unwrap(), text);
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn keys_are_sorted() {
        let text = serialize_regression(&sample()).unwrap();
        let run_line = text.lines().nth(1).unwrap();
        let keys = ["bins_hit", "controls", "cpu_seconds", "seed", "status", "test"];
        let positions: Vec<usize> = keys
            .iter()
            .map(|k| run_line.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{run_line}");
    }

    #[test]
    fn empty_runs_is_valid() {
        let reg = sample().with_runs(vec![]);
        let text = serialize_regression(&reg).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(parse_regression(&text).unwrap().runs.is_empty());
    }

    #[test]
    fn out_of_domain_category_names_control() {
        let reg = sample();
        let mut text = serialize_regression(&reg).unwrap();
        text = text.replacen("\"mode\":\"A\"", "\"mode\":\"D\"", 1);
        match parse_regression(&text).unwrap_err() {
            Error::InvalidRecords { count, line, message } => {
                assert_eq!(count, 1);
                assert_eq!(line, 2);
                assert!(message.contains("mode"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        let (lenient, rejected) = parse_regression_lenient(&text).unwrap();
        assert_eq!(lenient.runs.len(), 2);
        assert_eq!(rejected.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut lines: Vec<String> = serialize_regression(&sample())
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[2] = "{not json".into();
        let err = parse_regression(&lines.join("\n")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = serialize_regression(&sample())
            .unwrap()
            .replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(matches!(
            parse_regression(&text),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn merge_concatenates_in_order() {
        let a = sample();
        let mut b = sample();
        b.runs.truncate(1);
        b.runs[0].test = "late".into();
        let merged = merge_regressions(&[a.clone(), b]).unwrap();
        assert_eq!(merged.runs.len(), 4);
        assert_eq!(merged.runs[0], a.runs[0]);
        assert_eq!(merged.runs[3].test, "late");
    }

    #[test]
    fn merge_lists_differing_bins() {
        let a = sample();
        let mut b = sample();
        b.space = CoverageSpace::new(vec![CoverageBin::new("b1"), CoverageBin::new("b3")]).unwrap();
        b.runs.clear();
        let err = merge_regressions(&[a, b]).unwrap_err().to_string();
        assert!(err.contains("b2") && err.contains("b3"), "{err}");
    }

    #[test]
    fn merge_lists_differing_controls() {
        let a = sample();
        let mut b = sample();
        b.declarations[0] = ControlPointDecl::numeric("x", 0.0, 2.0);
        let err = merge_regressions(&[a, b]).unwrap_err().to_string();
        assert!(err.contains('x'), "{err}");
    }

    #[test]
    fn large_seeds_survive() {
        let mut reg = sample();
        reg.runs[0].seed = u64::MAX;
        reg.runs[0].controls.insert("x".into(), ControlValue::Number(0.1 + 0.2));
        let back = parse_regression(&serialize_regression(&reg).unwrap()).unwrap();
        assert_eq!(back.runs[0].seed, u64::MAX);
        assert_eq!(back.runs[0].controls["x"], ControlValue::Number(0.1 + 0.2));
    }
}
