//! Coverage universe, run records and weighted bin coverage.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageBin {
    pub id: String,
    #[serde(default)]
    pub group: String,
    #[serde(default = "one")]
    pub weight: u64,
    #[serde(default = "one")]
    pub at_least: u64,
}

impl CoverageBin {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            group: String::new(),
            weight: 1,
            at_least: 1,
        }
    }

    pub fn with_weight(mut self, weight: u64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_at_least(mut self, at_least: u64) -> Self {
        self.at_least = at_least;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    bins: Vec<CoverageBin>,
}

/// Ordered, non-empty set of bins. Iteration follows declaration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct CoverageSpace {
    bins: Vec<CoverageBin>,
    index: HashMap<String, usize>,
}

impl PartialEq for CoverageSpace {
    fn eq(&self, other: &Self) -> bool {
        self.bins == other.bins
    }
}

impl TryFrom<RawSpace> for CoverageSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        CoverageSpace::new(raw.bins)
    }
}

impl From<CoverageSpace> for RawSpace {
    fn from(space: CoverageSpace) -> Self {
        RawSpace { bins: space.bins }
    }
}

impl CoverageSpace {
    pub fn new(bins: Vec<CoverageBin>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Validation("coverage space has no bins".into()));
        }
        let mut index = HashMap::with_capacity(bins.len());
        for (i, bin) in bins.iter().enumerate() {
            if bin.weight == 0 {
                return Err(Error::Validation(format!("bin `{}` has weight 0", bin.id)));
            }
            if bin.at_least == 0 {
                return Err(Error::Validation(format!("bin `{}` has at_least 0", bin.id)));
            }
            if index.insert(bin.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate bin id `{}`", bin.id)));
            }
        }
        Ok(Self { bins, index })
    }

    pub fn bins(&self) -> &[CoverageBin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn total_weight(&self) -> u64 {
        self.bins.iter().map(|b| b.weight).sum()
    }

    /// Accumulated hit counts per bin (declaration order) across `runs`.
    pub fn accumulate<'a, I>(&self, runs: I) -> Result<Vec<u64>>
    where
        I: IntoIterator<Item = &'a RunRecord>,
    {
        let mut counts = vec![0u64; self.bins.len()];
        for run in runs {
            for (id, hits) in &run.bins_hit {
                let idx = self
                    .index_of(id)
                    .ok_or_else(|| Error::Validation(format!("unknown bin id `{id}`")))?;
                counts[idx] = counts[idx].saturating_add(*hits);
            }
        }
        Ok(counts)
    }

    /// Which bins meet `at_least` given accumulated counts.
    pub fn satisfied(&self, counts: &[u64]) -> Vec<bool> {
        self.bins
            .iter()
            .zip(counts)
            .map(|(bin, &c)| c >= bin.at_least)
            .collect()
    }

    pub fn satisfied_weight(&self, satisfied: &[bool]) -> u64 {
        self.bins
            .iter()
            .zip(satisfied)
            .filter(|(_, &s)| s)
            .map(|(b, _)| b.weight)
            .sum()
    }

    pub fn percent_of_weight(&self, weight: u64) -> f64 {
        100.0 * weight as f64 / self.total_weight() as f64
    }

    /// Bin ids present in one space but not the other, or declared with
    /// different attributes.
    pub fn differences(&self, other: &CoverageSpace) -> Vec<String> {
        let mut out = BTreeSet::new();
        for bin in &self.bins {
            match other.index_of(&bin.id) {
                Some(j) if other.bins[j] == *bin => {}
                _ => {
                    out.insert(bin.id.clone());
                }
            }
        }
        for bin in &other.bins {
            match self.index_of(&bin.id) {
                Some(i) if self.bins[i] == *bin => {}
                _ => {
                    out.insert(bin.id.clone());
                }
            }
        }
        out.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    NumericRange { lo: f64, hi: f64 },
    Categorical { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPointDecl {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

impl ControlPointDecl {
    pub fn numeric(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            domain: Domain::NumericRange { lo, hi },
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            domain: Domain::Categorical {
                values: values.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.domain {
            Domain::NumericRange { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::Validation(format!(
                        "control point `{}` has invalid range [{lo}, {hi}]",
                        self.name
                    )));
                }
            }
            Domain::Categorical { values } => {
                if values.is_empty() {
                    return Err(Error::Validation(format!(
                        "control point `{}` has no values",
                        self.name
                    )));
                }
                let distinct: HashSet<&String> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(Error::Validation(format!(
                        "control point `{}` has duplicate values",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, value: &ControlValue) -> bool {
        match (&self.domain, value) {
            (Domain::NumericRange { lo, hi }, ControlValue::Number(v)) => *lo <= *v && *v <= *hi,
            (Domain::Categorical { values }, ControlValue::Label(v)) => values.contains(v),
            _ => false,
        }
    }

    pub(crate) fn check_value(&self, value: &ControlValue) -> Result<()> {
        if self.contains(value) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "control `{}` value {} outside declared domain",
                self.name, value
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlValue {
    Number(f64),
    Label(String),
}

impl std::fmt::Display for ControlValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlValue::Number(v) => write!(f, "{v}"),
            ControlValue::Label(s) => write!(f, "\"{s}\""),
        }
    }
}

impl From<f64> for ControlValue {
    fn from(v: f64) -> Self {
        ControlValue::Number(v)
    }
}

impl From<&str> for ControlValue {
    fn from(v: &str) -> Self {
        ControlValue::Label(v.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub test: String,
    pub seed: u64,
    pub cpu_seconds: f64,
    pub status: RunStatus,
    #[serde(default)]
    pub controls: BTreeMap<String, ControlValue>,
    #[serde(default)]
    pub bins_hit: BTreeMap<String, u64>,
}

impl RunRecord {
    pub fn new(test: impl Into<String>, seed: u64, cpu_seconds: f64) -> Self {
        Self {
            test: test.into(),
            seed,
            cpu_seconds,
            status: RunStatus::Pass,
            controls: BTreeMap::new(),
            bins_hit: BTreeMap::new(),
        }
    }

    pub fn hit(mut self, bin: impl Into<String>, count: u64) -> Self {
        *self.bins_hit.entry(bin.into()).or_insert(0) += count;
        self
    }

    pub fn control(mut self, name: impl Into<String>, value: impl Into<ControlValue>) -> Self {
        self.controls.insert(name.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub space: CoverageSpace,
    pub declarations: Vec<ControlPointDecl>,
    pub runs: Vec<RunRecord>,
}

impl Regression {
    /// Builds and fully validates a regression.
    pub fn new(
        space: CoverageSpace,
        declarations: Vec<ControlPointDecl>,
        runs: Vec<RunRecord>,
    ) -> Result<Self> {
        let regression = Self::empty(space, declarations)?;
        for (i, run) in runs.iter().enumerate() {
            regression
                .validate_run(run)
                .map_err(|e| Error::Validation(format!("run {i}: {}", strip(&e))))?;
        }
        Ok(Self { runs, ..regression })
    }

    /// A regression with no runs; validates the declarations.
    pub fn empty(space: CoverageSpace, declarations: Vec<ControlPointDecl>) -> Result<Self> {
        let mut names = HashSet::new();
        for decl in &declarations {
            decl.validate()?;
            if !names.insert(decl.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate control point `{}`",
                    decl.name
                )));
            }
        }
        Ok(Self {
            space,
            declarations,
            runs: Vec::new(),
        })
    }

    pub fn declaration(&self, name: &str) -> Option<&ControlPointDecl> {
        self.declarations.iter().find(|d| d.name == name)
    }

    pub fn validate_run(&self, run: &RunRecord) -> Result<()> {
        if !(run.cpu_seconds.is_finite() && run.cpu_seconds >= 0.0) {
            return Err(Error::Validation(format!(
                "cpu_seconds {} is not a non-negative number",
                run.cpu_seconds
            )));
        }
        for id in run.bins_hit.keys() {
            if self.space.index_of(id).is_none() {
                return Err(Error::Validation(format!("unknown bin id `{id}`")));
            }
        }
        for (name, value) in &run.controls {
            let decl = self
                .declaration(name)
                .ok_or_else(|| Error::Validation(format!("undeclared control `{name}`")))?;
            decl.check_value(value)?;
        }
        Ok(())
    }

    /// Same space and declarations, chosen runs in the given order.
    pub fn with_runs(&self, runs: Vec<RunRecord>) -> Regression {
        Regression {
            space: self.space.clone(),
            declarations: self.declarations.clone(),
            runs,
        }
    }

    pub fn coverage_percent(&self) -> Result<f64> {
        coverage_percent(&self.space, &self.runs)
    }

    /// Distinct test names in first-appearance order.
    pub fn distinct_tests(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for run in &self.runs {
            if seen.insert(run.test.as_str()) {
                out.push(run.test.clone());
            }
        }
        out
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Validation(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Percent of total bin weight whose accumulated hits reach `at_least`.
pub fn coverage_percent<'a, I>(space: &CoverageSpace, runs: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a RunRecord>,
{
    let counts = space.accumulate(runs)?;
    let satisfied = space.satisfied(&counts);
    Ok(space.percent_of_weight(space.satisfied_weight(&satisfied)))
}

/// Bins meeting their threshold after summing hits across `runs`.
pub fn hit_set<'a, I>(space: &CoverageSpace, runs: I) -> Result<BTreeSet<String>>
where
    I: IntoIterator<Item = &'a RunRecord>,
{
    let counts = space.accumulate(runs)?;
    Ok(space
        .bins()
        .iter()
        .zip(counts)
        .filter(|(bin, c)| *c >= bin.at_least)
        .map(|(bin, _)| bin.id.clone())
        .collect())
}

pub fn total_cpu<'a, I>(runs: I) -> f64
where
    I: IntoIterator<Item = &'a RunRecord>,
{
    runs.into_iter().map(|r| r.cpu_seconds).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space4() -> CoverageSpace {
        CoverageSpace::new(["b1", "b2", "b3", "b4"].map(CoverageBin::new).to_vec()).unwrap()
    }

    #[test]
    fn three_of_four_unit_bins() {
        let runs = vec![
            RunRecord::new("t", 0, 1.0).hit("b1", 1).hit("b2", 1),
            RunRecord::new("t", 1, 1.0).hit("b3", 4),
        ];
        assert_eq!(coverage_percent(&space4(), &runs).unwrap(), 75.0);
    }

    #[test]
    fn full_and_empty() {
        let runs = vec![RunRecord::new("t", 0, 1.0)
            .hit("b1", 1)
            .hit("b2", 1)
            .hit("b3", 1)
            .hit("b4", 1)];
        assert_eq!(coverage_percent(&space4(), &runs).unwrap(), 100.0);
        assert_eq!(coverage_percent(&space4(), &[]).unwrap(), 0.0);
    }

    #[test]
    fn unknown_bin_is_named() {
        let runs = vec![RunRecord::new("t", 0, 1.0).hit("nope", 1)];
        let err = coverage_percent(&space4(), &runs).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn at_least_threshold_and_accumulation() {
        let space = CoverageSpace::new(vec![CoverageBin::new("b1").with_at_least(2)]).unwrap();
        let twice = vec![RunRecord::new("t", 0, 1.0).hit("b1", 2)];
        assert_eq!(hit_set(&space, &twice).unwrap(), BTreeSet::from(["b1".to_string()]));
        let split = vec![
            RunRecord::new("t", 0, 1.0).hit("b1", 1),
            RunRecord::new("t", 1, 1.0).hit("b1", 1),
        ];
        assert_eq!(hit_set(&space, &split).unwrap().len(), 1);
        assert!(hit_set(&space, &split[..1]).unwrap().is_empty());
        assert!(hit_set(&space, &[]).unwrap().is_empty());
    }

    #[test]
    fn weights_count() {
        let space = CoverageSpace::new(vec![
            CoverageBin::new("a").with_weight(3),
            CoverageBin::new("b"),
        ])
        .unwrap();
        let runs = vec![RunRecord::new("t", 0, 1.0).hit("a", 1)];
        assert_eq!(coverage_percent(&space, &runs).unwrap(), 75.0);
    }

    #[test]
    fn failed_runs_count_like_passed_runs() {
        let mut failed = RunRecord::new("t", 0, 1.0).hit("b1", 1);
        failed.status = RunStatus::Fail;
        assert_eq!(coverage_percent(&space4(), [&failed]).unwrap(), 25.0);
    }

    #[test]
    fn cpu_totals() {
        let runs = vec![RunRecord::new("t", 0, 1.5), RunRecord::new("t", 1, 2.5)];
        assert_eq!(total_cpu(&runs), 4.0);
        assert_eq!(total_cpu(&[]), 0.0);
        let stage_one: Vec<RunRecord> = (0..260)
            .map(|i| RunRecord::new("t", i, 43_200.0 / 260.0))
            .collect();
        assert!((total_cpu(&stage_one) - 43_200.0).abs() < 1e-6);
    }

    #[test]
    fn space_rejects_bad_bins() {
        assert!(CoverageSpace::new(vec![]).is_err());
        assert!(CoverageSpace::new(vec![CoverageBin::new("a"), CoverageBin::new("a")]).is_err());
        assert!(CoverageSpace::new(vec![CoverageBin::new("a").with_weight(0)]).is_err());
        assert!(CoverageSpace::new(vec![CoverageBin::new("a").with_at_least(0)]).is_err());
    }

    #[test]
    fn regression_validates_controls() {
        let decls = vec![
            ControlPointDecl::numeric("x", 0.0, 10.0),
            ControlPointDecl::categorical("mode", ["A", "B", "C"]),
        ];
        let good = RunRecord::new("t", 0, 1.0).control("x", 2.5).control("mode", "B");
        assert!(Regression::new(space4(), decls.clone(), vec![good]).is_ok());
        let bad = RunRecord::new("t", 0, 1.0).control("mode", "D");
        let err = Regression::new(space4(), decls.clone(), vec![bad]).unwrap_err();
        assert!(err.to_string().contains("mode"));
        let undeclared = RunRecord::new("t", 0, 1.0).control("y", 1.0);
        assert!(Regression::new(space4(), decls, vec![undeclared]).is_err());
    }

    fn arb_runs() -> impl Strategy<Value = Vec<RunRecord>> {
        let run = proptest::collection::btree_map(0usize..6, 1u64..3, 0..4).prop_map(|hits| {
            let mut r = RunRecord::new("t", 0, 1.0);
            for (b, c) in hits {
                r = r.hit(format!("b{b}"), c);
            }
            r
        });
        proptest::collection::vec(run, 0..12)
    }

    fn space6() -> CoverageSpace {
        CoverageSpace::new(
            (0..6)
                .map(|i| CoverageBin::new(format!("b{i}")).with_at_least(1 + (i % 3) as u64))
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn coverage_is_monotone_in_runs(runs in arb_runs(), split in 0usize..12) {
            let space = space6();
            let k = split.min(runs.len());
            let part = coverage_percent(&space, &runs[..k]).unwrap();
            let full = coverage_percent(&space, &runs).unwrap();
            prop_assert!(part <= full);
            prop_assert!((0.0..=100.0).contains(&full));
        }

        #[test]
        fn union_hit_set_contains_parts(runs in arb_runs(), split in 0usize..12) {
            let space = space6();
            let k = split.min(runs.len());
            let a = hit_set(&space, &runs[..k]).unwrap();
            let b = hit_set(&space, &runs[k..]).unwrap();
            let all = hit_set(&space, &runs).unwrap();
            prop_assert!(a.union(&b).all(|id| all.contains(id)));
        }
    }
}
