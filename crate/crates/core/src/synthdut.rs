//! Synthetic constrained-random testbench with known ground truth.
//!
//! A run samples each control point from its own SplitMix64 stream, seeded
//! from a master stream keyed by `stable_hash(test) ^ seed`: the master
//! yields one child seed per control point in declaration order, then one
//! for CPU jitter. Numeric points draw `lo + (hi - lo) * u` with `u` from
//! the top 53 bits; categorical points pick an index by rejection sampling.
//! A bin is hit once when its conjunctive predicate holds and the test's
//! gate set includes it.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, Narrowing};
use crate::coverage::{
    ControlPointDecl, ControlValue, CoverageBin, CoverageSpace, Domain, Regression, RunRecord,
    RunStatus,
};
use crate::error::{Error, Result};
use crate::generate::OptimizedRegression;
use crate::ingest::Document;
use crate::rng::{stable_hash, SplitMix64};
use crate::{par, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Condition {
    Lt { cp: String, value: f64 },
    Le { cp: String, value: f64 },
    Gt { cp: String, value: f64 },
    Ge { cp: String, value: f64 },
    InRange { cp: String, lo: f64, hi: f64 },
    Eq { cp: String, value: String },
    InSet { cp: String, values: Vec<String> },
    Test { name: String },
}

impl Condition {
    pub fn holds(&self, test: &str, controls: &BTreeMap<String, ControlValue>) -> bool {
        let number = |cp: &str| match controls.get(cp) {
            Some(ControlValue::Number(v)) => Some(*v),
            _ => None,
        };
        let label = |cp: &str| match controls.get(cp) {
            Some(ControlValue::Label(v)) => Some(v.as_str()),
            _ => None,
        };
        match self {
            Condition::Lt { cp, value } => number(cp).is_some_and(|v| v < *value),
            Condition::Le { cp, value } => number(cp).is_some_and(|v| v <= *value),
            Condition::Gt { cp, value } => number(cp).is_some_and(|v| v > *value),
            Condition::Ge { cp, value } => number(cp).is_some_and(|v| v >= *value),
            Condition::InRange { cp, lo, hi } => number(cp).is_some_and(|v| *lo <= v && v <= *hi),
            Condition::Eq { cp, value } => label(cp) == Some(value.as_str()),
            Condition::InSet { cp, values } => label(cp).is_some_and(|v| values.iter().any(|x| x == v)),
            Condition::Test { name } => test == name,
        }
    }

    fn control(&self) -> Option<&str> {
        match self {
            Condition::Lt { cp, .. }
            | Condition::Le { cp, .. }
            | Condition::Gt { cp, .. }
            | Condition::Ge { cp, .. }
            | Condition::InRange { cp, .. }
            | Condition::Eq { cp, .. }
            | Condition::InSet { cp, .. } => Some(cp),
            Condition::Test { .. } => None,
        }
    }

    fn is_numeric(&self) -> bool {
        matches!(
            self,
            Condition::Lt { .. }
                | Condition::Le { .. }
                | Condition::Gt { .. }
                | Condition::Ge { .. }
                | Condition::InRange { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub name: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, ControlValue>,
    /// Bins this test can hit; absent means every bin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<String>>,
    pub base_cpu_seconds: f64,
    #[serde(default)]
    pub cpu_jitter: f64,
}

impl TestSpec {
    pub fn new(name: impl Into<String>, base_cpu_seconds: f64) -> Self {
        Self {
            name: name.into(),
            overrides: BTreeMap::new(),
            gates: None,
            base_cpu_seconds,
            cpu_jitter: 0.0,
        }
    }

    pub fn gates<S: Into<String>>(mut self, bins: impl IntoIterator<Item = S>) -> Self {
        self.gates = Some(bins.into_iter().map(Into::into).collect());
        self
    }

    pub fn jitter(mut self, fraction: f64) -> Self {
        self.cpu_jitter = fraction;
        self
    }

    pub fn override_control(mut self, name: impl Into<String>, value: impl Into<ControlValue>) -> Self {
        self.overrides.insert(name.into(), value.into());
        self
    }

    fn gated(&self, bin: &str) -> bool {
        self.gates.as_ref().is_none_or(|g| g.iter().any(|b| b == bin))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    #[serde(flatten)]
    pub bin: CoverageBin,
    #[serde(default)]
    pub predicate: Vec<Condition>,
    /// Hitting a buggy bin fails the run.
    #[serde(default)]
    pub buggy: bool,
}

impl BinSpec {
    pub fn new(id: impl Into<String>, predicate: Vec<Condition>) -> Self {
        Self {
            bin: CoverageBin::new(id),
            predicate,
            buggy: false,
        }
    }

    pub fn buggy(mut self) -> Self {
        self.buggy = true;
        self
    }

    pub fn weight(mut self, weight: u64) -> Self {
        self.bin.weight = weight;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutSpec {
    pub format_version: u32,
    pub declarations: Vec<ControlPointDecl>,
    pub tests: Vec<TestSpec>,
    pub bins: Vec<BinSpec>,
}

impl Document for DutSpec {
    fn format_version(&self) -> u32 {
        self.format_version
    }

    fn validate(&self) -> Result<()> {
        Regression::empty(self.space()?, self.declarations.clone())?;
        let bin_ids: HashSet<&str> = self.bins.iter().map(|b| b.bin.id.as_str()).collect();
        let mut names = HashSet::new();
        for test in &self.tests {
            if !names.insert(test.name.as_str()) {
                return Err(Error::Validation(format!("duplicate test `{}`", test.name)));
            }
            if !(test.base_cpu_seconds.is_finite() && test.base_cpu_seconds >= 0.0) {
                return Err(Error::Validation(format!("test `{}` has invalid base CPU", test.name)));
            }
            if !(test.cpu_jitter.is_finite() && test.cpu_jitter >= 0.0) {
                return Err(Error::Validation(format!("test `{}` has invalid CPU jitter", test.name)));
            }
            for (cp, value) in &test.overrides {
                self.declaration(cp)
                    .ok_or_else(|| Error::Validation(format!("test `{}` overrides undeclared `{cp}`", test.name)))?
                    .check_value(value)?;
            }
            for gate in test.gates.iter().flatten() {
                if !bin_ids.contains(gate.as_str()) {
                    return Err(Error::Validation(format!(
                        "test `{}` gates unknown bin `{gate}`",
                        test.name
                    )));
                }
            }
        }
        if self.tests.is_empty() {
            return Err(Error::Validation("DUT spec declares no tests".into()));
        }
        for bin in &self.bins {
            for cond in &bin.predicate {
                self.check_condition(&bin.bin.id, cond)?;
            }
        }
        Ok(())
    }
}

impl DutSpec {
    pub fn new(declarations: Vec<ControlPointDecl>, tests: Vec<TestSpec>, bins: Vec<BinSpec>) -> Result<Self> {
        let spec = Self {
            format_version: FORMAT_VERSION,
            declarations,
            tests,
            bins,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn space(&self) -> Result<CoverageSpace> {
        CoverageSpace::new(self.bins.iter().map(|b| b.bin.clone()).collect())
    }

    pub fn declaration(&self, name: &str) -> Option<&ControlPointDecl> {
        self.declarations.iter().find(|d| d.name == name)
    }

    pub fn test(&self, name: &str) -> Result<&TestSpec> {
        self.tests
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTest(name.to_string()))
    }

    fn check_condition(&self, bin: &str, cond: &Condition) -> Result<()> {
        let fail = |msg: String| Error::Validation(format!("bin `{bin}`: {msg}"));
        if let Condition::Test { name } = cond {
            self.test(name).map_err(|_| fail(format!("predicate names unknown test `{name}`")))?;
            return Ok(());
        }
        let cp = cond.control().unwrap_or_default();
        let decl = self
            .declaration(cp)
            .ok_or_else(|| fail(format!("predicate references undeclared `{cp}`")))?;
        match (&decl.domain, cond) {
            (Domain::NumericRange { .. }, c) if c.is_numeric() => Ok(()),
            (Domain::Categorical { values }, Condition::Eq { value, .. }) if values.contains(value) => Ok(()),
            (Domain::Categorical { values }, Condition::InSet { values: set, .. })
                if set.iter().all(|v| values.contains(v)) =>
            {
                Ok(())
            }
            _ => Err(fail(format!("predicate on `{cp}` does not fit its domain"))),
        }
    }

    /// Ground truth: bins hit by `test` with these control values.
    pub fn evaluate(&self, test: &TestSpec, controls: &BTreeMap<String, ControlValue>) -> BTreeMap<String, u64> {
        self.bins
            .iter()
            .filter(|b| test.gated(&b.bin.id))
            .filter(|b| b.predicate.iter().all(|c| c.holds(&test.name, controls)))
            .map(|b| (b.bin.id.clone(), 1))
            .collect()
    }
}

fn sample(decl: &ControlPointDecl, narrowing: Option<&Narrowing>, rng: &mut SplitMix64) -> Result<ControlValue> {
    match (&decl.domain, narrowing) {
        (Domain::NumericRange { lo, hi }, n) => {
            let (a, b) = match n {
                Some(Narrowing::Range { lo: a, hi: b }) => (lo.max(*a), hi.min(*b)),
                None => (*lo, *hi),
                Some(_) => return Err(Error::Validation(format!("constraint kind mismatch on `{}`", decl.name))),
            };
            if a > b {
                return Err(Error::Validation(format!("empty effective interval on `{}`", decl.name)));
            }
            let u = rng.next_f64();
            Ok(ControlValue::Number(a + (b - a) * u))
        }
        (Domain::Categorical { values }, n) => {
            let choices: Vec<&String> = match n {
                Some(Narrowing::Values(subset)) => values.iter().filter(|v| subset.contains(v)).collect(),
                None => values.iter().collect(),
                Some(_) => return Err(Error::Validation(format!("constraint kind mismatch on `{}`", decl.name))),
            };
            if choices.is_empty() {
                return Err(Error::Validation(format!("empty effective value set on `{}`", decl.name)));
            }
            Ok(ControlValue::Label(choices[rng.next_index(choices.len())].clone()))
        }
    }
}

/// Execute one run. Deterministic in (spec, test, seed, constraints).
pub fn simulate_run(spec: &DutSpec, test: &str, seed: u64, constraints: &ConstraintSet) -> Result<RunRecord> {
    let test = spec.test(test)?;
    constraints.validate(&spec.declarations)?;
    let mut master = SplitMix64::new(stable_hash(&test.name) ^ seed);
    let mut controls = BTreeMap::new();
    for decl in &spec.declarations {
        let mut stream = SplitMix64::new(master.next_u64());
        let value = match test.overrides.get(&decl.name) {
            Some(v) => v.clone(),
            None => sample(decl, constraints.get(&decl.name), &mut stream)?,
        };
        controls.insert(decl.name.clone(), value);
    }
    let mut cpu_stream = SplitMix64::new(master.next_u64());
    let cpu_seconds = test.base_cpu_seconds * (1.0 + test.cpu_jitter * cpu_stream.next_f64());
    let bins_hit = spec.evaluate(test, &controls);
    let failed = spec
        .bins
        .iter()
        .any(|b| b.buggy && bins_hit.contains_key(&b.bin.id));
    Ok(RunRecord {
        test: test.name.clone(),
        seed,
        cpu_seconds,
        status: if failed { RunStatus::Fail } else { RunStatus::Pass },
        controls,
        bins_hit,
    })
}

/// Unconstrained archive, test-major, run `k` seeded with `base_seed + k`.
pub fn generate_archive(spec: &DutSpec, seeds_per_test: usize, base_seed: u64) -> Result<Regression> {
    if seeds_per_test == 0 {
        return Err(Error::Validation("seeds_per_test must be positive".into()));
    }
    let total = spec.tests.len() * seeds_per_test;
    let free = ConstraintSet::new();
    let runs = par::map_range(total, |k| {
        let test = &spec.tests[k / seeds_per_test];
        simulate_run(spec, &test.name, base_seed.wrapping_add(k as u64), &free)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Regression::new(spec.space()?, spec.declarations.clone(), runs)
}

/// Execute every planned run in plan order.
pub fn replay_plan(spec: &DutSpec, plan: &OptimizedRegression) -> Result<Regression> {
    let runs = par::map(&plan.runs, |planned| {
        simulate_run(spec, &planned.test, planned.seed, &planned.constraints)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Regression::new(spec.space()?, spec.declarations.clone(), runs)
}

/// Knobs for [`random_spec`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpecShape {
    pub numeric: usize,
    pub categorical: usize,
    pub tests: usize,
    pub bins: usize,
    pub max_conditions: usize,
}

impl Default for RandomSpecShape {
    fn default() -> Self {
        Self {
            numeric: 3,
            categorical: 2,
            tests: 4,
            bins: 12,
            max_conditions: 3,
        }
    }
}

/// A seeded random DUT: thresholds and value subsets are drawn so that most
/// bins are reachable, and each test gates a random majority of the bins.
pub fn random_spec(seed: u64, shape: RandomSpecShape) -> DutSpec {
    let mut rng = SplitMix64::new(seed);
    let mut declarations = Vec::new();
    for i in 0..shape.numeric {
        declarations.push(ControlPointDecl::numeric(format!("x{i}"), 0.0, 1.0));
    }
    for i in 0..shape.categorical {
        let n = 2 + rng.next_index(3);
        declarations.push(ControlPointDecl::categorical(
            format!("c{i}"),
            (0..n).map(|v| format!("v{v}")),
        ));
    }
    let mut bins = Vec::new();
    for b in 0..shape.bins {
        let atoms = 1 + rng.next_index(shape.max_conditions.max(1));
        let mut predicate = Vec::new();
        for _ in 0..atoms {
            let decl = &declarations[rng.next_index(declarations.len())];
            let cond = match &decl.domain {
                Domain::NumericRange { .. } => {
                    let t = (rng.next_f64() * 0.9 * 1000.0).round() / 1000.0;
                    if rng.next_index(2) == 0 {
                        Condition::Gt { cp: decl.name.clone(), value: t }
                    } else {
                        Condition::Le { cp: decl.name.clone(), value: 1.0 - t }
                    }
                }
                Domain::Categorical { values } => Condition::Eq {
                    cp: decl.name.clone(),
                    value: values[rng.next_index(values.len())].clone(),
                },
            };
            predicate.push(cond);
        }
        let weight = 1 + rng.next_index(3) as u64;
        bins.push(BinSpec::new(format!("bin{b:02}"), predicate).weight(weight));
    }
    let tests = (0..shape.tests)
        .map(|t| {
            let gates: Vec<String> = bins
                .iter()
                .filter(|_| rng.next_index(4) != 0)
                .map(|b| b.bin.id.clone())
                .collect();
            let base = 1.0 + rng.next_index(20) as f64;
            TestSpec::new(format!("test{t}"), base).gates(gates).jitter(0.25)
        })
        .collect();
    DutSpec {
        format_version: FORMAT_VERSION,
        declarations,
        tests,
        bins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::coverage_percent;

    fn spec() -> DutSpec {
        DutSpec::new(
            vec![
                ControlPointDecl::numeric("x", 0.0, 1.0),
                ControlPointDecl::categorical("mode", ["A", "B", "C"]),
            ],
            vec![
                TestSpec::new("t0", 10.0).jitter(0.5),
                TestSpec::new("t1", 5.0).gates(["always"]).override_control("mode", "C"),
            ],
            vec![
                BinSpec::new("always", vec![Condition::Ge { cp: "x".into(), value: 0.0 }]),
                BinSpec::new("high", vec![Condition::Gt { cp: "x".into(), value: 0.8 }]),
                BinSpec::new(
                    "corner",
                    vec![
                        Condition::Gt { cp: "x".into(), value: 0.95 },
                        Condition::Eq { cp: "mode".into(), value: "C".into() },
                    ],
                )
                .buggy(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn tautology_hits_every_gated_run() {
        let reg = generate_archive(&spec(), 50, 1).unwrap();
        assert!(reg.runs.iter().all(|r| r.bins_hit.contains_key("always")));
        assert!(reg.runs[50..].iter().all(|r| r.bins_hit.len() == 1));
    }

    #[test]
    fn simulate_is_deterministic() {
        let s = spec();
        let a = simulate_run(&s, "t0", 99, &ConstraintSet::new()).unwrap();
        let b = simulate_run(&s, "t0", 99, &ConstraintSet::new()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_run(&s, "t0", 100, &ConstraintSet::new()).unwrap());
    }

    #[test]
    fn narrowed_interval_raises_hit_rate() {
        let s = spec();
        let mut c = ConstraintSet::new();
        c.insert("x", Narrowing::Range { lo: 0.8, hi: 1.0 });
        let hits = (0..1000u64)
            .filter(|&seed| {
                simulate_run(&s, "t0", seed, &c)
                    .unwrap()
                    .bins_hit
                    .contains_key("high")
            })
            .count();
        // Only x == 0.8 exactly misses, which has probability zero.
        assert!(hits >= 950, "{hits}");
    }

    #[test]
    fn overrides_beat_sampling_and_gates_filter() {
        let s = spec();
        for seed in 0..50 {
            let run = simulate_run(&s, "t1", seed, &ConstraintSet::new()).unwrap();
            assert_eq!(run.controls["mode"], ControlValue::Label("C".into()));
            assert!(!run.bins_hit.contains_key("corner"));
        }
    }

    #[test]
    fn cpu_jitter_stays_in_band() {
        let reg = generate_archive(&spec(), 100, 7).unwrap();
        for run in &reg.runs[..100] {
            assert!((10.0..15.0).contains(&run.cpu_seconds));
        }
        assert!(reg.runs[100..].iter().all(|r| r.cpu_seconds == 5.0));
    }

    #[test]
    fn buggy_bin_fails_the_run() {
        let s = spec();
        let mut c = ConstraintSet::new();
        c.insert("x", Narrowing::Range { lo: 0.96, hi: 1.0 });
        c.insert("mode", Narrowing::Values(vec!["C".into()]));
        let run = simulate_run(&s, "t0", 3, &c).unwrap();
        assert!(run.bins_hit.contains_key("corner"));
        assert_eq!(run.status, RunStatus::Fail);
    }

    #[test]
    fn recorded_values_reproduce_recorded_bins() {
        let s = spec();
        let reg = generate_archive(&s, 40, 11).unwrap();
        for run in &reg.runs {
            let test = s.test(&run.test).unwrap();
            assert_eq!(s.evaluate(test, &run.controls), run.bins_hit);
            let replayed = simulate_run(&s, &run.test, run.seed, &ConstraintSet::pin(&run.controls)).unwrap();
            assert_eq!(replayed.bins_hit, run.bins_hit);
            assert_eq!(replayed.controls, run.controls);
        }
    }

    #[test]
    fn archive_shape_and_seeds() {
        let reg = generate_archive(&spec(), 10, 1000).unwrap();
        assert_eq!(reg.runs.len(), 20);
        assert_eq!(reg.runs[0].seed, 1000);
        assert_eq!(reg.runs[19].seed, 1019);
        assert_eq!(reg.runs[10].test, "t1");
        let one = DutSpec::new(spec().declarations, vec![TestSpec::new("t", 1.0)], spec().bins).unwrap();
        assert_eq!(generate_archive(&one, 1, 0).unwrap().runs.len(), 1);
        assert!(generate_archive(&one, 0, 0).is_err());
    }

    #[test]
    fn larger_archive_covers_at_least_its_prefix() {
        let reg = generate_archive(&random_spec(5, RandomSpecShape::default()), 75, 0).unwrap();
        assert_eq!(reg.runs.len(), 300);
        let prefix = coverage_percent(&reg.space, &reg.runs[..100]).unwrap();
        assert!(reg.coverage_percent().unwrap() >= prefix);
    }

    #[test]
    fn errors_for_unknown_test_and_bad_constraint() {
        let s = spec();
        assert!(matches!(
            simulate_run(&s, "nope", 0, &ConstraintSet::new()),
            Err(Error::UnknownTest(_))
        ));
        let mut c = ConstraintSet::new();
        c.insert("x", Narrowing::Range { lo: 0.5, hi: 2.0 });
        assert!(simulate_run(&s, "t0", 0, &c).is_err());
    }

    #[test]
    fn spec_validation_catches_bad_references() {
        let mut s = spec();
        s.bins[1].predicate.push(Condition::Eq { cp: "x".into(), value: "A".into() });
        assert!(s.validate().is_err());
        let mut s = spec();
        s.tests[0].gates = Some(vec!["ghost".into()]);
        assert!(s.validate().is_err());
        let mut s = spec();
        s.bins[0].predicate.push(Condition::Test { name: "ghost".into() });
        assert!(s.validate().is_err());
    }

    #[test]
    fn random_specs_validate() {
        for seed in 0..20 {
            random_spec(seed, RandomSpecShape::default()).validate().unwrap();
        }
    }
}
