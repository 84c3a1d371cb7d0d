//! Goal-driven generation of optimized regressions from per-bin models.
//!
//! A plan has two phases. The replay core is the greedy ranking of the
//! recorded runs, each pinned to its recorded test, seed and control values,
//! so replaying it reproduces the ranked coverage exactly. Exploration runs
//! then target learned bins with constraints proposed by coordinate ascent
//! over the model's inputs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, Narrowing};
use crate::coverage::{ControlPointDecl, Domain, Regression};
use crate::error::{Error, Result};
use crate::ingest::{self, Document};
use crate::learn::{FeatureEncoding, GroupKind, LearnedModel, ModelSet};
use crate::ranking::{self, Objective};
use crate::{par, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalBound {
    TargetCoveragePercent(f64),
    MaxRuns(usize),
    MaxCpuSeconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    #[serde(flatten)]
    pub bound: GoalBound,
    /// Upper limit on planned runs; defaults to four times the original count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_cap: Option<usize>,
}

impl Goal {
    pub fn coverage(percent: f64) -> Self {
        Self { bound: GoalBound::TargetCoveragePercent(percent), safety_cap: None }
    }

    pub fn runs(n: usize) -> Self {
        Self { bound: GoalBound::MaxRuns(n), safety_cap: None }
    }

    pub fn cpu(seconds: f64) -> Self {
        Self { bound: GoalBound::MaxCpuSeconds(seconds), safety_cap: None }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.safety_cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.bound {
            GoalBound::TargetCoveragePercent(c) => c.is_finite() && c > 0.0 && c <= 100.0,
            GoalBound::MaxRuns(n) => n > 0,
            GoalBound::MaxCpuSeconds(s) => s.is_finite() && s > 0.0,
        };
        if !ok {
            return Err(Error::Validation(format!("goal `{self}` is out of range")));
        }
        if self.safety_cap == Some(0) {
            return Err(Error::Validation("safety cap must be positive".into()));
        }
        Ok(())
    }

    /// One step of the tightening schedule: budgets grow by half (rounded
    /// up), coverage targets close half the gap to 100.
    pub fn tightened(&self) -> Self {
        let bound = match self.bound {
            GoalBound::TargetCoveragePercent(c) => GoalBound::TargetCoveragePercent(c + (100.0 - c) / 2.0),
            GoalBound::MaxRuns(n) => GoalBound::MaxRuns(n + n.div_ceil(2)),
            GoalBound::MaxCpuSeconds(s) => GoalBound::MaxCpuSeconds(s * 1.5),
        };
        Self { bound, safety_cap: self.safety_cap }
    }
}

impl FromStr for Goal {
    type Err = Error;

    /// `cov=C`, `runs=N` or `cpu=S`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("bad goal `{s}`; use cov=C, runs=N or cpu=S"));
        let (kind, value) = s.split_once('=').ok_or_else(bad)?;
        let goal = match kind {
            "cov" => Goal::coverage(value.parse().map_err(|_| bad())?),
            "runs" => Goal::runs(value.parse().map_err(|_| bad())?),
            "cpu" => Goal::cpu(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        goal.validate()?;
        Ok(goal)
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bound {
            GoalBound::TargetCoveragePercent(c) => write!(f, "cov={c}"),
            GoalBound::MaxRuns(n) => write!(f, "runs={n}"),
            GoalBound::MaxCpuSeconds(s) => write!(f, "cpu={s}"),
        }
    }
}

/// Tunables for constraint proposal and exploration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub grid_points: usize,
    pub sweeps: usize,
    /// Width of a numeric narrowing as a share of the declared range.
    pub narrowing_fraction: f64,
    /// Exploration stops targeting a bin once its expected hit probability
    /// from exploration runs reaches this level.
    pub confidence: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            grid_points: 17,
            sweeps: 2,
            narrowing_fraction: 0.5,
            confidence: 0.9,
        }
    }
}

impl PlanConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_points < 2 || self.sweeps == 0 {
            return Err(Error::Validation("grid needs 2+ points and at least one sweep".into()));
        }
        if !(self.narrowing_fraction > 0.0 && self.narrowing_fraction <= 1.0) {
            return Err(Error::Validation("narrowing fraction must lie in (0, 1]".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Validation("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub test: String,
    pub constraints: ConstraintSet,
    /// Model output at the final ascent point.
    pub probability: f64,
    /// The encoded ascent point.
    pub point: Vec<f64>,
}

/// Coordinate ascent over (test, control points) maximizing one bin's
/// predicted hit probability. Empty test lists yield an empty test name.
pub fn propose_constraints(model: &LearnedModel, encoding: &FeatureEncoding, config: &PlanConfig) -> Proposal {
    let groups = encoding.groups();
    let mut x = Vec::with_capacity(encoding.width());
    for group in &groups {
        let fill = match group.kind {
            GroupKind::Test => 1.0 / group.len as f64,
            GroupKind::Control => 0.5,
        };
        x.extend(std::iter::repeat_n(fill, group.len));
    }
    let mut test = None;
    let mut constraints = ConstraintSet::new();
    let p = |x: &[f64]| model.network.probability(x);

    for _ in 0..config.sweeps {
        for group in &groups {
            let span = group.start..group.start + group.len;
            match group.kind {
                GroupKind::Test => {
                    if group.len == 0 {
                        continue;
                    }
                    let mut best = (0, f64::NEG_INFINITY);
                    for i in 0..group.len {
                        one_hot(&mut x[span.clone()], i);
                        let score = p(&x);
                        if score > best.1 {
                            best = (i, score);
                        }
                    }
                    one_hot(&mut x[span], best.0);
                    test = Some(best.0);
                }
                GroupKind::Control => {
                    let decl = encoding
                        .declarations
                        .iter()
                        .find(|d| d.name == group.name)
                        .expect("feature groups mirror declarations");
                    match &decl.domain {
                        Domain::NumericRange { lo, hi } => {
                            let i = group.start;
                            let n = config.grid_points;
                            let scores: Vec<f64> = (0..n)
                                .map(|j| {
                                    x[i] = j as f64 / (n - 1) as f64;
                                    p(&x)
                                })
                                .collect();
                            let (arg, top) = argmax(&scores);
                            let mean = scores.iter().sum::<f64>() / n as f64;
                            if top - mean > 1e-12 {
                                let g = arg as f64 / (n - 1) as f64;
                                let center = lo + (hi - lo) * g;
                                let half = (hi - lo) * config.narrowing_fraction / 2.0;
                                constraints.insert(
                                    &decl.name,
                                    Narrowing::Range {
                                        lo: (center - half).max(*lo),
                                        hi: (center + half).min(*hi),
                                    },
                                );
                                x[i] = g;
                            } else {
                                constraints.0.remove(&decl.name);
                                x[i] = 0.5;
                            }
                        }
                        Domain::Categorical { values } => {
                            let scores: Vec<f64> = (0..values.len())
                                .map(|v| {
                                    one_hot(&mut x[span.clone()], v);
                                    p(&x)
                                })
                                .collect();
                            let (arg, top) = argmax(&scores);
                            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                            if top - mean > 1e-12 {
                                constraints.insert(&decl.name, Narrowing::Values(vec![values[arg].clone()]));
                                one_hot(&mut x[span], arg);
                            } else {
                                constraints.0.remove(&decl.name);
                                x[span].fill(1.0 / values.len() as f64);
                            }
                        }
                    }
                }
            }
        }
    }
    Proposal {
        test: test.map(|i| encoding.tests[i].clone()).unwrap_or_default(),
        constraints,
        probability: p(&x),
        point: x,
    }
}

fn one_hot(slot: &mut [f64], hot: usize) {
    for (k, v) in slot.iter_mut().enumerate() {
        *v = if k == hot { 1.0 } else { 0.0 };
    }
}

fn argmax(scores: &[f64]) -> (usize, f64) {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Replay,
    Explore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub test: String,
    pub seed: u64,
    pub constraints: ConstraintSet,
    pub targeted_bins: Vec<String>,
    pub expected_gain: f64,
    pub phase: Phase,
    /// Index of the recorded run a replay entry reproduces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_digest: String,
    pub model_digest: String,
    pub goal: Goal,
    pub plan_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedRegression {
    pub format_version: u32,
    pub provenance: Provenance,
    pub declarations: Vec<ControlPointDecl>,
    pub runs: Vec<PlannedRun>,
    pub expected_coverage_percent: f64,
    pub warnings: Vec<String>,
}

impl Document for OptimizedRegression {
    fn format_version(&self) -> u32 {
        self.format_version
    }

    fn validate(&self) -> Result<()> {
        self.provenance.goal.validate()?;
        for decl in &self.declarations {
            decl.validate()?;
        }
        for (k, run) in self.runs.iter().enumerate() {
            let fail = |m: &str| Error::Validation(format!("planned run {k}: {m}"));
            run.constraints.validate(&self.declarations).map_err(|e| fail(&e.to_string()))?;
            if !(run.expected_gain.is_finite() && run.expected_gain > 0.0) {
                return Err(fail("expected gain must be positive"));
            }
            if !run.constraints.is_empty() && run.targeted_bins.is_empty() {
                return Err(fail("constrained run targets no bins"));
            }
            if (run.phase == Phase::Replay) != run.source_index.is_some() {
                return Err(fail("only replay runs carry a source index"));
            }
        }
        let limit = match (self.provenance.goal.bound, self.provenance.goal.safety_cap) {
            (GoalBound::MaxRuns(n), Some(cap)) => n.min(cap),
            (GoalBound::MaxRuns(n), None) => n,
            (_, cap) => cap.unwrap_or(usize::MAX),
        };
        if self.runs.len() > limit {
            return Err(Error::Validation(format!(
                "plan has {} runs, goal allows {limit}",
                self.runs.len()
            )));
        }
        Ok(())
    }
}

impl OptimizedRegression {
    pub fn replay_count(&self) -> usize {
        self.runs.iter().filter(|r| r.phase == Phase::Replay).count()
    }
}

struct Budget {
    goal: Goal,
    cap: usize,
    runs: usize,
    cpu: f64,
}

impl Budget {
    /// Whether one more run costing `cpu` fits.
    fn admits(&self, cpu: f64) -> bool {
        if self.runs >= self.cap {
            return false;
        }
        match self.goal.bound {
            GoalBound::MaxRuns(n) => self.runs < n,
            GoalBound::MaxCpuSeconds(s) => self.cpu + cpu <= s,
            GoalBound::TargetCoveragePercent(_) => true,
        }
    }

    fn spend(&mut self, cpu: f64) {
        self.runs += 1;
        self.cpu += cpu;
    }
}

/// Build an optimized regression for `goal` from `models` trained on (a
/// regression compatible with) `original`.
pub fn plan(
    models: &ModelSet,
    goal: Goal,
    original: &Regression,
    plan_seed: u64,
    config: &PlanConfig,
) -> Result<OptimizedRegression> {
    goal.validate()?;
    config.validate()?;
    models.check_matches(original)?;
    let space = &original.space;
    let bins = space.bins();
    let mut budget = Budget {
        goal,
        cap: goal.safety_cap.unwrap_or(4 * original.runs.len()).max(1),
        runs: 0,
        cpu: 0.0,
    };

    let objective = match goal.bound {
        GoalBound::TargetCoveragePercent(c) => Objective::UntilCoverage(c),
        _ => Objective::CoverAll,
    };
    let ranked = ranking::rank(original, objective)?;
    let mut runs = Vec::new();
    let mut counts = vec![0u64; bins.len()];
    for (&index, &gain) in ranked.indices.iter().zip(&ranked.gains) {
        let run = &original.runs[index];
        if !budget.admits(run.cpu_seconds) {
            break;
        }
        budget.spend(run.cpu_seconds);
        let mut targeted = Vec::new();
        for (id, &h) in &run.bins_hit {
            let b = space.index_of(id).expect("validated run");
            if h > 0 && counts[b] < bins[b].at_least {
                targeted.push(id.clone());
            }
            counts[b] += h;
        }
        runs.push(PlannedRun {
            test: run.test.clone(),
            seed: run.seed,
            constraints: ConstraintSet::pin(&run.controls),
            targeted_bins: targeted,
            expected_gain: gain,
            phase: Phase::Replay,
            source_index: Some(index),
        });
    }
    let floor = space.satisfied(&counts);

    let mut test_cpu: HashMap<&str, (f64, usize)> = HashMap::new();
    for run in &original.runs {
        let e = test_cpu.entry(run.test.as_str()).or_default();
        e.0 += run.cpu_seconds;
        e.1 += 1;
    }
    let mean_cpu = if original.runs.is_empty() {
        0.0
    } else {
        test_cpu.values().map(|e| e.0).sum::<f64>() / original.runs.len() as f64
    };
    let estimate_cpu = |test: &str| test_cpu.get(test).map_or(mean_cpu, |e| e.0 / e.1 as f64);

    let mut order: Vec<usize> = (0..bins.len()).filter(|&b| models.bins[b].learned().is_some()).collect();
    order.sort_by(|&a, &b| bins[b].weight.cmp(&bins[a].weight).then_with(|| bins[a].id.cmp(&bins[b].id)));
    let proposals: BTreeMap<usize, (Proposal, Vec<f64>)> = order
        .iter()
        .copied()
        .zip(par::map(&order, |&b| {
            let model = models.bins[b].learned().expect("filtered to learned bins");
            let proposal = propose_constraints(model, &models.encoding, config);
            let probs = models.probabilities_at(&proposal.point);
            (proposal, probs)
        }))
        .collect();

    // Hit probability per bin from exploration runs alone.
    let mut explored = vec![0.0f64; bins.len()];
    let combined = |explored: &[f64], b: usize| if floor[b] { 1.0 } else { explored[b] };
    let expected_percent = |explored: &[f64]| {
        let w: f64 = bins
            .iter()
            .enumerate()
            .map(|(b, bin)| bin.weight as f64 * combined(explored, b))
            .sum();
        100.0 * w / space.total_weight() as f64
    };
    let coverage_met = |explored: &[f64]| match goal.bound {
        GoalBound::TargetCoveragePercent(c) => expected_percent(explored) >= c,
        _ => false,
    };

    let mut next_seed = plan_seed;
    'passes: loop {
        let mut added = false;
        for &b in &order {
            if coverage_met(&explored) {
                break 'passes;
            }
            if explored[b] >= config.confidence {
                continue;
            }
            let (proposal, probs) = &proposals[&b];
            let cpu = estimate_cpu(&proposal.test);
            if !budget.admits(cpu) {
                break 'passes;
            }
            let gain: f64 = bins
                .iter()
                .enumerate()
                .map(|(j, bin)| bin.weight as f64 * (1.0 - explored[j]) * probs[j])
                .sum();
            if gain.is_nan() || gain <= 1e-12 {
                continue;
            }
            let targeted: Vec<String> = bins
                .iter()
                .enumerate()
                .filter(|&(j, _)| probs[j] > 0.0 && explored[j] < 1.0)
                .filter(|&(j, _)| j == b || probs[j] >= 0.5)
                .map(|(_, bin)| bin.id.clone())
                .collect();
            for (j, p) in probs.iter().enumerate() {
                explored[j] = 1.0 - (1.0 - explored[j]) * (1.0 - p);
            }
            budget.spend(cpu);
            runs.push(PlannedRun {
                test: proposal.test.clone(),
                seed: next_seed,
                constraints: proposal.constraints.clone(),
                targeted_bins: targeted,
                expected_gain: gain,
                phase: Phase::Explore,
                source_index: None,
            });
            next_seed = next_seed.wrapping_add(1);
            added = true;
        }
        if !added {
            break;
        }
    }

    let expected_coverage_percent = expected_percent(&explored);
    let mut warnings = Vec::new();
    if let GoalBound::TargetCoveragePercent(c) = goal.bound {
        if expected_coverage_percent < c {
            warnings.push(format!(
                "shortfall: expected coverage {expected_coverage_percent} is below the {c} target"
            ));
        }
    }
    let uncovered: Vec<&str> = (0..bins.len())
        .filter(|&b| combined(&explored, b) < config.confidence)
        .map(|b| bins[b].id.as_str())
        .collect();
    if !uncovered.is_empty() {
        warnings.push(format!("bins not expected to be covered: {}", uncovered.join(", ")));
    }

    let plan = OptimizedRegression {
        format_version: FORMAT_VERSION,
        provenance: Provenance {
            source_digest: ingest::regression_digest(original)?,
            model_digest: ingest::document_digest(models)?,
            goal,
            plan_seed,
        },
        declarations: original.declarations.clone(),
        runs,
        expected_coverage_percent,
        warnings,
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::network::{Network, Shape};
    use crate::learn::{train, TrainConfig};
    use crate::synthdut::{generate_archive, BinSpec, Condition, DutSpec, TestSpec};

    fn encoding() -> FeatureEncoding {
        FeatureEncoding {
            tests: vec!["a".into(), "b".into()],
            declarations: vec![
                ControlPointDecl::numeric("x", 0.0, 10.0),
                ControlPointDecl::categorical("mode", ["A", "B", "C"]),
            ],
        }
    }

    fn logistic(weights: Vec<f64>, bias: f64) -> LearnedModel {
        LearnedModel {
            network: Network::Logistic { weights, bias },
            epochs: 1,
            train_loss: 0.0,
            positive_rate: 0.5,
            heldout_accuracy: None,
            heldout_auc: None,
        }
    }

    #[test]
    fn goal_parsing_and_tightening() {
        assert_eq!("runs=10".parse::<Goal>().unwrap(), Goal::runs(10));
        assert_eq!("cov=98.5".parse::<Goal>().unwrap().to_string(), "cov=98.5");
        for bad in ["runs=0", "cov=0", "cov=101", "cpu=-1", "cpu=nan", "fast", "x=1"] {
            assert!(bad.parse::<Goal>().is_err(), "{bad}");
        }
        assert_eq!(Goal::runs(5).tightened(), Goal::runs(8));
        assert_eq!(Goal::coverage(90.0).tightened(), Goal::coverage(95.0));
        assert_eq!(Goal::cpu(10.0).tightened(), Goal::cpu(15.0));
    }

    #[test]
    fn goal_serializes_with_one_bound() {
        let text = serde_json::to_string(&Goal::runs(3).with_cap(9)).unwrap();
        assert_eq!(text, r#"{"max_runs":3,"safety_cap":9}"#);
        let back: Goal = serde_json::from_str(&text).unwrap();
        assert_eq!(back, Goal::runs(3).with_cap(9));
    }

    #[test]
    fn zero_control_weights_leave_everything_open() {
        let enc = encoding();
        let p = propose_constraints(&logistic(vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0], 0.0), &enc, &PlanConfig::default());
        assert!(p.constraints.is_empty());
        assert_eq!(p.test, "b");
    }

    #[test]
    fn monotone_model_narrows_to_the_top() {
        let enc = encoding();
        let p = propose_constraints(&logistic(vec![0.0, 0.0, 8.0, 0.0, 0.0, 3.0], -4.0), &enc, &PlanConfig::default());
        assert_eq!(p.constraints.get("x"), Some(&Narrowing::Range { lo: 7.5, hi: 10.0 }));
        assert_eq!(p.constraints.get("mode"), Some(&Narrowing::Values(vec!["C".into()])));
        assert_eq!(p.test, "a");
        let z: f64 = 8.0 + 3.0 - 4.0;
        assert!((p.probability - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    }

    #[test]
    fn interior_peak_centers_the_interval() {
        let enc = FeatureEncoding {
            tests: vec!["t".into()],
            declarations: vec![ControlPointDecl::numeric("x", 0.0, 1.0)],
        };
        let shape = Shape { inputs: 2, hidden: 2 };
        // Two ReLU units forming a tent that peaks at x = 0.5.
        let params = vec![0.0, 1.0, 0.0, -1.0, -0.5, 0.5, -10.0, -10.0, 5.0];
        let model = LearnedModel {
            network: Network::from_params(shape, &params),
            ..logistic(vec![], 0.0)
        };
        let p = propose_constraints(&model, &enc, &PlanConfig::default());
        assert_eq!(p.constraints.get("x"), Some(&Narrowing::Range { lo: 0.25, hi: 0.75 }));
    }

    fn threshold_dut() -> DutSpec {
        DutSpec::new(
            vec![
                ControlPointDecl::numeric("x", 0.0, 1.0),
                ControlPointDecl::categorical("mode", ["A", "B", "C"]),
            ],
            vec![TestSpec::new("t0", 2.0), TestSpec::new("t1", 1.0)],
            vec![
                BinSpec::new("always", vec![Condition::Ge { cp: "x".into(), value: 0.0 }]),
                BinSpec::new("high", vec![Condition::Gt { cp: "x".into(), value: 0.8 }]),
                BinSpec::new("mode_c", vec![Condition::Eq { cp: "mode".into(), value: "C".into() }]),
                BinSpec::new("never", vec![Condition::Gt { cp: "x".into(), value: 2.0 }]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn learned_threshold_and_category_proposals() {
        let dut = threshold_dut();
        let reg = generate_archive(&dut, 150, 3).unwrap();
        let models = train(&reg, &TrainConfig::default()).unwrap();
        let cfg = PlanConfig::default();
        let high = propose_constraints(models.model("high").unwrap().learned().unwrap(), &models.encoding, &cfg);
        match high.constraints.get("x") {
            Some(Narrowing::Range { lo, hi }) => assert!(*lo >= 0.55 && *hi == 1.0, "{lo} {hi}"),
            other => panic!("{other:?}"),
        }
        assert!(high.probability > 0.9, "{}", high.probability);
        let mode = propose_constraints(models.model("mode_c").unwrap().learned().unwrap(), &models.encoding, &cfg);
        assert_eq!(mode.constraints.get("mode"), Some(&Narrowing::Values(vec!["C".into()])));
    }

    #[test]
    fn plan_is_deterministic_and_respects_bounds() {
        let dut = threshold_dut();
        let reg = generate_archive(&dut, 100, 3).unwrap();
        let models = train(&reg, &TrainConfig::default()).unwrap();
        let cfg = PlanConfig::default();
        let a = plan(&models, Goal::runs(6), &reg, 77, &cfg).unwrap();
        let b = plan(&models, Goal::runs(6), &reg, 77, &cfg).unwrap();
        assert_eq!(ingest::serialize_document(&a).unwrap(), ingest::serialize_document(&b).unwrap());
        assert!(a.runs.len() <= 6);
        assert!(a.runs.iter().all(|r| r.expected_gain > 0.0));
        let explore: Vec<_> = a.runs.iter().filter(|r| r.phase == Phase::Explore).collect();
        assert!(!explore.is_empty());
        assert_eq!(explore[0].seed, 77);
        let capped = plan(&models, Goal::coverage(100.0).with_cap(2), &reg, 0, &cfg).unwrap();
        assert!(capped.runs.len() <= 2);
        let cpu = plan(&models, Goal::cpu(3.0), &reg, 0, &cfg).unwrap();
        assert!(cpu.runs.len() <= 3);
    }

    #[test]
    fn unreachable_bin_yields_shortfall_warning() {
        let dut = threshold_dut();
        let reg = generate_archive(&dut, 100, 3).unwrap();
        let models = train(&reg, &TrainConfig::default()).unwrap();
        let p = plan(&models, Goal::coverage(100.0), &reg, 1, &PlanConfig::default()).unwrap();
        assert!(p.warnings.iter().any(|w| w.starts_with("shortfall")));
        assert!(p.warnings.iter().any(|w| w.contains("never")));
    }

    #[test]
    fn unconditional_bins_plan_to_the_ranked_core() {
        let dut = DutSpec::new(
            vec![ControlPointDecl::numeric("x", 0.0, 1.0)],
            vec![TestSpec::new("t", 1.0)],
            vec![
                BinSpec::new("a", vec![]),
                BinSpec::new("b", vec![Condition::Ge { cp: "x".into(), value: 0.0 }]),
            ],
        )
        .unwrap();
        let reg = generate_archive(&dut, 20, 0).unwrap();
        let models = train(&reg, &TrainConfig::default()).unwrap();
        let p = plan(&models, Goal::runs(20), &reg, 5, &PlanConfig::default()).unwrap();
        let ranked = ranking::rank(&reg, Objective::CoverAll).unwrap();
        let sources: Vec<usize> = p.runs.iter().filter_map(|r| r.source_index).collect();
        assert_eq!(sources, ranked.indices);
        assert_eq!(p.runs.len(), ranked.len());
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn plan_rejects_foreign_models() {
        let dut = threshold_dut();
        let reg = generate_archive(&dut, 30, 3).unwrap();
        let models = train(&reg, &TrainConfig::default()).unwrap();
        let mut other = reg.clone();
        other.declarations.pop();
        for run in &mut other.runs {
            run.controls.remove("mode");
        }
        assert!(matches!(
            plan(&models, Goal::runs(5), &other, 0, &PlanConfig::default()),
            Err(Error::SpaceMismatch(_))
        ));
    }
}
