//! Optimize, evaluate, tighten: the outer loop around train/plan/replay.
//!
//! A state directory holds `digests.json`, `models.json`, one
//! `plan-<k>.json` per iteration and `outcome.json`. Re-running with
//! unchanged inputs returns the stored outcome without any work; a changed
//! goal or plan setting reuses the stored models when the archive and
//! training settings are unchanged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coverage::Regression;
use crate::error::{Error, Result};
use crate::generate::{plan, Goal, OptimizedRegression, PlanConfig};
use crate::ingest::{self, Document};
use crate::learn::{train, ModelSet, TrainConfig};
use crate::metrics::{compare, ComparisonMetrics};
use crate::synthdut::{replay_plan, DutSpec};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub regain_threshold_percent: f64,
    pub max_iterations: usize,
    pub plan_seed: u64,
    pub train: TrainConfig,
    pub plan: PlanConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            regain_threshold_percent: 99.0,
            max_iterations: 5,
            plan_seed: 0,
            train: TrainConfig::default(),
            plan: PlanConfig::default(),
        }
    }
}

impl LoopConfig {
    fn validate(&self) -> Result<()> {
        let t = self.regain_threshold_percent;
        if !(t > 0.0 && t <= 100.0) {
            return Err(Error::Validation(format!("regain threshold {t} must lie in (0, 100]")));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digests {
    pub archive: String,
    pub dut_spec: String,
    /// Covers the goal and loop settings.
    pub request: String,
}

impl Document for Digests {
    fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Accepted,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub goal: Goal,
    pub plan_digest: String,
    pub planned_runs: usize,
    pub regain_percent: Option<f64>,
    pub metrics: ComparisonMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub format_version: u32,
    pub status: LoopStatus,
    pub iterations: Vec<IterationRecord>,
    /// 1-based index of the highest-regain iteration (earliest on ties).
    pub best_iteration: usize,
    pub recommendation: String,
}

impl Document for LoopOutcome {
    fn format_version(&self) -> u32 {
        self.format_version
    }

    fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() || self.best_iteration == 0 || self.best_iteration > self.iterations.len() {
            return Err(Error::Validation("loop outcome has no valid best iteration".into()));
        }
        Ok(())
    }
}

/// What a call to [`run_loop`] did besides producing the outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRun {
    pub outcome: LoopOutcome,
    pub plans: Vec<OptimizedRegression>,
    pub cached: bool,
    pub trainings: usize,
}

fn request_digest(goal: &Goal, config: &LoopConfig) -> Result<String> {
    let text = ingest::canonical_line(&(goal, config))?;
    Ok(ingest::digest_bytes(text.as_bytes()))
}

pub fn input_digests(archive: &Regression, dut: &DutSpec, goal: &Goal, config: &LoopConfig) -> Result<Digests> {
    Ok(Digests {
        archive: ingest::regression_digest(archive)?,
        dut_spec: ingest::document_digest(dut)?,
        request: request_digest(goal, config)?,
    })
}

/// True iff the archive or the DUT spec differs from the recorded digests.
pub fn needs_refresh(previous: &Digests, archive: &Regression, dut: &DutSpec) -> Result<bool> {
    Ok(previous.archive != ingest::regression_digest(archive)?
        || previous.dut_spec != ingest::document_digest(dut)?)
}

fn iteration_met(regain: Option<f64>, threshold: f64) -> bool {
    regain.is_some_and(|r| r >= threshold)
}

pub fn run_loop(
    archive: &Regression,
    dut: &DutSpec,
    initial_goal: Goal,
    config: &LoopConfig,
    state_dir: Option<&Path>,
) -> Result<LoopRun> {
    config.validate()?;
    initial_goal.validate()?;
    dut.validate()?;
    let digests = input_digests(archive, dut, &initial_goal, config)?;

    let digest_path = state_dir.map(|d| d.join("digests.json"));
    let outcome_path = state_dir.map(|d| d.join("outcome.json"));
    let models_path = state_dir.map(|d| d.join("models.json"));
    if let (Some(dp), Some(op)) = (&digest_path, &outcome_path) {
        if dp.exists() && op.exists() {
            let previous: Digests = ingest::load_document(dp)?;
            if previous == digests {
                let outcome: LoopOutcome = ingest::load_document(op)?;
                let plans = (1..=outcome.iterations.len())
                    .map(|k| ingest::load_document(&state_dir.expect("paired").join(format!("plan-{k}.json"))))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(LoopRun { outcome, plans, cached: true, trainings: 0 });
            }
        }
    }

    let mut trainings = 0;
    let stored: Option<ModelSet> = match &models_path {
        Some(p) if p.exists() => {
            let m: ModelSet = ingest::load_document(p)?;
            (m.source_digest == digests.archive && m.config == config.train).then_some(m)
        }
        _ => None,
    };
    let models = match stored {
        Some(m) => m,
        None => {
            trainings += 1;
            let m = train(archive, &config.train)?;
            if let Some(p) = &models_path {
                ingest::save_document(&m, p)?;
            }
            m
        }
    };

    let mut goal = initial_goal;
    let mut iterations = Vec::new();
    let mut plans = Vec::new();
    let mut status = LoopStatus::Exhausted;
    for k in 1..=config.max_iterations {
        let planned = plan(&models, goal, archive, config.plan_seed, &config.plan)?;
        let replayed = replay_plan(dut, &planned)?;
        let metrics = compare(archive, &replayed)?;
        let regain = metrics.coverage_regain_percent;
        log::info!(
            "iteration {k}: goal {goal}, {} runs, regain {}",
            planned.runs.len(),
            regain.map_or_else(|| "undefined".to_string(), |r| format!("{r}%"))
        );
        if let Some(dir) = state_dir {
            ingest::save_document(&planned, &dir.join(format!("plan-{k}.json")))?;
        }
        iterations.push(IterationRecord {
            iteration: k,
            goal,
            plan_digest: ingest::document_digest(&planned)?,
            planned_runs: planned.runs.len(),
            regain_percent: regain,
            metrics,
        });
        plans.push(planned);
        if iteration_met(regain, config.regain_threshold_percent) {
            status = LoopStatus::Accepted;
            break;
        }
        goal = goal.tightened();
    }

    let best_iteration = iterations
        .iter()
        .fold(None::<&IterationRecord>, |best, it| match best {
            Some(b) if b.regain_percent.unwrap_or(f64::NEG_INFINITY) >= it.regain_percent.unwrap_or(f64::NEG_INFINITY) => Some(b),
            _ => Some(it),
        })
        .map_or(1, |it| it.iteration);
    let last = iterations.last().expect("at least one iteration");
    let best = &iterations[best_iteration - 1];
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"));
    let recommendation = match status {
        LoopStatus::Accepted => format!(
            "adopt plan-{} as the daily regression: {} runs, regain {}%, run compression {}x, CPU compression {}x",
            last.iteration,
            last.planned_runs,
            fmt_opt(last.regain_percent),
            fmt_opt(last.metrics.compression_runs),
            fmt_opt(last.metrics.compression_cpu),
        ),
        LoopStatus::Exhausted => format!(
            "no plan reached {}% regain within {} iterations; best was plan-{} at {}%; revisit the goal, the archive or the testbench",
            config.regain_threshold_percent,
            iterations.len(),
            best.iteration,
            fmt_opt(best.regain_percent),
        ),
    };
    let outcome = LoopOutcome {
        format_version: FORMAT_VERSION,
        status,
        iterations,
        best_iteration,
        recommendation,
    };
    if let (Some(dp), Some(op)) = (&digest_path, &outcome_path) {
        ingest::save_document(&outcome, op)?;
        ingest::save_document(&digests, dp)?;
    }
    Ok(LoopRun { outcome, plans, cached: false, trainings })
}
