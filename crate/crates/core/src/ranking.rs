//! Greedy ranking of recorded runs by marginal coverage contribution.
//!
//! Gains are tracked as exact integers scaled by the lcm of all `at_least`
//! thresholds, so tie detection never depends on float rounding. Bins the
//! full regression never satisfies carry no gain.

use std::fmt;
use std::str::FromStr;

use crate::coverage::{Regression, RunRecord};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CoverAll,
    TopK(usize),
    UntilCoverage(f64),
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("bad objective `{s}`; use cover_all, top_k=K or until_coverage=C"));
        if s == "cover_all" {
            return Ok(Objective::CoverAll);
        }
        let (name, value) = s.split_once('=').ok_or_else(bad)?;
        match name {
            "top_k" => value.parse().map(Objective::TopK).map_err(|_| bad()),
            "until_coverage" => {
                let c: f64 = value.parse().map_err(|_| bad())?;
                if !(c.is_finite() && c > 0.0 && c <= 100.0) {
                    return Err(bad());
                }
                Ok(Objective::UntilCoverage(c))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::CoverAll => write!(f, "cover_all"),
            Objective::TopK(k) => write!(f, "top_k={k}"),
            Objective::UntilCoverage(c) => write!(f, "until_coverage={c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedSelection {
    /// Indices into the source regression, in pick order.
    pub indices: Vec<usize>,
    /// Weighted progress each pick added (whole bins when `at_least == 1`).
    pub gains: Vec<f64>,
    /// Coverage percent after each pick.
    pub cumulative_coverage: Vec<f64>,
    /// Bin ids (source order) whose threshold each pick completed.
    pub newly_satisfied: Vec<Vec<String>>,
}

impl RankedSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn final_coverage(&self) -> f64 {
        self.cumulative_coverage.last().copied().unwrap_or(0.0)
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct HitTable {
    rows: Vec<Vec<(usize, u64)>>,
    cpu: Vec<f64>,
}

impl HitTable {
    fn build(regression: &Regression) -> Result<Self> {
        let space = &regression.space;
        let rows = par::map(&regression.runs, |run: &RunRecord| {
            run.bins_hit
                .iter()
                .filter(|(_, &c)| c > 0)
                .map(|(id, &c)| {
                    space
                        .index_of(id)
                        .map(|i| (i, c))
                        .ok_or_else(|| Error::Validation(format!("unknown bin id `{id}`")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let cpu = regression.runs.iter().map(|r| r.cpu_seconds).collect();
        Ok(Self { rows, cpu })
    }
}

/// Greedy weighted maximum coverage over the recorded runs.
///
/// Each step picks the run with the largest newly added weighted progress;
/// ties go to lower `cpu_seconds`, then lower index. Stops when the
/// objective is met or no remaining run adds anything.
pub fn rank(regression: &Regression, objective: Objective) -> Result<RankedSelection> {
    let space = &regression.space;
    let bins = space.bins();
    let table = HitTable::build(regression)?;

    let mut scale: u128 = 1;
    for bin in bins {
        let a = u128::from(bin.at_least);
        scale = scale / gcd(scale, a) * a;
        if scale > u128::from(u64::MAX) {
            return Err(Error::Validation("at_least thresholds too diverse to rank exactly".into()));
        }
    }
    // Per-unit-hit value of each bin, scaled to an integer.
    let unit: Vec<u128> = bins
        .iter()
        .map(|b| u128::from(b.weight) * (scale / u128::from(b.at_least)))
        .collect();

    let totals = space.accumulate(&regression.runs)?;
    let mut remaining: Vec<u64> = bins
        .iter()
        .zip(&totals)
        .map(|(b, &t)| if t >= b.at_least { b.at_least } else { 0 })
        .collect();
    let full_weight: u64 = bins
        .iter()
        .zip(&remaining)
        .filter(|(_, &r)| r > 0)
        .map(|(b, _)| b.weight)
        .sum();

    let mut chosen = vec![false; regression.runs.len()];
    let mut satisfied_weight = 0u64;
    let mut out = RankedSelection::default();

    loop {
        let coverage = space.percent_of_weight(satisfied_weight);
        let done = match objective {
            Objective::CoverAll => satisfied_weight == full_weight,
            Objective::TopK(k) => out.len() >= k,
            Objective::UntilCoverage(c) => coverage >= c || satisfied_weight == full_weight,
        };
        if done {
            break;
        }

        let best = par::argmax_by(
            table.rows.len(),
            |i| {
                if chosen[i] {
                    return 0u128;
                }
                table.rows[i]
                    .iter()
                    .map(|&(b, h)| unit[b] * u128::from(h.min(remaining[b])))
                    .sum::<u128>()
            },
            |(ia, ga), (ib, gb)| {
                ga.cmp(gb)
                    .then_with(|| table.cpu[*ib].total_cmp(&table.cpu[*ia]))
                    .then_with(|| ib.cmp(ia))
            },
        );
        let Some((pick, gain)) = best.filter(|(_, g)| *g > 0) else {
            break;
        };

        chosen[pick] = true;
        let mut completed = Vec::new();
        for &(b, h) in &table.rows[pick] {
            if remaining[b] == 0 {
                continue;
            }
            remaining[b] = remaining[b].saturating_sub(h);
            if remaining[b] == 0 {
                satisfied_weight += bins[b].weight;
                completed.push(b);
            }
        }
        completed.sort_unstable();
        out.indices.push(pick);
        out.gains.push(gain as f64 / scale as f64);
        out.cumulative_coverage
            .push(space.percent_of_weight(satisfied_weight));
        out.newly_satisfied
            .push(completed.into_iter().map(|b| bins[b].id.clone()).collect());
    }
    Ok(out)
}

/// The selected runs as a standalone regression, in selection order.
pub fn selection_to_regression(regression: &Regression, indices: &[usize]) -> Result<Regression> {
    let runs = indices
        .iter()
        .map(|&i| {
            regression.runs.get(i).cloned().ok_or_else(|| {
                Error::Validation(format!(
                    "selection index {i} out of range for {} runs",
                    regression.runs.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(regression.with_runs(runs))
}
