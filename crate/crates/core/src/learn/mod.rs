//! Per-bin coverage predictors over encoded (test, control point) features.

pub mod network;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::coverage::{ControlPointDecl, ControlValue, Domain, Regression};
use crate::error::{Error, Result};
use crate::ingest::{self, Document};
use crate::rng::{stable_hash, SplitMix64};
use crate::{par, FORMAT_VERSION};

pub use network::{Design, FitOptions, Network, Shape};

/// Bins satisfied in at least this share of runs are not trained.
pub const UNCONDITIONAL_SHARE: f64 = 0.99;
const HELDOUT_SHARE: f64 = 0.2;
const MAX_POSITIVE_WEIGHT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Test,
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: GroupKind,
    pub start: usize,
    pub len: usize,
}

/// Feature layout: one-hot test identity (first-appearance order), then
/// each control point in declaration order. Numeric points are scaled to
/// [0, 1] over their declared range; categorical points are one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub tests: Vec<String>,
    pub declarations: Vec<ControlPointDecl>,
}

impl FeatureEncoding {
    pub fn for_regression(regression: &Regression) -> Self {
        Self {
            tests: regression.distinct_tests(),
            declarations: regression.declarations.clone(),
        }
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        let mut groups = Vec::with_capacity(self.declarations.len() + 1);
        let mut start = 0;
        if !self.tests.is_empty() {
            groups.push(FeatureGroup {
                name: "test".into(),
                kind: GroupKind::Test,
                start,
                len: self.tests.len(),
            });
            start += self.tests.len();
        }
        for decl in &self.declarations {
            let len = match &decl.domain {
                Domain::NumericRange { .. } => 1,
                Domain::Categorical { values } => values.len(),
            };
            groups.push(FeatureGroup {
                name: decl.name.clone(),
                kind: GroupKind::Control,
                start,
                len,
            });
            start += len;
        }
        groups
    }

    pub fn width(&self) -> usize {
        self.groups().iter().map(|g| g.len).sum()
    }

    pub fn test_index(&self, test: &str) -> Option<usize> {
        self.tests.iter().position(|t| t == test)
    }

    /// Encode one input. Missing numeric controls take the range midpoint
    /// and missing categorical controls the uniform mixture. The flag is
    /// set when `test` is not part of the encoding.
    pub fn encode(
        &self,
        test: &str,
        controls: &BTreeMap<String, ControlValue>,
    ) -> Result<(Vec<f64>, bool)> {
        let mut x = Vec::with_capacity(self.width());
        let known = self.test_index(test);
        x.extend((0..self.tests.len()).map(|i| if Some(i) == known { 1.0 } else { 0.0 }));
        for decl in &self.declarations {
            let value = controls.get(&decl.name);
            if let Some(v) = value {
                decl.check_value(v)?;
            }
            match (&decl.domain, value) {
                (Domain::NumericRange { lo, hi }, Some(ControlValue::Number(v))) => {
                    x.push(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 });
                }
                (Domain::NumericRange { .. }, _) => x.push(0.5),
                (Domain::Categorical { values }, Some(ControlValue::Label(v))) => {
                    x.extend(values.iter().map(|c| if c == v { 1.0 } else { 0.0 }));
                }
                (Domain::Categorical { values }, _) => {
                    let share = 1.0 / values.len() as f64;
                    x.extend(std::iter::repeat_n(share, values.len()));
                }
            }
        }
        Ok((x, known.is_none()))
    }
}

/// Design matrix plus per-run labels for every bin (outer index = bin).
#[derive(Debug, Clone)]
pub struct EncodedData {
    pub encoding: FeatureEncoding,
    pub design: Design,
    pub labels: Vec<Vec<bool>>,
}

/// Label for (bin, run) is whether that run alone meets the bin threshold.
pub fn encode(regression: &Regression) -> Result<EncodedData> {
    let encoding = FeatureEncoding::for_regression(regression);
    let mut design = Design::new(encoding.width());
    for run in &regression.runs {
        let (x, _) = encoding.encode(&run.test, &run.controls)?;
        design.push_row(&x);
    }
    let labels = regression
        .space
        .bins()
        .iter()
        .map(|bin| {
            regression
                .runs
                .iter()
                .map(|run| run.bins_hit.get(&bin.id).copied().unwrap_or(0) >= bin.at_least)
                .collect()
        })
        .collect();
    Ok(EncodedData {
        encoding,
        design,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: u32,
    pub learning_rate: f64,
    pub l2: f64,
    /// 0 selects logistic regression.
    pub hidden: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            learning_rate: 0.1,
            l2: 1e-4,
            hidden: 0,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Training("epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Training("learning rate must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Training("L2 strength must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Training("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub network: Network,
    pub epochs: u32,
    pub train_loss: f64,
    pub positive_rate: f64,
    pub heldout_accuracy: Option<f64>,
    pub heldout_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Unconditional,
    Unreachable,
    Learned(LearnedModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinModel {
    pub bin: String,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl BinModel {
    pub fn learned(&self) -> Option<&LearnedModel> {
        match &self.kind {
            ModelKind::Learned(m) => Some(m),
            _ => None,
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Unconditional => 1.0,
            ModelKind::Unreachable => 0.0,
            ModelKind::Learned(m) => m.network.probability(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub format_version: u32,
    pub source_digest: String,
    pub config: TrainConfig,
    pub encoding: FeatureEncoding,
    pub bins: Vec<BinModel>,
}

impl Document for ModelSet {
    fn format_version(&self) -> u32 {
        self.format_version
    }

    fn validate(&self) -> Result<()> {
        let width = self.encoding.width();
        let mut seen = HashSet::new();
        for model in &self.bins {
            if !seen.insert(model.bin.as_str()) {
                return Err(Error::Validation(format!("duplicate model for bin `{}`", model.bin)));
            }
            if let Some(learned) = model.learned() {
                if learned.network.inputs() != width {
                    return Err(Error::Validation(format!(
                        "model for `{}` expects {} features, encoding has {width}",
                        model.bin,
                        learned.network.inputs()
                    )));
                }
                if !learned.network.is_finite() {
                    return Err(Error::Validation(format!(
                        "model for `{}` has non-finite weights",
                        model.bin
                    )));
                }
            }
        }
        Ok(())
    }
}

impl ModelSet {
    pub fn model(&self, bin: &str) -> Option<&BinModel> {
        self.bins.iter().find(|m| m.bin == bin)
    }

    /// Probability for every bin, in model order, at an encoded point.
    pub fn probabilities_at(&self, x: &[f64]) -> Vec<f64> {
        self.bins.iter().map(|m| m.probability(x)).collect()
    }

    pub fn learned_count(&self) -> usize {
        self.bins.iter().filter(|m| m.learned().is_some()).count()
    }

    /// Checks that the models cover exactly the bins of `regression`.
    pub fn check_matches(&self, regression: &Regression) -> Result<()> {
        let ids: Vec<&str> = regression.space.bins().iter().map(|b| b.id.as_str()).collect();
        let mine: Vec<&str> = self.bins.iter().map(|m| m.bin.as_str()).collect();
        if ids != mine {
            return Err(Error::SpaceMismatch(
                "model set bins differ from the regression's coverage space".into(),
            ));
        }
        if self.encoding.declarations != regression.declarations {
            return Err(Error::SpaceMismatch(
                "model set control points differ from the regression's declarations".into(),
            ));
        }
        Ok(())
    }
}

/// Train one predictor per bin. Bins are independent and each draws from
/// its own stream, so the result does not depend on scheduling.
pub fn train(regression: &Regression, config: &TrainConfig) -> Result<ModelSet> {
    config.validate()?;
    if regression.runs.len() < 10 {
        return Err(Error::Training(format!(
            "need at least 10 runs to train, got {}",
            regression.runs.len()
        )));
    }
    let data = encode(regression)?;
    if data.encoding.width() == 0 {
        return Err(Error::Training("no features to train on".into()));
    }
    let bins = regression.space.bins();
    let models = par::map_range(bins.len(), |b| {
        train_bin(&bins[b].id, &data.design, &data.labels[b], config)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ModelSet {
        format_version: FORMAT_VERSION,
        source_digest: ingest::regression_digest(regression)?,
        config: *config,
        encoding: data.encoding,
        bins: models,
    })
}

/// Stratified train / held-out split drawn from `rng`; both lists sorted.
pub fn stratified_split(labels: &[bool], rng: &mut SplitMix64) -> (Vec<usize>, Vec<usize>) {
    let mut positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut train = Vec::with_capacity(labels.len());
    let mut heldout = Vec::new();
    for class in [&mut positives, &mut negatives] {
        rng.shuffle(class);
        let take = ((class.len() as f64 * HELDOUT_SHARE).round() as usize)
            .min(class.len().saturating_sub(1));
        heldout.extend_from_slice(&class[..take]);
        train.extend_from_slice(&class[take..]);
    }
    train.sort_unstable();
    heldout.sort_unstable();
    (train, heldout)
}

fn train_bin(bin: &str, design: &Design, labels: &[bool], config: &TrainConfig) -> Result<BinModel> {
    let n = labels.len();
    let positives = labels.iter().filter(|&&l| l).count();
    let kind = if positives == 0 {
        ModelKind::Unreachable
    } else if positives as f64 >= UNCONDITIONAL_SHARE * n as f64 {
        ModelKind::Unconditional
    } else {
        let mut rng = SplitMix64::new(config.seed ^ stable_hash(bin));
        let (train, heldout) = stratified_split(labels, &mut rng);
        let train_pos = train.iter().filter(|&&i| labels[i]).count();
        let train_neg = train.len() - train_pos;
        let positive_weight = if train_pos == 0 {
            1.0
        } else {
            (train_neg as f64 / train_pos as f64).clamp(1.0, MAX_POSITIVE_WEIGHT)
        };
        let shape = Shape {
            inputs: design.width,
            hidden: config.hidden,
        };
        let options = FitOptions {
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            l2: config.l2,
            batch_size: config.batch_size,
            positive_weight,
        };
        let outcome = network::fit(shape, design, labels, &train, &options, &mut rng);
        let network = Network::from_params(shape, &outcome.params);
        if !network.is_finite() {
            return Err(Error::Training(format!("non-finite weights for bin `{bin}`")));
        }
        let scores: Vec<f64> = heldout
            .iter()
            .map(|&i| network.probability(design.row(i)))
            .collect();
        let truth: Vec<bool> = heldout.iter().map(|&i| labels[i]).collect();
        ModelKind::Learned(LearnedModel {
            network,
            epochs: outcome.epochs,
            train_loss: *outcome.loss_history.last().unwrap_or(&f64::NAN),
            positive_rate: positives as f64 / n as f64,
            heldout_accuracy: accuracy(&scores, &truth),
            heldout_auc: auc(&scores, &truth),
        })
    };
    Ok(BinModel {
        bin: bin.to_string(),
        kind,
    })
}

pub fn accuracy(scores: &[f64], truth: &[bool]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let correct = scores
        .iter()
        .zip(truth)
        .filter(|(s, t)| (**s >= 0.5) == **t)
        .count();
    Some(correct as f64 / scores.len() as f64)
}

/// Rank-sum AUC with ties counted as one half; `None` unless both classes
/// are present.
pub fn auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| truth[order[k]]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let pos = pos as f64;
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: BTreeMap<String, f64>,
    pub unknown_test: bool,
}

pub fn predict(
    models: &ModelSet,
    test: &str,
    controls: &BTreeMap<String, ControlValue>,
) -> Result<Prediction> {
    let (x, unknown_test) = models.encoding.encode(test, controls)?;
    Ok(Prediction {
        probabilities: models
            .bins
            .iter()
            .map(|m| (m.bin.clone(), m.probability(&x)))
            .collect(),
        unknown_test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Influence {
    pub factor: String,
    pub kind: GroupKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinInfluence {
    pub bin: String,
    /// Highest score first.
    pub factors: Vec<Influence>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceReport {
    pub bins: Vec<BinInfluence>,
}

impl InfluenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,rank,factor,kind,score\n");
        for bin in &self.bins {
            for (rank, f) in bin.factors.iter().enumerate() {
                let kind = match f.kind {
                    GroupKind::Test => "test",
                    GroupKind::Control => "control",
                };
                out.push_str(&format!("{},{},{},{},{}\n", bin.bin, rank + 1, f.factor, kind, f.score));
            }
        }
        out
    }
}

/// Influence of each feature group on each learned bin: the mean absolute
/// first-layer weight over the group's features, normalized to sum to 1.
/// A model with all-zero input weights spreads influence evenly.
pub fn analyze(models: &ModelSet) -> Result<InfluenceReport> {
    if models.learned_count() == 0 {
        return Err(Error::Validation("model set has no learned bins to analyze".into()));
    }
    let groups = models.encoding.groups();
    let bins = models
        .bins
        .iter()
        .filter_map(|m| m.learned().map(|l| (m, l)))
        .map(|(m, learned)| {
            let magnitudes = learned.network.input_magnitudes();
            let raw: Vec<f64> = groups
                .iter()
                .map(|g| magnitudes[g.start..g.start + g.len].iter().sum::<f64>() / g.len as f64)
                .collect();
            let total: f64 = raw.iter().sum();
            let mut factors: Vec<Influence> = groups
                .iter()
                .zip(&raw)
                .map(|(g, r)| Influence {
                    factor: g.name.clone(),
                    kind: g.kind,
                    score: if total > 0.0 { r / total } else { 1.0 / groups.len() as f64 },
                })
                .collect();
            factors.sort_by(|a, b| b.score.total_cmp(&a.score));
            BinInfluence {
                bin: m.bin.clone(),
                factors,
            }
        })
        .collect();
    Ok(InfluenceReport { bins })
}
