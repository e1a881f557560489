//! Random Forest binary classifier for erroneous-text detection.
//!
//! CART trees grown on bootstrap resamples with Gini impurity and a random
//! feature subset per split. The forest probability is the mean positive-class
//! fraction of the reached leaves; a text is flagged erroneous when that
//! probability is at or above the decision threshold, so lowering the threshold
//! trades re-computation overhead for detection rate without retraining.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::lingfeat::{FeatureVector, FEATURE_NAMES};
use crate::seed;

pub const MODEL_FORMAT: &str = "cled-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("class counts sum to zero")]
    EmptyNode,
    #[error("training data holds a single class ({0})")]
    SingleClass(Label),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("feature names do not match the expected order (found {found:?})")]
    FeatureMismatch { found: Vec<String> },
    #[error("degenerate fold {fold}: {reason}")]
    DegenerateFold { fold: usize, reason: String },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ForestError>;

/// Gini impurity `1 - p0^2 - p1^2` of a two-class count pair.
pub fn gini(counts: (usize, usize)) -> Result<f64> {
    let total = counts.0 + counts.1;
    if total == 0 {
        return Err(ForestError::EmptyNode);
    }
    Ok(gini_unchecked(counts.0 as f64, counts.1 as f64))
}

fn gini_unchecked(neg: f64, pos: f64) -> f64 {
    let n = neg + pos;
    let p0 = neg / n;
    let p1 = pos / n;
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impurity {
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `ceil(sqrt(n_features))`
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

/// Forest hyperparameters; the defaults are the detector's tuned settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub impurity: Impurity,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// `None` is unlimited.
    pub max_leaf_nodes: Option<usize>,
    pub min_impurity_decrease: f64,
    pub min_weight_fraction_leaf: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            num_trees: 50,
            max_depth: 10,
            max_features: MaxFeatures::Sqrt,
            impurity: Impurity::Gini,
            bootstrap: true,
            min_samples_leaf: 2,
            min_samples_split: 10,
            max_leaf_nodes: None,
            min_impurity_decrease: 0.0,
            min_weight_fraction_leaf: 0.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForestError::InvalidHyperparams(m));
        if self.num_trees == 0 {
            return bad("num_trees must be at least 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if self.min_samples_split < 2 * self.min_samples_leaf {
            return bad(format!(
                "min_samples_split ({}) must be at least 2 * min_samples_leaf ({})",
                self.min_samples_split, self.min_samples_leaf
            ));
        }
        if self.max_leaf_nodes.is_some_and(|n| n < 2) {
            return bad("max_leaf_nodes must be at least 2".into());
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return bad("min_impurity_decrease must be non-negative".into());
        }
        if !(0.0..=0.5).contains(&self.min_weight_fraction_leaf) {
            return bad("min_weight_fraction_leaf must lie in [0, 0.5]".into());
        }
        if let MaxFeatures::Count(0) = self.max_features {
            return bad("max_features count must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Fraction of erroneous training rows reaching this leaf.
        value: f64,
        samples: usize,
    },
}

/// A fitted tree; node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, samples } => Some((*value, *samples)),
            _ => None,
        })
    }

    fn check(&self, n_features: usize) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree without nodes".into());
        }
        // every non-root node must be referenced exactly once, by an earlier node
        let mut seen = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { value, .. } => {
                    if !(0.0..=1.0).contains(value) {
                        return Err(format!("leaf value {value} outside [0, 1]"));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features {
                        return Err(format!("feature index {feature} out of range"));
                    }
                    if threshold.is_nan() {
                        return Err("NaN split threshold".into());
                    }
                    for c in [*left, *right] {
                        if c <= i || c >= self.nodes.len() || seen[c] {
                            return Err(format!("bad child index {c} at node {i}"));
                        }
                        seen[c] = true;
                    }
                }
            }
        }
        if seen.iter().skip(1).all(|s| *s) {
            Ok(())
        } else {
            Err("unreachable nodes".into())
        }
    }
}

/// Row-major training table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn from_features(samples: &[(FeatureVector, Label)]) -> Self {
        Self {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows: samples.iter().map(|(f, _)| f.0.to_vec()).collect(),
            labels: samples.iter().map(|(_, l)| *l).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_erroneous()).count();
        (self.labels.len() - pos, pos)
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    improvement: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Better split wins; exact gain ties go to the lower feature index, then the lower threshold.
fn beats(a: (f64, usize, f64), b: &Candidate) -> bool {
    match a.0.partial_cmp(&b.improvement) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => (a.1, a.2) < (b.feature, b.threshold),
        _ => false,
    }
}

struct TreeBuilder<'a> {
    data: &'a Dataset,
    hp: &'a Hyperparams,
    max_features: usize,
    total: f64,
    rng: seed::Rng,
    nodes: Vec<Node>,
}

struct Pending {
    node: usize,
    depth: usize,
    split: Option<Candidate>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&self, rows: &[usize]) -> Node {
        let pos = rows
            .iter()
            .filter(|&&r| self.data.labels[r].is_erroneous())
            .count();
        Node::Leaf {
            value: pos as f64 / rows.len() as f64,
            samples: rows.len(),
        }
    }

    fn best_split(&mut self, rows: &[usize], depth: usize) -> Option<Candidate> {
        let hp = self.hp;
        let n = rows.len();
        if depth >= hp.max_depth || n < hp.min_samples_split || n < 2 * hp.min_samples_leaf {
            return None;
        }
        let pos_total = rows
            .iter()
            .filter(|&&r| self.data.labels[r].is_erroneous())
            .count();
        if pos_total == 0 || pos_total == n {
            return None;
        }
        let parent = gini_unchecked((n - pos_total) as f64, pos_total as f64);
        let min_leaf = hp
            .min_samples_leaf
            .max((hp.min_weight_fraction_leaf * self.total).ceil() as usize);

        let n_features = self.data.feature_names.len();
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(&mut self.rng);

        let mut best: Option<Candidate> = None;
        let mut sorted: Vec<(f64, bool, usize)> = Vec::with_capacity(n);
        for (visited, &feature) in order.iter().enumerate() {
            // keep drawing features past the budget until some valid split exists
            if visited >= self.max_features && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| {
                (self.data.rows[r][feature], self.data.labels[r].is_erroneous(), r)
            }));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_pos = 0usize;
            let mut found: Option<(f64, f64, usize)> = None; // (improvement, threshold, split index)
            for i in 0..n - 1 {
                if sorted[i].1 {
                    left_pos += 1;
                }
                let (a, b) = (sorted[i].0, sorted[i + 1].0);
                if a.total_cmp(&b) == Ordering::Equal {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b || !threshold.is_finite() {
                    threshold = a;
                }
                let right_pos = pos_total - left_pos;
                let child = (nl as f64 * gini_unchecked((nl - left_pos) as f64, left_pos as f64)
                    + nr as f64 * gini_unchecked((nr - right_pos) as f64, right_pos as f64))
                    / n as f64;
                let improvement = (n as f64 / self.total) * (parent - child);
                if improvement < hp.min_impurity_decrease {
                    continue;
                }
                // thresholds ascend within a feature, so strict > keeps the lowest on ties
                if found.is_none_or(|f| improvement > f.0) {
                    found = Some((improvement, threshold, i));
                }
            }
            if let Some((improvement, threshold, i)) = found {
                let replace = match &best {
                    None => true,
                    Some(b) => beats((improvement, feature, threshold), b),
                };
                if replace {
                    let mut left: Vec<usize> = sorted[..=i].iter().map(|s| s.2).collect();
                    let mut right: Vec<usize> = sorted[i + 1..].iter().map(|s| s.2).collect();
                    left.sort_unstable();
                    right.sort_unstable();
                    best = Some(Candidate {
                        feature,
                        threshold,
                        improvement,
                        left,
                        right,
                    });
                }
            }
        }
        best
    }

    fn build(mut self, rows: Vec<usize>) -> DecisionTree {
        let limit = self.hp.max_leaf_nodes;
        self.nodes.push(self.leaf(&rows));
        let split = self.best_split(&rows, 0);
        let mut frontier = vec![Pending {
            node: 0,
            depth: 0,
            split,
        }];
        let mut leaves = 1usize;
        loop {
            if limit.is_some_and(|l| leaves >= l) {
                break;
            }
            // unlimited: depth-first (LIFO); limited: best improvement first
            let pick = match limit {
                None => frontier.iter().rposition(|p| p.split.is_some()),
                Some(_) => frontier
                    .iter()
                    .enumerate()
                    .filter_map(|(i, p)| p.split.as_ref().map(|s| (i, s.improvement)))
                    .fold(None, |acc: Option<(usize, f64)>, (i, imp)| match acc {
                        Some((_, b)) if b >= imp => acc,
                        _ => Some((i, imp)),
                    })
                    .map(|(i, _)| i),
            };
            let Some(idx) = pick else { break };
            let p = frontier.remove(idx);
            let cand = p.split.expect("picked node has a split");
            let left_id = self.nodes.len();
            self.nodes.push(self.leaf(&cand.left));
            let right_id = self.nodes.len();
            self.nodes.push(self.leaf(&cand.right));
            self.nodes[p.node] = Node::Split {
                feature: cand.feature,
                threshold: cand.threshold,
                left: left_id,
                right: right_id,
            };
            leaves += 1;
            let left_split = self.best_split(&cand.left, p.depth + 1);
            let right_split = self.best_split(&cand.right, p.depth + 1);
            // right first so LIFO expands the left child next
            frontier.push(Pending {
                node: right_id,
                depth: p.depth + 1,
                split: right_split,
            });
            frontier.push(Pending {
                node: left_id,
                depth: p.depth + 1,
                split: left_split,
            });
        }
        DecisionTree { nodes: self.nodes }
    }
}

fn fit_tree(data: &Dataset, hp: &Hyperparams, tree_seed: u64) -> DecisionTree {
    let mut rng = seed::rng(tree_seed);
    let n = data.len();
    let rows: Vec<usize> = if hp.bootstrap {
        let mut r: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    TreeBuilder {
        data,
        hp,
        max_features: hp.max_features.resolve(data.feature_names.len()),
        total: n as f64,
        rng,
        nodes: Vec::new(),
    }
    .build(rows)
}

/// Per-tree seed: `seed::derive(training_seed, tree_index)`.
pub fn tree_seed(training_seed: u64, tree_index: usize) -> u64 {
    seed::derive(training_seed, tree_index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub hyperparams: Hyperparams,
    pub feature_names: Vec<String>,
    pub decision_threshold: f64,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    forest: Forest,
}

impl Forest {
    pub fn fit(data: &Dataset, hp: &Hyperparams, seed: u64) -> Result<Forest> {
        hp.validate()?;
        if data.is_empty() || data.len() < hp.min_samples_split {
            return Err(ForestError::TooFewSamples {
                needed: hp.min_samples_split.max(1),
                got: data.len(),
            });
        }
        let width = data.feature_names.len();
        if let Some(bad) = data.rows.iter().find(|r| r.len() != width) {
            return Err(ForestError::FeatureCount {
                expected: width,
                got: bad.len(),
            });
        }
        match data.class_counts() {
            (_, 0) => return Err(ForestError::SingleClass(Label::Clean)),
            (0, _) => return Err(ForestError::SingleClass(Label::Erroneous)),
            _ => {}
        }
        let trees = (0..hp.num_trees)
            .map(|t| fit_tree(data, hp, tree_seed(seed, t)))
            .collect();
        Ok(Forest {
            hyperparams: hp.clone(),
            feature_names: data.feature_names.clone(),
            decision_threshold: 0.5,
            seed,
            trees,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        self.decision_threshold = threshold;
        Ok(self)
    }

    /// Mean positive-class leaf fraction over the trees.
    pub fn predict_proba_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_proba(&self, fv: &FeatureVector) -> f64 {
        self.predict_proba_row(fv.as_slice())
    }

    /// Erroneous iff the probability is at or above the threshold
    /// (the forest's own threshold when `None`).
    pub fn classify_row(&self, x: &[f64], threshold: Option<f64>) -> Result<Label> {
        let t = threshold.unwrap_or(self.decision_threshold);
        check_threshold(t)?;
        Ok(Label::from_bit(self.predict_proba_row(x) >= t))
    }

    pub fn classify(&self, fv: &FeatureVector, threshold: Option<f64>) -> Result<Label> {
        self.classify_row(fv.as_slice(), threshold)
    }

    pub fn evaluate(&self, data: &Dataset, threshold: Option<f64>) -> Result<Confusion> {
        let t = threshold.unwrap_or(self.decision_threshold);
        check_threshold(t)?;
        let scores: Vec<f64> = data.rows.iter().map(|r| self.predict_proba_row(r)).collect();
        Ok(Confusion::at_threshold(&scores, &data.labels, t))
    }

    /// ROC over `num_thresholds` evenly spaced thresholds in [0, 1].
    pub fn roc(&self, test: &Dataset, num_thresholds: usize) -> Result<Vec<RocPoint>> {
        let scores: Vec<f64> = test.rows.iter().map(|r| self.predict_proba_row(r)).collect();
        roc_from_scores(&scores, &test.labels, num_thresholds)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            forest: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses a model file and checks its feature names against `expected`.
    pub fn from_json(text: &str, expected: &[&str]) -> Result<Forest> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(ForestError::Malformed(format!("unknown format `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(ForestError::Malformed(format!("unsupported version {}", file.version)));
        }
        let forest = file.forest;
        if forest.feature_names.len() != expected.len()
            || forest.feature_names.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(ForestError::FeatureMismatch {
                found: forest.feature_names,
            });
        }
        check_threshold(forest.decision_threshold)?;
        if forest.trees.is_empty() {
            return Err(ForestError::Malformed("no trees".into()));
        }
        for (i, t) in forest.trees.iter().enumerate() {
            t.check(expected.len())
                .map_err(|m| ForestError::Malformed(format!("tree {i}: {m}")))?;
        }
        Ok(forest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a model trained on the linguistic feature set.
    pub fn load(path: &Path) -> Result<Forest> {
        Self::from_json(&std::fs::read_to_string(path)?, &FEATURE_NAMES)
    }
}

/// Trains on linguistic feature vectors.
pub fn train(samples: &[(FeatureVector, Label)], hp: &Hyperparams, seed: u64) -> Result<Forest> {
    Forest::fit(&Dataset::from_features(samples), hp, seed)
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(ForestError::InvalidThreshold(t))
    }
}

/// Binary confusion counts with erroneous as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[Label], actual: &[Label]) -> Self {
        let mut c = Confusion::default();
        for (p, a) in predicted.iter().zip(actual) {
            match (p.is_erroneous(), a.is_erroneous()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn at_threshold(scores: &[f64], actual: &[Label], threshold: f64) -> Self {
        let predicted: Vec<Label> = scores.iter().map(|s| Label::from_bit(*s >= threshold)).collect();
        Self::from_predictions(&predicted, actual)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn div(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::div(self.tp + self.tn, self.total())
    }

    /// TP / (TP + FN), 0 with no positives.
    pub fn recall(&self) -> f64 {
        Self::div(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        Self::div(self.tp, self.tp + self.fp)
    }

    /// FN / (TP + FN), computed from the counts rather than as `1 - recall`.
    pub fn false_negative_rate(&self) -> f64 {
        Self::div(self.fn_, self.tp + self.fn_)
    }

    /// FP / (FP + TN): the share of clean outputs that would be recomputed.
    pub fn false_positive_rate(&self) -> f64 {
        Self::div(self.fp, self.fp + self.tn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Evenly spaced thresholds `i / (n - 1)` for `i in 0..n`.
pub fn threshold_grid(num_thresholds: usize) -> Vec<f64> {
    match num_thresholds {
        0 => vec![],
        1 => vec![0.5],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// ROC points sorted by ascending threshold. Threshold 0 flags everything,
/// giving the (1, 1) corner.
pub fn roc_from_scores(
    scores: &[f64],
    labels: &[Label],
    num_thresholds: usize,
) -> Result<Vec<RocPoint>> {
    let pos = labels.iter().filter(|l| l.is_erroneous()).count();
    if pos == 0 {
        return Err(ForestError::SingleClass(Label::Clean));
    }
    if pos == labels.len() {
        return Err(ForestError::SingleClass(Label::Erroneous));
    }
    if num_thresholds < 2 {
        return Err(ForestError::InvalidHyperparams(
            "ROC needs at least 2 thresholds".into(),
        ));
    }
    Ok(threshold_grid(num_thresholds)
        .into_iter()
        .map(|t| {
            let c = Confusion::at_threshold(scores, labels, t);
            RocPoint {
                threshold: t,
                fpr: c.false_positive_rate(),
                tpr: c.recall(),
            }
        })
        .collect())
}

/// Trapezoidal area under the ROC points.
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

/// Stratified fold assignment: each class is shuffled with the seed and dealt
/// round-robin, so fold class counts differ by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    if k == 0 {
        return folds;
    }
    let mut slot = 0;
    for (stream, class) in [Label::Clean, Label::Erroneous].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut seed::rng(seed::derive(seed, stream as u64)));
        for i in idx {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best: Hyperparams,
    /// Mean validation recall per grid entry, in grid order.
    pub mean_recall: Vec<f64>,
}

/// Picks the grid entry with the highest mean validation recall over `k`
/// stratified folds; ties go to fewer trees, then shallower trees, then grid order.
pub fn cross_validate(
    data: &Dataset,
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(ForestError::EmptyGrid);
    }
    if k < 2 {
        return Err(ForestError::InvalidHyperparams("k must be at least 2".into()));
    }
    if data.len() < k {
        return Err(ForestError::TooFewSamples {
            needed: k,
            got: data.len(),
        });
    }
    let folds = stratified_folds(&data.labels, k, seed);
    for (i, f) in folds.iter().enumerate() {
        if !f.iter().any(|&r| data.labels[r].is_erroneous()) {
            return Err(ForestError::DegenerateFold {
                fold: i,
                reason: "no erroneous samples to measure recall on".into(),
            });
        }
    }
    let mut mean_recall = Vec::with_capacity(grid.len());
    for hp in grid {
        let mut total = 0.0;
        for (i, val) in folds.iter().enumerate() {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let train = data.subset(&train_idx);
            let forest = Forest::fit(&train, hp, seed::derive(seed, 1000 + i as u64)).map_err(
                |e| match e {
                    ForestError::SingleClass(_) | ForestError::TooFewSamples { .. } => {
                        ForestError::DegenerateFold {
                            fold: i,
                            reason: e.to_string(),
                        }
                    }
                    other => other,
                },
            )?;
            total += forest.evaluate(&data.subset(val), None)?.recall();
        }
        mean_recall.push(total / k as f64);
    }
    let best = (0..grid.len())
        .min_by(|&a, &b| {
            mean_recall[b]
                .total_cmp(&mean_recall[a])
                .then(grid[a].num_trees.cmp(&grid[b].num_trees))
                .then(grid[a].max_depth.cmp(&grid[b].max_depth))
                .then(a.cmp(&b))
        })
        .expect("grid is non-empty");
    Ok(CvOutcome {
        best: grid[best].clone(),
        mean_recall,
    })
}

/// Summary of per-feature split usage, for reports.
pub fn split_counts(forest: &Forest) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in &forest.trees {
        for n in &t.nodes {
            if let Node::Split { feature, .. } = n {
                *m.entry(forest.feature_names[*feature].clone()).or_insert(0) += 1;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let mut samples = Vec::new();
        for _ in 0..n {
            let mut v = [0.0; 16];
            for x in v.iter_mut() {
                *x = rng.random::<f64>();
            }
            // vowel > 0.3 decides the label, with a margin around the cut
            let positive = rng.random::<bool>();
            v[6] = rng.random::<f64>() * 0.25 + if positive { 0.35 } else { 0.0 };
            let label = Label::from_bit(v[6] > 0.3);
            samples.push((FeatureVector(v), label));
        }
        Dataset::from_features(&samples)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini((10, 0)).unwrap(), 0.0);
        assert_eq!(gini((5, 5)).unwrap(), 0.5);
        assert!((gini((3, 1)).unwrap() - 0.375).abs() < 1e-15);
        assert!(matches!(gini((0, 0)), Err(ForestError::EmptyNode)));
    }

    #[test]
    fn defaults_match_tuned_settings() {
        let hp = Hyperparams::default();
        assert_eq!(hp.num_trees, 50);
        assert_eq!(hp.max_depth, 10);
        assert_eq!(hp.max_features.resolve(16), 4);
        assert_eq!(hp.min_samples_leaf, 2);
        assert_eq!(hp.min_samples_split, 10);
        assert!(hp.bootstrap);
        assert_eq!(hp.max_leaf_nodes, None);
        hp.validate().unwrap();
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let data = separable(50, 1);
        let hp = Hyperparams {
            num_trees: 0,
            ..Default::default()
        };
        assert!(matches!(Forest::fit(&data, &hp, 0), Err(ForestError::InvalidHyperparams(_))));
        let hp = Hyperparams {
            min_samples_split: 3,
            ..Default::default()
        };
        assert!(matches!(Forest::fit(&data, &hp, 0), Err(ForestError::InvalidHyperparams(_))));
    }

    #[test]
    fn single_class_rejected() {
        let mut data = separable(50, 1);
        data.labels.iter_mut().for_each(|l| *l = Label::Clean);
        assert!(matches!(
            Forest::fit(&data, &Hyperparams::default(), 0),
            Err(ForestError::SingleClass(_))
        ));
    }

    #[test]
    fn separable_training_accuracy_is_one() {
        let data = separable(200, 3);
        let forest = Forest::fit(&data, &Hyperparams::default(), 11).unwrap();
        assert_eq!(forest.evaluate(&data, None).unwrap().accuracy(), 1.0);
        let (mut pos, mut neg) = (vec![], vec![]);
        for (r, l) in data.rows.iter().zip(&data.labels) {
            let p = forest.predict_proba_row(r);
            assert!((0.0..=1.0).contains(&p));
            if l.is_erroneous() {
                pos.push(p)
            } else {
                neg.push(p)
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&pos) > mean(&neg));
    }

    #[test]
    fn trees_respect_depth_and_leaf_size() {
        let data = separable(300, 5);
        let hp = Hyperparams {
            max_depth: 3,
            ..Default::default()
        };
        let forest = Forest::fit(&data, &hp, 2).unwrap();
        for t in &forest.trees {
            assert!(t.depth() <= 3);
            assert!(t.leaves().all(|(_, n)| n >= hp.min_samples_leaf));
        }
    }

    #[test]
    fn max_leaf_nodes_caps_leaves() {
        let mut data = separable(300, 5);
        // noisy labels force deep trees
        let mut rng = seed::rng(9);
        for l in data.labels.iter_mut() {
            if rng.random::<f64>() < 0.3 {
                *l = Label::from_bit(!l.is_erroneous());
            }
        }
        let hp = Hyperparams {
            max_leaf_nodes: Some(5),
            num_trees: 5,
            ..Default::default()
        };
        let forest = Forest::fit(&data, &hp, 2).unwrap();
        for t in &forest.trees {
            assert!(t.leaves().count() <= 5);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(120, 8);
        let a = Forest::fit(&data, &Hyperparams::default(), 42).unwrap();
        let b = Forest::fit(&data, &Hyperparams::default(), 42).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = Forest::fit(&data, &Hyperparams::default(), 43).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn single_leaf_forest_probability() {
        let tree = DecisionTree {
            nodes: vec![Node::Leaf {
                value: 1.0,
                samples: 3,
            }],
        };
        let forest = Forest {
            hyperparams: Hyperparams::default(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            decision_threshold: 0.5,
            seed: 0,
            trees: vec![tree.clone(), tree],
        };
        assert_eq!(forest.predict_proba(&FeatureVector::zeros()), 1.0);
    }

    #[test]
    fn classify_threshold_rules() {
        let half = DecisionTree {
            nodes: vec![Node::Leaf {
                value: 0.5,
                samples: 2,
            }],
        };
        let forest = Forest {
            hyperparams: Hyperparams::default(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            decision_threshold: 0.5,
            seed: 0,
            trees: vec![half],
        };
        let fv = FeatureVector::zeros();
        assert_eq!(forest.classify(&fv, None).unwrap(), Label::Erroneous);
        assert_eq!(forest.classify(&fv, Some(0.0)).unwrap(), Label::Erroneous);
        assert_eq!(forest.classify(&fv, Some(0.51)).unwrap(), Label::Clean);
        assert!(matches!(forest.classify(&fv, Some(1.01)), Err(ForestError::InvalidThreshold(_))));
        assert!(matches!(forest.classify(&fv, Some(-0.1)), Err(ForestError::InvalidThreshold(_))));
    }

    #[test]
    fn confusion_identities() {
        let c = Confusion {
            tp: 93,
            fn_: 7,
            fp: 2,
            tn: 98,
        };
        assert_eq!(c.recall(), 0.93);
        assert_eq!(c.accuracy(), 191.0 / 200.0);
        assert!((c.false_negative_rate() - (1.0 - c.recall())).abs() < 1e-12);
        assert_eq!(c.false_positive_rate(), 0.02);
    }

    #[test]
    fn perfect_scores_reach_corner() {
        let labels = [Label::Clean, Label::Clean, Label::Erroneous, Label::Erroneous];
        let scores = [0.1, 0.2, 0.8, 0.9];
        let roc = roc_from_scores(&scores, &labels, 11).unwrap();
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!((roc[0].fpr, roc[0].tpr), (1.0, 1.0));
        assert_eq!(roc.len(), 11);
        assert!(matches!(
            roc_from_scores(&scores[..2], &labels[..2], 11),
            Err(ForestError::SingleClass(_))
        ));
    }

    #[test]
    fn random_scores_follow_diagonal() {
        let mut rng = seed::rng(77);
        let labels: Vec<Label> = (0..4000).map(|i| Label::from_bit(i % 2 == 0)).collect();
        let scores: Vec<f64> = labels.iter().map(|_| rng.random::<f64>()).collect();
        let roc = roc_from_scores(&scores, &labels, 21).unwrap();
        for p in &roc {
            // +-4 sigma for 2000 draws per class
            assert!((p.tpr - p.fpr).abs() < 0.07, "{p:?}");
        }
        assert!((auc(&roc) - 0.5).abs() < 0.03);
    }

    #[test]
    fn folds_are_stratified() {
        let labels = [Label::Clean, Label::Erroneous, Label::Clean, Label::Erroneous];
        let folds = stratified_folds(&labels, 2, 5);
        for f in &folds {
            assert_eq!(f.len(), 2);
            assert_eq!(f.iter().filter(|&&i| labels[i].is_erroneous()).count(), 1);
        }
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn cross_validation_selection() {
        let data = separable(200, 4);
        let one = vec![Hyperparams::default()];
        assert_eq!(cross_validate(&data, &one, 3, 1).unwrap().best, one[0]);
        let grid = vec![
            Hyperparams {
                num_trees: 10,
                max_depth: 4,
                ..Default::default()
            },
            Hyperparams {
                num_trees: 5,
                max_depth: 6,
                ..Default::default()
            },
        ];
        let out = cross_validate(&data, &grid, 4, 1).unwrap();
        assert_eq!(out.mean_recall, vec![1.0, 1.0]);
        // tie on recall: fewer trees wins
        assert_eq!(out.best, grid[1]);
        assert!(matches!(cross_validate(&data, &[], 4, 1), Err(ForestError::EmptyGrid)));
        assert!(cross_validate(&data, &grid, 1, 1).is_err());
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let data = separable(100, 2);
        let hp = Hyperparams {
            num_trees: 5,
            ..Default::default()
        };
        let forest = Forest::fit(&data, &hp, 1).unwrap();
        let text = forest.to_json().unwrap();
        let back = Forest::from_json(&text, &FEATURE_NAMES).unwrap();
        assert_eq!(back, forest);

        let mut reordered = forest.clone();
        reordered.feature_names.swap(0, 1);
        let err = Forest::from_json(&reordered.to_json().unwrap(), &FEATURE_NAMES).unwrap_err();
        assert!(matches!(err, ForestError::FeatureMismatch { .. }));

        let truncated = &text[..text.len() / 2];
        assert!(matches!(Forest::from_json(truncated, &FEATURE_NAMES), Err(ForestError::Json(_))));
    }
}
