//! Histogram gradient-boosted regression trees with a least-squares
//! objective.

mod bins;
mod format;
mod histogram;
mod tree;

use std::collections::BTreeMap;

pub use bins::{quantile_cuts, BinMap, BinnedData};
pub use format::{load_model, parse_model, save_model, FORMAT_VERSION};
pub use histogram::Histogram;
pub use tree::{best_split, grow_tree, Node, NodeStats, SplitDecision, Tree};

use crate::features::{Dataset, FeatureError, NormalizationParams};
use crate::rng::SplitMix64;

#[derive(Debug, thiserror::Error)]
pub enum GbdtError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("{set} set: labels missing")]
    MissingLabels { set: &'static str },
    #[error("{set} set: non-finite value in row {row}")]
    NonFinite { set: &'static str, row: usize },
    #[error("expected {expected} features per row, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("internal consistency: {0}")]
    Internal(String),
    #[error("model format version {found} not supported (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("corrupt model file at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub max_depth: u32,
    pub num_leaves: u32,
    pub n_estimators: u32,
    pub min_child_samples: u32,
    pub colsample_bytree: f64,
    pub subsample: f64,
    pub random_state: u64,
    pub max_bins: u32,
    /// L2 shrinkage on leaf values; 0 gives plain means.
    pub lambda_l2: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.04,
            max_depth: 5,
            num_leaves: 255,
            n_estimators: 200,
            min_child_samples: 3,
            colsample_bytree: 0.999,
            subsample: 0.57,
            random_state: 0,
            max_bins: 255,
            lambda_l2: 0.0,
        }
    }
}

pub const PARAM_NAMES: [&str; 10] = [
    "learning_rate",
    "max_depth",
    "num_leaves",
    "n_estimators",
    "min_child_samples",
    "colsample_bytree",
    "subsample",
    "random_state",
    "max_bins",
    "lambda_l2",
];

impl GbdtParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if self.num_leaves < 2 {
            return bad("num_leaves must be >= 2");
        }
        if self.n_estimators < 1 {
            return bad("n_estimators must be >= 1");
        }
        if self.min_child_samples < 1 {
            return bad("min_child_samples must be >= 1");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must be in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(2..=255).contains(&self.max_bins) {
            return bad("max_bins must be in [2, 255]");
        }
        if !(self.lambda_l2.is_finite() && self.lambda_l2 >= 0.0) {
            return bad("lambda_l2 must be >= 0");
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("max_depth", self.max_depth.to_string()),
            ("num_leaves", self.num_leaves.to_string()),
            ("n_estimators", self.n_estimators.to_string()),
            ("min_child_samples", self.min_child_samples.to_string()),
            ("colsample_bytree", format!("{:?}", self.colsample_bytree)),
            ("subsample", format!("{:?}", self.subsample)),
            ("random_state", self.random_state.to_string()),
            ("max_bins", self.max_bins.to_string()),
            ("lambda_l2", format!("{:?}", self.lambda_l2)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), GbdtError> {
        let bad = || GbdtError::InvalidParams(format!("{key}={value:?}"));
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<u32>().map_err(|_| bad());
        match key {
            "learning_rate" => self.learning_rate = f()?,
            "max_depth" => self.max_depth = u()?,
            "num_leaves" => self.num_leaves = u()?,
            "n_estimators" => self.n_estimators = u()?,
            "min_child_samples" => self.min_child_samples = u()?,
            "colsample_bytree" => self.colsample_bytree = f()?,
            "subsample" => self.subsample = f()?,
            "random_state" => self.random_state = value.parse().map_err(|_| bad())?,
            "max_bins" => self.max_bins = u()?,
            "lambda_l2" => self.lambda_l2 = f()?,
            _ => return Err(GbdtError::InvalidParams(format!("unknown parameter {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines over the defaults; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self, GbdtError> {
        let mut p = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GbdtError::InvalidParams(format!("not key=value: {line:?}")))?;
            p.set(k.trim(), v.trim())?;
        }
        p.validate()?;
        Ok(p)
    }
}

/// Row-major features with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Samples {
    pub fn from_dataset(d: &Dataset, set: &'static str) -> Result<Self, GbdtError> {
        let labels = d.labels().ok_or(GbdtError::MissingLabels { set })?;
        Ok(Self {
            features: d.rows.iter().map(|r| r.features().to_vec()).collect(),
            labels,
        })
    }

    fn check(&self, set: &'static str, arity: Option<usize>) -> Result<(), GbdtError> {
        if self.features.is_empty() {
            return Err(GbdtError::EmptySet(set));
        }
        if self.features.len() != self.labels.len() {
            return Err(GbdtError::LengthMismatch(self.features.len(), self.labels.len()));
        }
        let expected = arity.unwrap_or(self.features[0].len());
        for (row, (x, y)) in self.features.iter().zip(&self.labels).enumerate() {
            if x.len() != expected {
                return Err(GbdtError::Arity { expected, got: x.len() });
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(GbdtError::NonFinite { set, row });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub scaler: Option<NormalizationParams>,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub meta: BTreeMap<String, String>,
}

impl GbdtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.base_score + self.params.learning_rate * sum
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, GbdtError> {
        rows.iter()
            .map(|r| {
                if r.len() != self.n_features {
                    return Err(GbdtError::Arity { expected: self.n_features, got: r.len() });
                }
                Ok(self.predict_row(r))
            })
            .collect()
    }

    /// Raw (unscaled) features in, `(normalized, pages)` out.
    pub fn predict_pages(&self, raw: &[[f64; 2]]) -> Result<Vec<(f64, f64)>, GbdtError> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| GbdtError::InvalidParams("model carries no scaler".into()))?;
        let scaled = scaler.apply_features(raw)?;
        let rows: Vec<Vec<f64>> = scaled.iter().map(|r| r.to_vec()).collect();
        let norm = self.predict(&rows)?;
        let pages = scaler.invert_labels(&norm)?;
        Ok(norm.into_iter().zip(pages).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub train_sse: f64,
    pub train_rmse: f64,
    pub valid_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: GbdtModel,
    pub history: Vec<IterationStats>,
}

impl TrainReport {
    pub fn train_rmse(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.train_rmse)
    }

    pub fn valid_rmse(&self) -> Option<f64> {
        self.history.last().and_then(|h| h.valid_rmse)
    }
}

/// Running mean, exact for constant input.
fn mean(values: &[f64]) -> f64 {
    let mut m = 0.0;
    for (k, &v) in values.iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

fn sse(pred: &[f64], labels: &[f64]) -> f64 {
    pred.iter().zip(labels).map(|(p, y)| (y - p) * (y - p)).sum()
}

pub fn train(train_set: &Samples, valid_set: Option<&Samples>, params: &GbdtParams) -> Result<TrainReport, GbdtError> {
    params.validate()?;
    train_set.check("train", None)?;
    let n_features = train_set.features[0].len();
    if let Some(v) = valid_set {
        v.check("valid", Some(n_features))?;
    }
    let data = BinnedData::new(&train_set.features, params.max_bins as usize);
    let base_score = mean(&train_set.labels);
    let mut pred = vec![base_score; train_set.labels.len()];
    let mut valid_pred = valid_set.map(|v| vec![base_score; v.labels.len()]);
    let mut trees = Vec::with_capacity(params.n_estimators as usize);
    let mut history = Vec::with_capacity(params.n_estimators as usize);
    let mut residuals = vec![0.0; pred.len()];
    for t in 0..params.n_estimators {
        for ((r, y), p) in residuals.iter_mut().zip(&train_set.labels).zip(&pred) {
            *r = y - p;
        }
        let mut rng = SplitMix64::derive(params.random_state, u64::from(t));
        let tree = grow_tree(&data, &residuals, params, &mut rng)?;
        for (p, x) in pred.iter_mut().zip(&train_set.features) {
            *p += params.learning_rate * tree.predict(x);
        }
        if let (Some(vp), Some(v)) = (valid_pred.as_mut(), valid_set) {
            for (p, x) in vp.iter_mut().zip(&v.features) {
                *p += params.learning_rate * tree.predict(x);
            }
        }
        trees.push(tree);
        let train_sse = sse(&pred, &train_set.labels);
        history.push(IterationStats {
            train_sse,
            train_rmse: (train_sse / pred.len() as f64).sqrt(),
            valid_rmse: valid_pred.as_ref().zip(valid_set).map(|(vp, v)| rmse_unchecked(vp, &v.labels)),
        });
    }
    let last = history.last().copied().expect("n_estimators >= 1");
    let mut meta = BTreeMap::new();
    meta.insert("train_rmse".into(), format!("{:?}", last.train_rmse));
    if let Some(v) = last.valid_rmse {
        meta.insert("valid_rmse".into(), format!("{v:?}"));
    }
    meta.insert("seed".into(), params.random_state.to_string());
    meta.insert("n_train".into(), train_set.labels.len().to_string());
    Ok(TrainReport {
        model: GbdtModel {
            params: params.clone(),
            scaler: None,
            n_features,
            base_score,
            trees,
            meta,
        },
        history,
    })
}

fn rmse_unchecked(pred: &[f64], labels: &[f64]) -> f64 {
    (sse(pred, labels) / pred.len() as f64).sqrt()
}

pub fn rmse(pred: &[f64], labels: &[f64]) -> Result<f64, GbdtError> {
    if pred.len() != labels.len() {
        return Err(GbdtError::LengthMismatch(pred.len(), labels.len()));
    }
    if pred.is_empty() {
        return Err(GbdtError::EmptySet("prediction"));
    }
    Ok(rmse_unchecked(pred, labels))
}

/// Classification boosting weight `½ ln((1 - ε) / ε)`. `ε` is clamped to
/// `[1e-12, 1 - 1e-12]`; the flag reports whether clamping happened.
pub fn adaboost_weight(epsilon: f64) -> (f64, bool) {
    const LO: f64 = 1e-12;
    const HI: f64 = 1.0 - 1e-12;
    let e = if epsilon.is_nan() { 0.5 } else { epsilon.clamp(LO, HI) };
    let clamped = e != epsilon;
    (0.5 * ((1.0 - e) / e).ln(), clamped)
}
