//! Labeled dataset → outlier filter → split → scale → train → test RMSE.

use crate::features::{
    eliminate_outliers, fit_scaler, split_dataset, Dataset, FeatureError, NormalizationParams, OutlierPolicy,
    SplitRatios, Splits,
};
use crate::gbdt::{self, GbdtError, GbdtParams, Samples, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error("dataset has no labels")]
    Unlabeled,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepareConfig {
    pub outliers: OutlierPolicy,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Scaled splits plus the bounds fitted on the training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: Splits,
    pub scaler: NormalizationParams,
    pub dropped_outliers: usize,
}

pub fn prepare(data: &Dataset, cfg: &PrepareConfig) -> Result<Prepared, PipelineError> {
    if !data.is_labeled() {
        return Err(PipelineError::Unlabeled);
    }
    data.check_finite()?;
    let (rows, dropped) = eliminate_outliers(&data.rows, cfg.outliers)?;
    let mut meta = data.metadata.clone();
    meta.insert("outlier_policy".into(), cfg.outliers.describe());
    meta.insert("outliers_dropped".into(), dropped.to_string());
    let filtered = Dataset::new(rows, meta);
    let raw = split_dataset(&filtered, cfg.ratios, cfg.seed)?;
    let scaler = fit_scaler(&raw.train)?;
    let splits = Splits {
        train: scaler.apply(&raw.train)?,
        valid: scaler.apply(&raw.valid)?,
        test: scaler.apply(&raw.test)?,
    };
    Ok(Prepared {
        splits,
        scaler,
        dropped_outliers: dropped,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: TrainReport,
    /// On normalized labels.
    pub test_rmse: f64,
}

impl Evaluation {
    pub fn train_rmse(&self) -> f64 {
        self.report.train_rmse()
    }

    pub fn valid_rmse(&self) -> f64 {
        self.report.valid_rmse().unwrap_or(f64::NAN)
    }
}

/// Trains on the scaled splits and attaches the scaler to the model.
pub fn train_prepared(p: &Prepared, params: &GbdtParams) -> Result<Evaluation, PipelineError> {
    let train = Samples::from_dataset(&p.splits.train, "train")?;
    let valid = Samples::from_dataset(&p.splits.valid, "valid")?;
    let test = Samples::from_dataset(&p.splits.test, "test")?;
    let mut report = gbdt::train(&train, Some(&valid), params)?;
    let test_rmse = gbdt::rmse(&report.model.predict(&test.features)?, &test.labels)?;
    report.model.scaler = Some(p.scaler.clone());
    report.model.meta.insert("test_rmse".into(), format!("{test_rmse:?}"));
    report
        .model
        .meta
        .insert("outliers_dropped".into(), p.dropped_outliers.to_string());
    Ok(Evaluation { report, test_rmse })
}

pub fn run(data: &Dataset, cfg: &PrepareConfig, params: &GbdtParams) -> Result<Evaluation, PipelineError> {
    train_prepared(&prepare(data, cfg)?, params)
}
