//! Event logs and label logs → model-ready rows.

mod outliers;
mod scaler;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use outliers::{eliminate_outliers, OutlierPolicy};
pub use scaler::{fit_scaler, ColumnRange, NormalizationParams};

use crate::collector::FaultEvent;
use crate::rng::SplitMix64;
use crate::wss_probe::WssMeasurement;

pub const FEATURE_NAMES: [&str; 2] = ["fault_count", "delta_t_s"];
pub const LABEL_NAME: &str = "wss_pages";
pub const CSV_HEADER: &str = "fault_count,delta_t_s,wss_pages";

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("need at least 2 distinct timestamps, got {0}")]
    InsufficientData(usize),
    #[error("no row matched a label: {rows} rows, {labels} labels, max gap {max_gap_ns} ns")]
    EmptyJoin {
        rows: usize,
        labels: usize,
        max_gap_ns: u64,
    },
    #[error("outlier filter would drop {dropped} of {total} rows (limit {limit}); review the data")]
    OverAggressiveFilter {
        dropped: usize,
        total: usize,
        limit: usize,
    },
    #[error("input is empty")]
    EmptyInput,
    #[error("column {0} is constant on the fitting set; cannot scale")]
    DegenerateColumn(String),
    #[error("scaler has no column {0}")]
    MissingColumn(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("{0} split would be empty")]
    EmptySplit(&'static str),
    #[error("dataset line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("non-finite value in row {row}, column {column}")]
    NonFinite { row: usize, column: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub fault_count: f64,
    pub delta_t_s: f64,
    pub label_wss_pages: Option<f64>,
}

impl SampleRow {
    pub fn features(&self) -> [f64; 2] {
        [self.fault_count, self.delta_t_s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SampleRow>,
    /// Free-form provenance; lives in the sidecar, never in the CSV.
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(rows: Vec<SampleRow>, metadata: BTreeMap<String, String>) -> Self {
        Self { rows, metadata }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.label_wss_pages.is_some())
    }

    pub fn is_scaled(&self) -> bool {
        self.metadata.get("scaler_applied").is_some_and(|v| v == "true")
    }

    pub fn features(&self) -> Vec<[f64; 2]> {
        self.rows.iter().map(SampleRow::features).collect()
    }

    pub fn labels(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.label_wss_pages).collect()
    }

    pub fn check_finite(&self) -> Result<(), FeatureError> {
        for (i, r) in self.rows.iter().enumerate() {
            if !r.fault_count.is_finite() {
                return Err(FeatureError::NonFinite { row: i, column: "fault_count" });
            }
            if !r.delta_t_s.is_finite() {
                return Err(FeatureError::NonFinite { row: i, column: "delta_t_s" });
            }
            if r.label_wss_pages.is_some_and(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite { row: i, column: LABEL_NAME });
            }
        }
        Ok(())
    }

    /// Shortest round-trip float formatting; byte-identical for identical
    /// rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},", r.fault_count, r.delta_t_s);
            if let Some(l) = r.label_wss_pages {
                let _ = write!(out, "{l}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, FeatureError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
            Some((_, h)) => {
                return Err(FeatureError::Csv {
                    line: 1,
                    msg: format!("expected header {CSV_HEADER:?}, got {h:?}"),
                })
            }
            None => return Err(FeatureError::Csv { line: 1, msg: "missing header".into() }),
        }
        let mut rows = Vec::new();
        let mut labeled: Option<bool> = None;
        for (i, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| FeatureError::Csv { line: i + 1, msg };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
            let label = if cols[2].is_empty() { None } else { Some(num(cols[2])?) };
            match labeled {
                None => labeled = Some(label.is_some()),
                Some(l) if l != label.is_some() => {
                    return Err(err("label present on some rows but not others".into()))
                }
                _ => {}
            }
            rows.push(SampleRow {
                fault_count: num(cols[0])?,
                delta_t_s: num(cols[1])?,
                label_wss_pages: label,
            });
        }
        Ok(Self::new(rows, BTreeMap::new()))
    }

    pub fn metadata_text(&self) -> String {
        self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// One interval: the flush closing it, its count and Δt in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRow {
    pub ts_ns: u64,
    pub fault_count: f64,
    pub delta_t_s: f64,
}

/// `(ts_ns, count)` points → intervals. Points are sorted by timestamp;
/// equal timestamps merge by summing counts. Row `i` pairs point `i+1`'s
/// count with `t[i+1] - t[i]`.
pub fn compute_intervals(points: &[(u64, u64)]) -> Result<Vec<IntervalRow>, FeatureError> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.0);
    let mut merged: Vec<(u64, u64)> = Vec::with_capacity(sorted.len());
    for (ts, c) in sorted {
        match merged.last_mut() {
            Some(last) if last.0 == ts => last.1 += c,
            _ => merged.push((ts, c)),
        }
    }
    if merged.len() < 2 {
        return Err(FeatureError::InsufficientData(merged.len()));
    }
    Ok(merged
        .windows(2)
        .map(|w| IntervalRow {
            ts_ns: w[1].0,
            fault_count: w[1].1 as f64,
            delta_t_s: (w[1].0 - w[0].0) as f64 / 1e9,
        })
        .collect())
}

pub fn intervals_from_events(events: &[FaultEvent]) -> Result<Vec<IntervalRow>, FeatureError> {
    let points: Vec<(u64, u64)> = events.iter().map(|e| (e.kernel_ts_ns, e.fault_count)).collect();
    compute_intervals(&points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelPoint {
    pub ts_ns: u64,
    pub pages: f64,
}

impl From<&WssMeasurement> for LabelPoint {
    fn from(m: &WssMeasurement) -> Self {
        Self {
            ts_ns: m.measured_at_ns,
            pages: m.referenced_pages as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinPolicy {
    pub max_gap_ns: u64,
}

impl JoinPolicy {
    /// Half the ground-truth cadence.
    pub fn from_cadence_s(cadence_s: f64) -> Self {
        Self {
            max_gap_ns: (cadence_s * 1e9 / 2.0).round() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    pub rows: Vec<SampleRow>,
    pub unmatched: usize,
}

/// Nearest-label join; a label further than `max_gap_ns` does not count,
/// and of two equidistant labels the earlier wins.
pub fn join_labels(
    rows: &[IntervalRow],
    labels: &[LabelPoint],
    policy: JoinPolicy,
) -> Result<JoinOutcome, FeatureError> {
    let mut sorted = labels.to_vec();
    sorted.sort_by_key(|l| l.ts_ns);
    let mut out = Vec::with_capacity(rows.len());
    let mut unmatched = 0;
    for row in rows {
        let idx = sorted.partition_point(|l| l.ts_ns < row.ts_ns);
        let before = idx.checked_sub(1).map(|i| &sorted[i]);
        let after = sorted.get(idx);
        let dist = |l: &LabelPoint| l.ts_ns.abs_diff(row.ts_ns);
        let best = match (before, after) {
            (Some(b), Some(a)) => Some(if dist(a) < dist(b) { a } else { b }),
            (Some(b), None) => Some(b),
            (None, Some(a)) => Some(a),
            (None, None) => None,
        };
        match best.filter(|l| dist(l) <= policy.max_gap_ns) {
            Some(l) => out.push(SampleRow {
                fault_count: row.fault_count,
                delta_t_s: row.delta_t_s,
                label_wss_pages: Some(l.pages),
            }),
            None => unmatched += 1,
        }
    }
    if out.is_empty() {
        return Err(FeatureError::EmptyJoin {
            rows: rows.len(),
            labels: labels.len(),
            max_gap_ns: policy.max_gap_ns,
        });
    }
    Ok(JoinOutcome { rows: out, unmatched })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = FeatureError;
    fn from_str(s: &str) -> Result<Self, FeatureError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| FeatureError::InvalidRatios(s.to_string()))?;
        match parts.as_slice() {
            [train, valid, test] => Ok(Self {
                train: *train,
                valid: *valid,
                test: *test,
            }),
            _ => Err(FeatureError::InvalidRatios(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle, then valid and test take `floor(n * ratio)` rows and
/// train keeps the remainder.
pub fn split_dataset(data: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Splits, FeatureError> {
    let r = [ratios.train, ratios.valid, ratios.test];
    if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(FeatureError::InvalidRatios(format!(
            "{}, {}, {} must be positive and sum to 1",
            r[0], r[1], r[2]
        )));
    }
    let n = data.rows.len();
    let n_valid = (n as f64 * ratios.valid).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;
    let n_train = n.saturating_sub(n_valid + n_test);
    if n_train == 0 {
        return Err(FeatureError::EmptySplit("train"));
    }
    if n_valid == 0 {
        return Err(FeatureError::EmptySplit("valid"));
    }
    if n_test == 0 {
        return Err(FeatureError::EmptySplit("test"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    let take = |range: std::ops::Range<usize>, name: &str| {
        let mut meta = data.metadata.clone();
        meta.insert("split".into(), name.into());
        meta.insert("split_seed".into(), seed.to_string());
        Dataset::new(idx[range].iter().map(|&i| data.rows[i]).collect(), meta)
    };
    Ok(Splits {
        train: take(0..n_train, "train"),
        valid: take(n_train..n_train + n_valid, "valid"),
        test: take(n_train + n_valid..n, "test"),
    })
}
