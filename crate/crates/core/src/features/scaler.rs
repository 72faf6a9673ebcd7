use super::{Dataset, FeatureError, SampleRow, FEATURE_NAMES, LABEL_NAME};

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * (self.max - self.min) + self.min
    }
}

/// Min-max bounds per column, features first, label last when present.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub columns: Vec<ColumnRange>,
}

/// Fits bounds on `data`, which must be the training split.
pub fn fit_scaler(data: &Dataset) -> Result<NormalizationParams, FeatureError> {
    if data.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    data.check_finite()?;
    let mut cols: Vec<(&str, Vec<f64>)> = vec![
        (FEATURE_NAMES[0], data.rows.iter().map(|r| r.fault_count).collect()),
        (FEATURE_NAMES[1], data.rows.iter().map(|r| r.delta_t_s).collect()),
    ];
    if let Some(labels) = data.labels() {
        cols.push((LABEL_NAME, labels));
    }
    let columns = cols
        .into_iter()
        .map(|(name, values)| {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= min {
                return Err(FeatureError::DegenerateColumn(name.to_string()));
            }
            Ok(ColumnRange { name: name.to_string(), min, max })
        })
        .collect::<Result<_, _>>()?;
    Ok(NormalizationParams { columns })
}

impl NormalizationParams {
    pub fn column(&self, name: &str) -> Result<&ColumnRange, FeatureError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| FeatureError::MissingColumn(name.to_string()))
    }

    /// Scales features and, when both are present, labels. Values outside
    /// the fitted range are not clamped.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset, FeatureError> {
        let fc = self.column(FEATURE_NAMES[0])?;
        let dt = self.column(FEATURE_NAMES[1])?;
        let label = self.column(LABEL_NAME).ok();
        let rows = data
            .rows
            .iter()
            .map(|r| {
                Ok(SampleRow {
                    fault_count: fc.apply(r.fault_count),
                    delta_t_s: dt.apply(r.delta_t_s),
                    label_wss_pages: match (r.label_wss_pages, label) {
                        (Some(v), Some(l)) => Some(l.apply(v)),
                        (None, _) => None,
                        (Some(_), None) => return Err(FeatureError::MissingColumn(LABEL_NAME.into())),
                    },
                })
            })
            .collect::<Result<_, _>>()?;
        let mut meta = data.metadata.clone();
        meta.insert("scaler_applied".into(), "true".into());
        Ok(Dataset::new(rows, meta))
    }

    pub fn apply_features(&self, features: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, FeatureError> {
        let fc = self.column(FEATURE_NAMES[0])?;
        let dt = self.column(FEATURE_NAMES[1])?;
        Ok(features.iter().map(|f| [fc.apply(f[0]), dt.apply(f[1])]).collect())
    }

    /// Normalized label values back to pages.
    pub fn invert_labels(&self, values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let l = self.column(LABEL_NAME)?;
        Ok(values.iter().map(|&v| l.invert(v)).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "columns={}\n",
            self.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(",")
        );
        for c in &self.columns {
            out.push_str(&format!("{}={},{}\n", c.name, c.min, c.max));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let kv = super::parse_key_values(text);
        let bad = |msg: String| FeatureError::Csv { line: 0, msg };
        let names = kv.get("columns").ok_or_else(|| bad("scaler: missing columns".into()))?;
        let columns = names
            .split(',')
            .map(|name| {
                let v = kv.get(name).ok_or_else(|| bad(format!("scaler: missing {name}")))?;
                let (lo, hi) = v.split_once(',').ok_or_else(|| bad(format!("scaler: bad {name}")))?;
                let min: f64 = lo.parse().map_err(|_| bad(format!("scaler: bad min {lo:?}")))?;
                let max: f64 = hi.parse().map_err(|_| bad(format!("scaler: bad max {hi:?}")))?;
                if !(min.is_finite() && max.is_finite() && max > min) {
                    return Err(FeatureError::DegenerateColumn(name.to_string()));
                }
                Ok(ColumnRange { name: name.to_string(), min, max })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { columns })
    }
}
