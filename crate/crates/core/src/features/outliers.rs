use super::{FeatureError, SampleRow};

/// Tukey fences with multiplier `iqr_factor`, re-applied until no row
/// falls outside, capped at `max_drop_fraction` of the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPolicy {
    pub iqr_factor: f64,
    pub max_drop_fraction: f64,
}

impl Default for OutlierPolicy {
    fn default() -> Self {
        Self {
            iqr_factor: 3.0,
            max_drop_fraction: 0.10,
        }
    }
}

impl OutlierPolicy {
    pub fn describe(&self) -> String {
        format!(
            "iqr_fixed_point(k={}, max_drop={})",
            self.iqr_factor, self.max_drop_fraction
        )
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn columns(row: &SampleRow) -> impl Iterator<Item = f64> {
    [Some(row.fault_count), Some(row.delta_t_s), row.label_wss_pages]
        .into_iter()
        .flatten()
}

fn fences(rows: &[SampleRow], k: f64) -> Vec<(f64, f64)> {
    let arity = columns(&rows[0]).count();
    (0..arity)
        .map(|c| {
            let mut v: Vec<f64> = rows.iter().map(|r| columns(r).nth(c).unwrap()).collect();
            v.sort_by(f64::total_cmp);
            let q1 = quantile(&v, 0.25);
            let q3 = quantile(&v, 0.75);
            let iqr = q3 - q1;
            (q1 - k * iqr, q3 + k * iqr)
        })
        .collect()
}

/// Drops rows with any column outside its fences. Returns the kept rows
/// and how many were dropped.
pub fn eliminate_outliers(
    rows: &[SampleRow],
    policy: OutlierPolicy,
) -> Result<(Vec<SampleRow>, usize), FeatureError> {
    if rows.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let limit = (rows.len() as f64 * policy.max_drop_fraction).floor() as usize;
    let mut kept = rows.to_vec();
    loop {
        let f = fences(&kept, policy.iqr_factor);
        let before = kept.len();
        kept.retain(|r| columns(r).zip(&f).all(|(x, &(lo, hi))| x >= lo && x <= hi));
        let dropped = rows.len() - kept.len();
        if dropped > limit {
            return Err(FeatureError::OverAggressiveFilter {
                dropped,
                total: rows.len(),
                limit,
            });
        }
        if kept.len() == before || kept.is_empty() {
            return Ok((kept, dropped));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn row(a: f64, b: f64, c: f64) -> SampleRow {
        SampleRow {
            fault_count: a,
            delta_t_s: b,
            label_wss_pages: Some(c),
        }
    }

    #[test]
    fn identical_rows_all_kept() {
        let rows = vec![row(100.0, 0.5, 7.0); 50];
        let (kept, dropped) = eliminate_outliers(&rows, OutlierPolicy::default()).unwrap();
        assert_eq!(kept.len(), 50);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn single_extreme_row_dropped() {
        let mut rng = SplitMix64::new(1);
        let mut rows: Vec<SampleRow> = (0..999)
            .map(|_| row(100.0 + 10.0 * rng.next_f64(), 0.01 + 0.01 * rng.next_f64(), 50.0 + rng.next_f64()))
            .collect();
        let median_dt = 0.015;
        rows.insert(500, row(105.0, median_dt * 1e6, 50.5));
        let (kept, dropped) = eliminate_outliers(&rows, OutlierPolicy::default()).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 999);
        assert!(kept.iter().all(|r| r.delta_t_s < 1.0));
    }

    #[test]
    fn empty_input_error() {
        assert!(matches!(
            eliminate_outliers(&[], OutlierPolicy::default()),
            Err(FeatureError::EmptyInput)
        ));
    }

    #[test]
    fn over_aggressive_filter_refused() {
        // 85 identical rows and 15 far away: the fences collapse on the
        // majority and would remove 15% of the data
        let mut rows = vec![row(1.0, 1.0, 1.0); 85];
        rows.extend(vec![row(1000.0, 1.0, 1.0); 15]);
        assert!(matches!(
            eliminate_outliers(&rows, OutlierPolicy::default()),
            Err(FeatureError::OverAggressiveFilter { dropped: 15, .. })
        ));
    }

    #[test]
    fn quartiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
    }

    #[test]
    fn idempotent_on_random_data() {
        for seed in 0..30 {
            let mut rng = SplitMix64::new(seed);
            let rows: Vec<SampleRow> = (0..300)
                .map(|_| {
                    let heavy = if rng.below(50) == 0 { 40.0 } else { 1.0 };
                    row(rng.next_f64() * heavy, rng.next_f64(), rng.next_f64() * 3.0)
                })
                .collect();
            let Ok((once, _)) = eliminate_outliers(&rows, OutlierPolicy::default()) else {
                continue;
            };
            let (twice, dropped) = eliminate_outliers(&once, OutlierPolicy::default()).unwrap();
            assert_eq!(dropped, 0);
            assert_eq!(once, twice);
        }
    }
}
