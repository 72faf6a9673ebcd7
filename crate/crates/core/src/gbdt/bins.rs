/// Ascending cut points per feature. A value `x` lands in bin
/// `#{cut < x}`, so `x <= cuts[b]` is exactly "bin at most `b`".
#[derive(Debug, Clone, PartialEq)]
pub struct BinMap {
    pub cuts: Vec<Vec<f64>>,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Equal-frequency cuts for one column. Columns with at most `max_bins`
/// distinct values get one cut between each neighbouring pair.
pub fn quantile_cuts(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut distinct = v.clone();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = v.len();
    let mut cuts: Vec<f64> = Vec::with_capacity(max_bins - 1);
    for j in 1..max_bins {
        let upper = v[(j * n).div_ceil(max_bins) - 1];
        let next = distinct.partition_point(|&d| d <= upper);
        if let Some(&above) = distinct.get(next) {
            let c = midpoint(upper, above);
            if cuts.last().is_none_or(|&last| c > last) {
                cuts.push(c);
            }
        }
    }
    cuts
}

impl BinMap {
    /// `columns[f]` holds every training value of feature `f`.
    pub fn build(columns: &[Vec<f64>], max_bins: usize) -> Self {
        Self {
            cuts: columns.iter().map(|c| quantile_cuts(c, max_bins)).collect(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub fn bin(&self, feature: usize, x: f64) -> u16 {
        self.cuts[feature].partition_point(|&c| c < x) as u16
    }

    /// Value that separates bin `b` from bin `b + 1`.
    pub fn threshold(&self, feature: usize, b: u16) -> f64 {
        self.cuts[feature][b as usize]
    }
}

/// Column-major bin indices of a training set.
#[derive(Debug, Clone)]
pub struct BinnedData {
    pub map: BinMap,
    pub columns: Vec<Vec<u16>>,
    pub n_rows: usize,
}

impl BinnedData {
    pub fn new(rows: &[Vec<f64>], max_bins: usize) -> Self {
        let n_features = rows.first().map_or(0, Vec::len);
        let raw: Vec<Vec<f64>> = (0..n_features)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect();
        let map = BinMap::build(&raw, max_bins);
        let columns = raw
            .iter()
            .enumerate()
            .map(|(f, col)| col.iter().map(|&x| map.bin(f, x)).collect())
            .collect();
        Self {
            map,
            columns,
            n_rows: rows.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quartiles_of_0_to_999() {
        let values: Vec<f64> = (0..1000).map(f64::from).collect();
        let map = BinMap::build(std::slice::from_ref(&values), 4);
        assert_eq!(map.cuts[0].len(), 3);
        // brute-force oracle: count values per bin
        let mut counts = [0usize; 4];
        for &x in &values {
            counts[map.bin(0, x) as usize] += 1;
        }
        for c in counts {
            assert!((240..=260).contains(&c), "{counts:?}");
        }
        for (cut, q) in map.cuts[0].iter().zip([250.0, 500.0, 750.0]) {
            assert!((cut - q).abs() <= 1.0, "{cut} vs {q}");
        }
    }

    #[test]
    fn constant_column_single_bin() {
        let map = BinMap::build(&[vec![3.0; 50]], 255);
        assert!(map.cuts[0].is_empty());
        assert_eq!(map.n_bins(0), 1);
        assert_eq!(map.bin(0, 3.0), 0);
    }

    #[test]
    fn two_distinct_two_bins() {
        let map = BinMap::build(&[vec![1.0, 2.0, 1.0, 2.0]], 255);
        assert_eq!(map.n_bins(0), 2);
        assert_eq!(map.bin(0, 1.0), 0);
        assert_eq!(map.bin(0, 2.0), 1);
    }

    #[test]
    fn adjacent_floats_still_split() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let map = BinMap::build(&[vec![a, b]], 255);
        assert_eq!((map.bin(0, a), map.bin(0, b)), (0, 1));
    }

    proptest! {
        #[test]
        fn cuts_increasing_and_bins_in_range(
            values in proptest::collection::vec(-1e6f64..1e6, 1..400),
            max_bins in 2usize..=255,
        ) {
            let map = BinMap::build(std::slice::from_ref(&values), max_bins);
            let cuts = &map.cuts[0];
            prop_assert!(cuts.len() < max_bins);
            prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
            for &x in &values {
                let b = map.bin(0, x);
                prop_assert!((b as usize) < max_bins);
                if (b as usize) < cuts.len() {
                    prop_assert!(x <= map.threshold(0, b));
                }
                if b > 0 {
                    prop_assert!(x > map.threshold(0, b - 1));
                }
            }
        }
    }
}
