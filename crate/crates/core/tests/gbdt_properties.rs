use proptest::prelude::*;
use wsse_core::gbdt::{self, BinnedData, GbdtParams, Histogram, Samples};
use wsse_core::rng::SplitMix64;

fn random_samples(n: usize, seed: u64) -> Samples {
    let mut rng = SplitMix64::new(seed);
    let features: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.next_f64() * 100.0, rng.next_f64()]).collect();
    let labels = features
        .iter()
        .map(|x| (x[0] / 10.0).sin() + 2.0 * x[1] + 0.3 * rng.next_f64())
        .collect();
    Samples { features, labels }
}

fn unlimited() -> GbdtParams {
    GbdtParams {
        learning_rate: 1.0,
        n_estimators: 1,
        max_depth: 64,
        num_leaves: 10_000,
        min_child_samples: 1,
        subsample: 1.0,
        colsample_bytree: 1.0,
        ..GbdtParams::default()
    }
}

#[test]
fn one_unlimited_tree_interpolates_distinct_rows() {
    let mut rng = SplitMix64::new(5);
    let features: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 * 0.37 + rng.next_f64() * 0.1]).collect();
    let labels: Vec<f64> = (0..100).map(|_| rng.next_f64() * 50.0 - 25.0).collect();
    let s = Samples { features, labels };
    let report = gbdt::train(&s, None, &unlimited()).unwrap();
    assert!(report.train_rmse() < 1e-6, "rmse {}", report.train_rmse());
    assert_eq!(report.model.trees[0].n_leaves(), 100);
}

#[test]
fn scaling_features_by_power_of_two_changes_nothing() {
    let s = random_samples(300, 11);
    let scaled = Samples {
        features: s.features.iter().map(|x| x.iter().map(|v| v * 8.0).collect()).collect(),
        labels: s.labels.clone(),
    };
    let p = GbdtParams {
        n_estimators: 20,
        ..GbdtParams::default()
    };
    let a = gbdt::train(&s, None, &p).unwrap();
    let b = gbdt::train(&scaled, None, &p).unwrap();
    let pa = a.model.predict(&s.features).unwrap();
    let pb = b.model.predict(&scaled.features).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn same_seed_same_model_other_seed_differs() {
    let s = random_samples(400, 2);
    let p = GbdtParams {
        n_estimators: 15,
        random_state: 77,
        ..GbdtParams::default()
    };
    let a = gbdt::train(&s, None, &p).unwrap().model;
    let b = gbdt::train(&s, None, &p).unwrap().model;
    assert_eq!(a, b);
    let c = gbdt::train(&s, None, &GbdtParams { random_state: 78, ..p }).unwrap().model;
    assert_ne!(a.trees, c.trees);
}

#[test]
fn saved_model_reloads_with_identical_predictions() {
    let s = random_samples(300, 8);
    let p = GbdtParams {
        n_estimators: 25,
        ..GbdtParams::default()
    };
    let model = gbdt::train(&s, None, &p).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    gbdt::save_model(&model, &path).unwrap();
    let back = gbdt::load_model(&path).unwrap();
    let probe = random_samples(200, 99);
    assert_eq!(model.predict(&probe.features).unwrap(), back.predict(&probe.features).unwrap());
    assert_eq!(back.params, model.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_sse_never_increases(seed in any::<u64>(), lr in prop::sample::select(vec![0.04, 0.3, 0.5, 1.0])) {
        let s = random_samples(120, seed);
        let p = GbdtParams { learning_rate: lr, n_estimators: 30, random_state: seed, ..GbdtParams::default() };
        let report = gbdt::train(&s, None, &p).unwrap();
        let initial = {
            let m = s.labels.iter().sum::<f64>() / s.labels.len() as f64;
            s.labels.iter().map(|y| (y - m) * (y - m)).sum::<f64>()
        };
        let mut prev = initial;
        for h in &report.history {
            prop_assert!(h.train_sse <= prev, "{} > {}", h.train_sse, prev);
            prev = h.train_sse;
        }
    }

    #[test]
    fn sibling_by_subtraction_matches_direct(seed in any::<u64>(), n in 2usize..400) {
        let mut rng = SplitMix64::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![(rng.next_f64() * 40.0).floor()]).collect();
        let residuals: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let data = BinnedData::new(&rows, 255);
        let n_bins = data.map.n_bins(0);
        let all: Vec<u32> = (0..n as u32).collect();
        let (left, right): (Vec<u32>, Vec<u32>) = all.iter().partition(|_| rng.below(2) == 0);
        let parent = Histogram::build(&all, &residuals, &data.columns[0], n_bins);
        let direct = Histogram::build(&right, &residuals, &data.columns[0], n_bins);
        let small = Histogram::build(&left, &residuals, &data.columns[0], n_bins);
        let derived = parent.subtract(&small).unwrap();
        prop_assert_eq!(&derived.count, &direct.count);
        for (a, b) in derived.grad.iter().zip(&direct.grad) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
