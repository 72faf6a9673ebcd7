//! Uniform random search over GBDT hyperparameters.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::gbdt::{self, GbdtError, GbdtParams, Samples};
use crate::rng::SplitMix64;

#[derive(Debug, thiserror::Error)]
pub enum TunerError {
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error("domain for {0} is empty or malformed")]
    BadDomain(&'static str),
    #[error("all {0} trials failed; first error: {1}")]
    AllFailed(usize, String),
}

/// A union of closed intervals. Integer domains are inclusive ranges.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Real(Vec<(f64, f64)>),
    Int(Vec<(i64, i64)>),
}

impl Domain {
    pub fn point(x: f64) -> Self {
        Domain::Real(vec![(x, x)])
    }

    fn is_valid(&self) -> bool {
        match self {
            Domain::Real(iv) => !iv.is_empty() && iv.iter().all(|(a, b)| a.is_finite() && b.is_finite() && a <= b),
            Domain::Int(iv) => !iv.is_empty() && iv.iter().all(|(a, b)| a <= b),
        }
    }

    /// Uniform over the union: intervals are picked in proportion to
    /// their length (integer: their size).
    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match self {
            Domain::Real(iv) => {
                let total: f64 = iv.iter().map(|(a, b)| b - a).sum();
                if total == 0.0 {
                    return iv[rng.below(iv.len() as u64) as usize].0;
                }
                let mut u = rng.next_f64() * total;
                for &(a, b) in iv {
                    let len = b - a;
                    if u < len {
                        return a + u;
                    }
                    u -= len;
                }
                let (a, b) = *iv.iter().rev().find(|(a, b)| b > a).expect("positive total length");
                a + (b - a) * 0.5
            }
            Domain::Int(iv) => {
                let total: u64 = iv.iter().map(|(a, b)| (b - a) as u64 + 1).sum();
                let mut k = rng.below(total);
                for &(a, b) in iv {
                    let size = (b - a) as u64 + 1;
                    if k < size {
                        return (a + k as i64) as f64;
                    }
                    k -= size;
                }
                unreachable!("k < total")
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            Domain::Real(iv) => iv.iter().any(|&(a, b)| a <= x && x <= b),
            Domain::Int(iv) => x.fract() == 0.0 && iv.iter().any(|&(a, b)| a as f64 <= x && x <= b as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    /// Searched parameters, by `GbdtParams` key.
    pub domains: Vec<(&'static str, Domain)>,
    /// Values for everything not searched, including `subsample`.
    pub base: GbdtParams,
}

/// The optimal intervals.
pub fn default_space() -> SearchSpace {
    SearchSpace {
        domains: vec![
            ("learning_rate", Domain::Real(vec![(0.0245, 0.0425)])),
            ("max_depth", Domain::Int(vec![(4, 5)])),
            ("num_leaves", Domain::Int(vec![(25, 300)])),
            ("n_estimators", Domain::Int(vec![(100, 200)])),
            ("min_child_samples", Domain::Int(vec![(2, 3)])),
            ("colsample_bytree", Domain::Real(vec![(0.75, 1.0)])),
        ],
        base: GbdtParams::default(),
    }
}

/// Optimal and suboptimal intervals together.
pub fn wide_space() -> SearchSpace {
    SearchSpace {
        domains: vec![
            ("learning_rate", Domain::Real(vec![(0.023, 0.073)])),
            ("max_depth", Domain::Int(vec![(3, 7)])),
            ("num_leaves", Domain::Int(vec![(8, 23), (25, 300)])),
            ("n_estimators", Domain::Int(vec![(99, 310)])),
            ("min_child_samples", Domain::Int(vec![(1, 4)])),
            ("colsample_bytree", Domain::Real(vec![(0.75, 1.0)])),
        ],
        base: GbdtParams::default(),
    }
}

fn param_value(p: &GbdtParams, key: &str) -> Option<f64> {
    Some(match key {
        "learning_rate" => p.learning_rate,
        "max_depth" => p.max_depth.into(),
        "num_leaves" => p.num_leaves.into(),
        "n_estimators" => p.n_estimators.into(),
        "min_child_samples" => p.min_child_samples.into(),
        "colsample_bytree" => p.colsample_bytree,
        "subsample" => p.subsample,
        "lambda_l2" => p.lambda_l2,
        _ => return None,
    })
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TunerError> {
        for (name, d) in &self.domains {
            if !d.is_valid() || param_value(&self.base, name).is_none() {
                return Err(TunerError::BadDomain(name));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> GbdtParams {
        let mut p = self.base.clone();
        for (name, d) in &self.domains {
            let x = d.sample(rng);
            let text = match d {
                Domain::Int(_) => format!("{}", x as i64),
                Domain::Real(_) => format!("{x:?}"),
            };
            p.set(name, &text).expect("validated domain names");
        }
        p
    }

    pub fn contains(&self, p: &GbdtParams) -> bool {
        self.domains
            .iter()
            .all(|(name, d)| param_value(p, name).is_some_and(|x| d.contains(x)))
    }

    /// Collapses every domain to the base value, for degenerate searches.
    pub fn single_point(base: GbdtParams) -> Self {
        let domains = default_space()
            .domains
            .into_iter()
            .map(|(name, d)| {
                let x = param_value(&base, name).expect("known key");
                let d = match d {
                    Domain::Int(_) => Domain::Int(vec![(x as i64, x as i64)]),
                    Domain::Real(_) => Domain::point(x),
                };
                (name, d)
            })
            .collect();
        Self { domains, base }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub trial: usize,
    pub params: GbdtParams,
    /// `(valid_rmse, test_rmse)` or the failure message.
    pub result: Result<(f64, f64), String>,
    pub wall_s: f64,
}

impl TrialReport {
    pub fn valid_rmse(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.0)
    }

    /// `trial=<n> rmse_valid=<f> rmse_test=<f> params{k=v,...}`.
    pub fn log_line(&self, space: &SearchSpace) -> String {
        let mut out = format!("trial={} ", self.trial);
        match &self.result {
            Ok((v, t)) => {
                let _ = write!(out, "rmse_valid={v:.6} rmse_test={t:.6} ");
            }
            Err(e) => {
                let _ = write!(out, "failed={e:?} ");
            }
        }
        let pairs = self.params.to_pairs();
        let shown: Vec<String> = space
            .domains
            .iter()
            .filter_map(|(name, _)| pairs.iter().find(|(k, _)| k == name))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let _ = write!(out, "params{{{}}}", shown.join(","));
        out
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub trials: Vec<TrialReport>,
    /// Index into `trials` of the lowest validation RMSE; earlier wins ties.
    pub best: usize,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialReport {
        &self.trials[self.best]
    }
}

fn run_trial(params: &GbdtParams, train: &Samples, valid: &Samples, test: &Samples) -> Result<(f64, f64), GbdtError> {
    let report = gbdt::train(train, Some(valid), params)?;
    let v = report.valid_rmse().expect("valid set given");
    let t = gbdt::rmse(&report.model.predict(&test.features)?, &test.labels)?;
    Ok((v, t))
}

/// Trial `i` draws from `SplitMix64::derive(seed, i)` and trains with
/// `random_state = seed`, so the outcome does not depend on scheduling.
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    train: &Samples,
    valid: &Samples,
    test: &Samples,
) -> Result<SearchOutcome, TunerError> {
    if n_trials == 0 {
        return Err(TunerError::NoTrials);
    }
    space.validate()?;
    let trials: Vec<TrialReport> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = SplitMix64::derive(seed, trial as u64);
            let mut params = space.sample(&mut rng);
            params.random_state = seed;
            let start = Instant::now();
            let result = run_trial(&params, train, valid, test).map_err(|e| e.to_string());
            TrialReport {
                trial,
                params,
                result,
                wall_s: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let best = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.valid_rmse().map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, bv)) if bv <= v => acc,
            _ => Some((i, v)),
        });
    match best {
        Some((best, _)) => Ok(SearchOutcome { trials, best }),
        None => {
            let first = trials[0].result.clone().err().unwrap_or_default();
            Err(TunerError::AllFailed(n_trials, first))
        }
    }
}
