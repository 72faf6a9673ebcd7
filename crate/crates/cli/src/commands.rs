use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use wsse_core::collector::{read_event_log, write_events, FaultEvent};
use wsse_core::features::{
    self, intervals_from_events, join_labels, Dataset, JoinPolicy, LabelPoint, NormalizationParams, OutlierPolicy,
    SplitRatios,
};
use wsse_core::gbdt::{self, load_model, save_model, GbdtModel, GbdtParams, Samples};
use wsse_core::io::write_atomic;
use wsse_core::pipeline::{self, PrepareConfig};
use wsse_core::simulator::{emit_labeled_dataset, SimulationConfig};
use wsse_core::tuner::{self, random_search};
use wsse_core::wss_probe;

use crate::exit::{DataError, UsageError};
use crate::{
    Cli, Command, EvaluateArgs, PredictArgs, PreprocessArgs, SimulateArgs, SplitOpts, SweepArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Collect(a) => crate::system::collect(cli, a),
        Command::Wss(a) => crate::system::wss(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Preprocess(a) => preprocess(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Predict(a) => predict(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::BenchOverhead(a) => crate::system::bench_overhead(cli, a),
        Command::Workload(a) => crate::system::workload(a),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_out(path: &Path, contents: &[u8]) -> Result<()> {
    write_atomic(path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Metadata plus wall-clock fields, which stay out of the data files.
pub fn write_sidecar(path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut meta = meta.clone();
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    meta.insert("created_at_unix_s".into(), now.to_string());
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_out(&sidecar(path), text.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut d = Dataset::from_csv(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if let Ok(meta) = std::fs::read_to_string(sidecar(path)) {
        d.metadata = features::parse_key_values(&meta);
        d.metadata.remove("created_at_unix_s");
    }
    Ok(d)
}

pub fn read_events(path: &Path) -> Result<Vec<FaultEvent>> {
    let file = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    read_event_log(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn prepare_config(cli: &Cli, split: &SplitOpts) -> Result<PrepareConfig> {
    let ratios: SplitRatios = split.ratios.parse().map_err(|e| UsageError(format!("--ratios: {e}")))?;
    if !(split.iqr_factor.is_finite() && split.iqr_factor >= 0.0) || !(0.0..=1.0).contains(&split.max_drop) {
        return Err(UsageError("--iqr-factor must be >= 0 and --max-drop in [0, 1]".into()).into());
    }
    Ok(PrepareConfig {
        outliers: OutlierPolicy {
            iqr_factor: split.iqr_factor,
            max_drop_fraction: split.max_drop,
        },
        ratios,
        seed: cli.seed.unwrap_or(0),
    })
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let mut cfg = SimulationConfig::parse(&read_text(&a.spec)?).with_context(|| format!("parsing {}", a.spec.display()))?;
    if let Some(seed) = cli.seed {
        cfg.workload.seed = seed;
    }
    let run = emit_labeled_dataset(&cfg)?;
    let data = run.to_dataset()?;
    let out = cli.out_path(&a.out);
    write_out(&out, data.to_csv().as_bytes())?;
    write_sidecar(&out, &data.metadata)?;
    if let Some(p) = &a.events {
        let mut buf = Vec::new();
        write_events(&run.to_fault_events(), &mut buf)?;
        write_out(&cli.out_path(p), &buf)?;
    }
    if let Some(p) = &a.labels {
        let text: String = run.to_measurements().iter().map(|m| format!("{m}\n")).collect();
        write_out(&cli.out_path(p), text.as_bytes())?;
    }
    println!(
        "rows={} faults={} flushed={} residual={}",
        data.len(),
        run.fault_total,
        run.records.len(),
        run.residual
    );
    Ok(())
}

fn labeled_from_logs(events: &Path, labels: &Path, cadence: f64) -> Result<Dataset> {
    if !(cadence.is_finite() && cadence > 0.0) {
        return Err(UsageError("--cadence must be positive".into()).into());
    }
    let ev = read_events(events)?;
    let intervals = intervals_from_events(&ev)?;
    let measurements =
        wss_probe::read_label_log(&read_text(labels)?).map_err(|e| DataError(format!("{}: {e}", labels.display())))?;
    let points: Vec<LabelPoint> = measurements.iter().map(LabelPoint::from).collect();
    let joined = join_labels(&intervals, &points, JoinPolicy::from_cadence_s(cadence))?;
    if joined.unmatched > 0 {
        log::warn!("{} interval rows had no label within {} s", joined.unmatched, cadence / 2.0);
    }
    let mut meta = BTreeMap::new();
    meta.insert("source".into(), "event_log".into());
    meta.insert("cadence_s".into(), format!("{cadence}"));
    meta.insert("unmatched_rows".into(), joined.unmatched.to_string());
    Ok(Dataset::new(joined.rows, meta))
}

fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<()> {
    let cfg = prepare_config(cli, &a.split)?;
    let data = match (&a.data, &a.events, &a.labels) {
        (Some(d), _, _) => read_dataset(d)?,
        (None, Some(e), Some(l)) => labeled_from_logs(e, l, a.cadence)?,
        _ => return Err(UsageError("give --data, or --events with --labels".into()).into()),
    };
    let prepared = pipeline::prepare(&data, &cfg)?;
    let prefix = cli.out_path(&a.out_prefix);
    for (name, split) in [
        ("train", &prepared.splits.train),
        ("valid", &prepared.splits.valid),
        ("test", &prepared.splits.test),
    ] {
        let path = with_suffix(&prefix, &format!(".{name}.csv"));
        write_out(&path, split.to_csv().as_bytes())?;
        write_sidecar(&path, &split.metadata)?;
    }
    write_out(&with_suffix(&prefix, ".scaler"), prepared.scaler.to_text().as_bytes())?;
    println!(
        "train={} valid={} test={} outliers_dropped={}",
        prepared.splits.train.len(),
        prepared.splits.valid.len(),
        prepared.splits.test.len(),
        prepared.dropped_outliers
    );
    Ok(())
}

fn load_params(cli: &Cli, path: Option<&Path>) -> Result<GbdtParams> {
    let mut p = match path {
        Some(p) => GbdtParams::from_text(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => GbdtParams::default(),
    };
    if let Some(seed) = cli.seed {
        p.random_state = seed;
    }
    Ok(p)
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let params = load_params(cli, a.params.as_deref())?;
    let model_path = cli.out_path(&a.model);
    let model = match (&a.data, &a.train, &a.valid, &a.scaler) {
        (Some(d), ..) => {
            let eval = pipeline::run(&read_dataset(d)?, &prepare_config(cli, &a.split)?, &params)?;
            println!(
                "train_rmse={:.6} valid_rmse={:.6} test_rmse={:.6}",
                eval.train_rmse(),
                eval.valid_rmse(),
                eval.test_rmse
            );
            eval.report.model
        }
        (None, Some(t), Some(v), Some(s)) => {
            let train_set = Samples::from_dataset(&read_dataset(t)?, "train")?;
            let valid_set = Samples::from_dataset(&read_dataset(v)?, "valid")?;
            let scaler = NormalizationParams::from_text(&read_text(s)?)?;
            let mut report = gbdt::train(&train_set, Some(&valid_set), &params)?;
            println!(
                "train_rmse={:.6} valid_rmse={:.6}",
                report.train_rmse(),
                report.valid_rmse().unwrap_or(f64::NAN)
            );
            report.model.scaler = Some(scaler);
            report.model
        }
        _ => return Err(UsageError("give --data, or --train with --valid and --scaler".into()).into()),
    };
    save_model(&model, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    Ok(())
}

fn open_model(path: &Path) -> Result<GbdtModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let model = open_model(&a.model)?;
    let (ts, raw): (Vec<Option<u64>>, Vec<[f64; 2]>) = match (&a.events, &a.data) {
        (Some(e), _) => intervals_from_events(&read_events(e)?)?
            .into_iter()
            .map(|r| (Some(r.ts_ns), [r.fault_count, r.delta_t_s]))
            .unzip(),
        (None, Some(d)) => read_dataset(d)?.rows.iter().map(|r| (None, r.features())).unzip(),
        (None, None) => return Err(UsageError("give --events or --data".into()).into()),
    };
    let preds = model.predict_pages(&raw)?;
    let mut out = String::from("ts_ns,fault_count,delta_t_s,wss_norm,wss_pages\n");
    for ((t, x), (norm, pages)) in ts.iter().zip(&raw).zip(&preds) {
        let t = t.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{t},{},{},{norm},{pages}", x[0], x[1]);
    }
    write_out(&cli.out_path(&a.out), out.as_bytes())?;
    println!("rows={}", preds.len());
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let model = open_model(&a.model)?;
    let data = read_dataset(&a.data)?;
    let scaled = if a.normalized || data.is_scaled() {
        data
    } else {
        let scaler = model
            .scaler
            .as_ref()
            .ok_or_else(|| DataError("model has no scaler; pass --normalized data".into()))?;
        scaler.apply(&data)?
    };
    let samples = Samples::from_dataset(&scaled, "evaluation")?;
    let preds = model.predict(&samples.features)?;
    let rmse = gbdt::rmse(&preds, &samples.labels)?;
    println!("rmse={rmse:.6} rows={}", preds.len());
    if let Some(scaler) = &model.scaler {
        if let (Ok(p), Ok(l)) = (scaler.invert_labels(&preds), scaler.invert_labels(&samples.labels)) {
            println!("rmse_pages={:.3}", gbdt::rmse(&p, &l)?);
        }
    }
    if let Some(r) = &a.report {
        let mut out = String::from("row,label,prediction,residual\n");
        for (i, (p, y)) in preds.iter().zip(&samples.labels).enumerate() {
            let _ = writeln!(out, "{i},{y},{p},{}", y - p);
        }
        write_out(&cli.out_path(r), out.as_bytes())?;
    }
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let prepared = pipeline::prepare(&read_dataset(&a.data)?, &prepare_config(cli, &a.split)?)?;
    let train = Samples::from_dataset(&prepared.splits.train, "train")?;
    let valid = Samples::from_dataset(&prepared.splits.valid, "valid")?;
    let test = Samples::from_dataset(&prepared.splits.test, "test")?;
    let space = if a.wide { tuner::wide_space() } else { tuner::default_space() };
    let seed = cli.seed.unwrap_or(0);
    let outcome = random_search(&space, a.trials, seed, &train, &valid, &test)?;
    let log_text: String = outcome.trials.iter().map(|t| t.log_line(&space) + "\n").collect();
    write_out(&cli.out_path(&a.log), log_text.as_bytes())?;
    let best = outcome.best_trial();
    write_out(&cli.out_path(&a.best), best.params.to_text().as_bytes())?;
    println!("best {}", best.log_line(&space));
    Ok(())
}
