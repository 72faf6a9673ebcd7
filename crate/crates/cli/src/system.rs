//! Commands that touch the running system: probe collection, ground-truth
//! measurement, the overhead benchmark and the synthetic workload.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::path::PathBuf;
use std::process::{Child, Command as Process, Stdio};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use wsse_core::collector::CollectorError;
use wsse_core::features::compute_intervals;
use wsse_core::gbdt::{GbdtModel, GbdtParams};
use wsse_core::pipeline::{self, PrepareConfig};
use wsse_core::rng::SplitMix64;
use wsse_core::simulator::{emit_labeled_dataset, exact_wss, generate_workload, SimulationConfig};
use wsse_core::wss_probe::{self, ProcFs};

use crate::commands::{write_out, write_sidecar};
use crate::exit::UsageError;
use crate::{BenchArgs, Cli, CollectArgs, WorkloadArgs, WssArgs};

fn positive(name: &str, v: f64) -> Result<Duration> {
    if v.is_finite() && v > 0.0 {
        Ok(Duration::from_secs_f64(v))
    } else {
        Err(UsageError(format!("{name} must be positive, got {v}")).into())
    }
}

#[cfg(target_os = "linux")]
pub fn collect(cli: &Cli, a: &CollectArgs) -> Result<()> {
    use wsse_core::collector::{live, write_events, CollectorConfig};

    let duration = positive("--duration", a.duration)?;
    let object = a
        .object
        .clone()
        .or_else(|| std::env::var_os("WSSE_PROBE_OBJECT").map(PathBuf::from))
        .ok_or_else(|| UsageError("no probe object: pass --object or set WSSE_PROBE_OBJECT".into()))?;
    let config = CollectorConfig {
        comm_filter: a.comm.clone(),
        flush_threshold: a.threshold,
        min_value: a.min_value,
    };
    let mut session = live::attach(config, &object)
        .context("attaching the page-fault probe (needs root or CAP_BPF+CAP_PERFMON and kprobe support)")?;
    let deadline = Instant::now() + duration;
    let mut events = Vec::new();
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        events.extend(session.poll(left.min(Duration::from_millis(100)))?);
    }
    events.extend(session.poll(Duration::ZERO)?);
    let counters = session.counters();

    let out = cli.out_path(&a.out);
    let mut buf = Vec::new();
    write_events(&events, &mut buf)?;
    write_out(&out, &buf)?;
    let mut meta = BTreeMap::new();
    meta.insert("source".into(), "live".into());
    meta.insert("comm".into(), a.comm.clone());
    meta.insert("flush_threshold".into(), a.threshold.to_string());
    meta.insert("min_value".into(), a.min_value.to_string());
    meta.insert("received".into(), counters.received.to_string());
    meta.insert("filtered_out".into(), counters.filtered_out.to_string());
    meta.insert("dropped_kernel".into(), counters.dropped_kernel.to_string());
    write_sidecar(&out, &meta)?;
    println!(
        "events={} received={} filtered_out={} dropped_kernel={}",
        events.len(),
        counters.received,
        counters.filtered_out,
        counters.dropped_kernel
    );
    Ok(())
}

#[cfg(not(target_os = "linux"))]
pub fn collect(_cli: &Cli, a: &CollectArgs) -> Result<()> {
    positive("--duration", a.duration)?;
    Err(CollectorError::UnsupportedKernel("collect needs Linux with kprobe support".into()).into())
}

pub fn wss(cli: &Cli, a: &WssArgs) -> Result<()> {
    positive("--cadence", a.cadence)?;
    if !(a.duration.is_finite() && a.duration >= 0.0) {
        return Err(UsageError("--duration must be >= 0".into()).into());
    }
    if !cfg!(target_os = "linux") {
        return Err(CollectorError::UnsupportedKernel("wss needs Linux /proc clear_refs".into()).into());
    }
    let gt = wss_probe::groundtruth_loop_in(&ProcFs::default(), a.pid, a.cadence, a.duration, |m| println!("{m}"))?;
    if gt.process_exited {
        log::warn!("process {} exited after {} measurements", a.pid, gt.measurements.len());
    }
    let text: String = gt.measurements.iter().map(|m| format!("{m}\n")).collect();
    let out = cli.out_path(&a.out);
    write_out(&out, text.as_bytes())?;
    let mut meta = BTreeMap::new();
    meta.insert("pid".into(), a.pid.to_string());
    meta.insert("cadence_s".into(), a.cadence.to_string());
    meta.insert("process_exited".into(), gt.process_exited.to_string());
    write_sidecar(&out, &meta)
}

/// Kills the child on drop.
struct Reaper(Child);

impl Drop for Reaper {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_workload(mib: u64) -> Result<Reaper> {
    let exe = std::env::current_exe().context("locating own executable")?;
    let child = Process::new(exe)
        .args(["workload", "--mib", &mib.to_string(), "--pattern", "sweep"])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
        .context("spawning workload")?;
    Ok(Reaper(child))
}

fn wait_for_rss(proc_fs: &ProcFs, pid: u32, kb: u64) -> Result<()> {
    let deadline = Instant::now() + Duration::from_secs(60);
    while Instant::now() < deadline {
        if proc_fs.rss_kb(pid)? >= kb {
            return Ok(());
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    anyhow::bail!("workload {pid} did not reach {kb} kB resident within 60 s")
}

fn quick_model(seed: u64) -> Result<GbdtModel> {
    let spec = "pattern=phased\nphase_pattern=random\nphases=16384:0.1,65536:0.1,262144:0.1\n\
                access_rate_hz=1000000\ncapacity_pages=12\n";
    let mut cfg = SimulationConfig::parse(spec)?;
    cfg.workload.seed = seed;
    let data = emit_labeled_dataset(&cfg)?.to_dataset()?;
    let params = GbdtParams {
        random_state: seed,
        ..GbdtParams::default()
    };
    Ok(pipeline::run(&data, &PrepareConfig { seed, ..PrepareConfig::default() }, &params)?
        .report
        .model)
}

/// Flushes produced over one window of a workload the size of the live one.
fn window_config(mib: u64, window: f64, seed: u64) -> Result<SimulationConfig> {
    let elems = (mib << 20) / 4;
    let spec = format!(
        "pattern=random\narray_len={elems}\nallow_out_of_range=true\naccess_rate_hz=1000000\n\
         duration_s={window}\ncapacity_pages={}\nseed={seed}\n",
        (mib << 20) / 4096 / 2
    );
    Ok(SimulationConfig::parse(&spec)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn bench_overhead(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let window = positive("--window", a.window)?;
    if a.rounds == 0 || a.array_mib == 0 {
        return Err(UsageError("--rounds and --array-mib must be positive".into()).into());
    }
    if a.rounds < 20 {
        log::warn!("fewer than 20 rounds; means will be noisy");
    }
    let seed = cli.seed.unwrap_or(0);
    let model = match &a.model {
        Some(p) => wsse_core::gbdt::load_model(p).with_context(|| format!("loading model {}", p.display()))?,
        None => quick_model(seed)?,
    };
    let sim = window_config(a.array_mib, a.window, seed)?;
    let run = emit_labeled_dataset(&sim)?;
    let points: Vec<(u64, u64)> = run.records.iter().map(|r| (r.kernel_ts_ns, r.fault_count)).collect();

    let live = cfg!(target_os = "linux") && !a.simulate && std::path::Path::new("/proc/self/clear_refs").exists();
    let mut scan = Vec::with_capacity(a.rounds as usize);
    let mut infer = Vec::with_capacity(a.rounds as usize);
    if live {
        let proc_fs = ProcFs::default();
        let child = spawn_workload(a.array_mib)?;
        let pid = child.0.id();
        wait_for_rss(&proc_fs, pid, a.array_mib * 1024 * 9 / 10)?;
        for _ in 0..a.rounds {
            let t = Instant::now();
            proc_fs.clear_refs(pid)?;
            let clear = t.elapsed();
            std::thread::sleep(window);
            let t = Instant::now();
            black_box(proc_fs.referenced_kb(pid)?);
            scan.push((clear + t.elapsed()).as_secs_f64());
            infer.push(time_inference(&model, &points)?);
        }
    } else {
        let trace = generate_workload(&sim.workload)?;
        let end = trace.accesses.last().map_or(0, |x| x.t_ns);
        for _ in 0..a.rounds {
            let t = Instant::now();
            black_box(exact_wss(&trace, window.as_nanos() as u64, end));
            scan.push(t.elapsed().as_secs_f64());
            infer.push(time_inference(&model, &points)?);
        }
    }
    let scan_mean = mean(&scan);
    let infer_mean = mean(&infer);
    let measurement_mean = scan_mean + a.window;
    println!(
        "mode={} rounds={} rows_per_window={} scan_mean_s={scan_mean:.6} measurement_mean_s={measurement_mean:.6} \
         inference_mean_s={infer_mean:.6} scan_ratio={:.1} ratio={:.1}",
        if live { "live" } else { "simulated" },
        a.rounds,
        points.len().saturating_sub(1),
        scan_mean / infer_mean,
        measurement_mean / infer_mean,
    );
    Ok(())
}

fn time_inference(model: &GbdtModel, points: &[(u64, u64)]) -> Result<f64> {
    let t = Instant::now();
    let rows: Vec<[f64; 2]> = compute_intervals(points)?
        .iter()
        .map(|r| [r.fault_count, r.delta_t_s])
        .collect();
    black_box(model.predict_pages(&rows)?);
    Ok(t.elapsed().as_secs_f64())
}

/// Assigns array elements in an endless loop until `duration` runs out.
pub fn workload(a: &WorkloadArgs) -> Result<()> {
    let len = ((a.mib << 20) / 4).max(1) as usize;
    let random = match a.pattern.as_str() {
        "sweep" => false,
        "random" => true,
        other => return Err(UsageError(format!("--pattern must be sweep or random, got {other:?}")).into()),
    };
    let deadline = (a.duration > 0.0).then(|| Instant::now() + Duration::from_secs_f64(a.duration));
    let mut array = vec![0u32; len];
    let mut rng = SplitMix64::new(len as u64);
    let mut i = 0usize;
    let mut n = 0u64;
    loop {
        let idx = if random { rng.below(len as u64) as usize } else { i };
        array[idx] = array[idx].wrapping_add(n as u32);
        i = if i + 1 == len { 0 } else { i + 1 };
        n += 1;
        if n.is_multiple_of(1 << 16) {
            black_box(&array);
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(());
            }
        }
    }
}
