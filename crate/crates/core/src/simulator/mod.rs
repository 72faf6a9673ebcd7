//! Deterministic demand-paging simulator and exact working-set oracle.
//!
//! The simulator produces the same artifacts as the live path (flushed
//! probe records, WSS labels, event logs) so every model-level component
//! can be exercised without a kernel.

mod paging;
mod workload;

use std::collections::{BTreeMap, HashSet};

pub use paging::{simulate_paging, PagingRun, PagingState, ProbeCounter, ProbeSettings, COUNTER_MAP_CAPACITY};
pub use workload::{
    format_phases, generate_workload, parse_phases, Access, AccessKind, AccessTrace, Pattern,
    Phase, WorkloadSpec, MAX_ARRAY_LEN, MIN_ARRAY_LEN,
};

use crate::collector::{EmittedRecord, FaultEvent, MemoryChannel};
use crate::features::{self, Dataset, SampleRow};
use crate::wss_probe::WssMeasurement;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("workload produces no accesses (zero rate or duration)")]
    EmptyTrace,
    #[error("only {0} flushes produced; at least 2 are needed to form an interval")]
    InsufficientData(usize),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
}

/// Distinct pages touched in `(at_ns - window_ns, at_ns]`.
pub fn exact_wss(trace: &AccessTrace, window_ns: u64, at_ns: u64) -> u64 {
    assert!(window_ns > 0, "window must be positive");
    let acc = &trace.accesses;
    let hi = acc.partition_point(|a| a.t_ns <= at_ns);
    let lo = match at_ns.checked_sub(window_ns) {
        Some(floor) => acc.partition_point(|a| a.t_ns <= floor),
        None => 0,
    };
    if lo >= hi {
        return 0;
    }
    acc[lo..hi].iter().map(|a| a.page).collect::<HashSet<_>>().len() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelWindow {
    /// From the previous flush to this one.
    FlushInterval,
    Fixed { window_ns: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub workload: WorkloadSpec,
    pub capacity_pages: u64,
    pub probe: ProbeSettings,
    pub label_window: LabelWindow,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadSpec::default(),
            capacity_pages: 0,
            probe: ProbeSettings::default(),
            label_window: LabelWindow::FlushInterval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledRecord {
    pub cpu: u32,
    pub fault_count: u64,
    pub kernel_ts_ns: u64,
    pub wss_pages: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRun {
    pub config: SimulationConfig,
    pub records: Vec<LabeledRecord>,
    pub fault_total: u64,
    pub residual: u64,
}

/// generate → simulate → label each flush with the exact WSS at its
/// timestamp.
pub fn emit_labeled_dataset(config: &SimulationConfig) -> Result<LabeledRun, SimError> {
    if config.probe.flush_threshold == 0 {
        return Err(SimError::InvalidSpec("flush threshold must be positive".into()));
    }
    if let LabelWindow::Fixed { window_ns: 0 } = config.label_window {
        return Err(SimError::InvalidSpec("label window must be positive".into()));
    }
    let trace = generate_workload(&config.workload)?;
    let mut probe = config.probe.clone();
    probe.seed = config.workload.seed;
    let run = simulate_paging(&trace, config.capacity_pages, &probe);
    if run.records.len() < 2 {
        return Err(SimError::InsufficientData(run.records.len()));
    }
    let start = trace.accesses.first().map_or(0, |a| a.t_ns);
    let mut prev_ts = None;
    let records = run
        .records
        .iter()
        .map(|(cpu, rec)| {
            let window = match config.label_window {
                LabelWindow::Fixed { window_ns } => window_ns,
                LabelWindow::FlushInterval => match prev_ts {
                    Some(p) => rec.kernel_ts_ns - p,
                    None => rec.kernel_ts_ns - start + 1,
                },
            };
            prev_ts = Some(rec.kernel_ts_ns);
            LabeledRecord {
                cpu: *cpu,
                fault_count: rec.count,
                kernel_ts_ns: rec.kernel_ts_ns,
                wss_pages: exact_wss(&trace, window.max(1), rec.kernel_ts_ns),
            }
        })
        .collect();
    Ok(LabeledRun {
        config: config.clone(),
        records,
        fault_total: run.fault_total,
        residual: run.residual,
    })
}

impl LabeledRun {
    /// Model-ready rows: each interval row carries the label of the flush
    /// that closes it.
    pub fn to_dataset(&self) -> Result<Dataset, SimError> {
        let points: Vec<(u64, u64)> = self
            .records
            .iter()
            .map(|r| (r.kernel_ts_ns, r.fault_count))
            .collect();
        let intervals = features::compute_intervals(&points)
            .map_err(|_| SimError::InsufficientData(points.len()))?;
        let rows = intervals
            .iter()
            .zip(&self.records[1..])
            .map(|(iv, rec)| SampleRow {
                fault_count: iv.fault_count,
                delta_t_s: iv.delta_t_s,
                label_wss_pages: Some(rec.wss_pages as f64),
            })
            .collect();
        let mut meta = BTreeMap::new();
        meta.insert("source".into(), "simulator".into());
        meta.insert("seed".into(), self.config.workload.seed.to_string());
        meta.insert("prng".into(), crate::rng::ALGORITHM.into());
        meta.insert("fault_total".into(), self.fault_total.to_string());
        meta.insert("residual".into(), self.residual.to_string());
        for (k, v) in self.config.to_pairs() {
            meta.insert(format!("sim.{k}"), v);
        }
        Ok(Dataset::new(rows, meta))
    }

    /// Flushes as collector events, stamped as if received instantly.
    pub fn to_fault_events(&self) -> Vec<FaultEvent> {
        let begin = self.records.first().map_or(0, |r| r.kernel_ts_ns);
        self.records
            .iter()
            .map(|r| FaultEvent {
                pid: self.config.probe.pid,
                comm: self.config.probe.comm.clone(),
                fault_count: r.fault_count,
                kernel_ts_ns: r.kernel_ts_ns,
                user_ts_ns: r.kernel_ts_ns,
                session_elapsed_s: FaultEvent::elapsed_from_ns(r.kernel_ts_ns - begin),
            })
            .collect()
    }

    /// Labels in the ground-truth log shape, one per flush.
    pub fn to_measurements(&self) -> Vec<WssMeasurement> {
        let page = self.config.workload.page_size;
        let mut prev = None;
        self.records
            .iter()
            .map(|r| {
                let interval_ns = match (self.config.label_window, prev) {
                    (LabelWindow::Fixed { window_ns }, _) => window_ns,
                    (LabelWindow::FlushInterval, Some(p)) => r.kernel_ts_ns - p,
                    (LabelWindow::FlushInterval, None) => r.kernel_ts_ns.max(1),
                };
                prev = Some(r.kernel_ts_ns);
                WssMeasurement {
                    pid: self.config.probe.pid,
                    measured_at_ns: r.kernel_ts_ns,
                    interval_s: interval_ns.max(1) as f64 / 1e9,
                    referenced_pages: r.wss_pages,
                    referenced_bytes: r.wss_pages * page,
                }
            })
            .collect()
    }

    /// Per-CPU channel holding the flushes, for replay through a collector.
    pub fn to_channel(&self) -> MemoryChannel {
        let cpus = self.config.probe.cpus.max(1) as usize;
        let mut ch = MemoryChannel::new(cpus);
        for r in &self.records {
            ch.push(
                r.cpu,
                EmittedRecord::new(self.config.probe.pid, &self.config.probe.comm, r.fault_count, r.kernel_ts_ns),
            );
        }
        ch
    }
}

impl SimulationConfig {
    /// Parses the plain `key = value` spec format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = SimulationConfig::default();
        let mut pattern_name = "sweep".to_string();
        let mut phases: Option<Vec<Phase>> = None;
        let mut phase_kind = AccessKind::Sweep;

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SimError::Config { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("cannot parse {v:?}"))
            }
            let w = &mut cfg.workload;
            match key {
                "array_len" | "array_len_elems" => w.array_len_elems = num(value).map_err(err)?,
                "elem_bytes" => w.elem_bytes = num(value).map_err(err)?,
                "page_size" => w.page_size = num(value).map_err(err)?,
                "access_rate_hz" => w.access_rate_hz = num(value).map_err(err)?,
                "duration_s" => w.duration_s = num(value).map_err(err)?,
                "seed" => w.seed = num(value).map_err(err)?,
                "allow_out_of_range" => w.allow_out_of_range = num(value).map_err(err)?,
                "pattern" => pattern_name = value.to_string(),
                "phases" => phases = Some(parse_phases(value).map_err(|e| err(e.to_string()))?),
                "phase_pattern" => phase_kind = value.parse().map_err(|e: SimError| err(e.to_string()))?,
                "capacity_pages" => cfg.capacity_pages = num(value).map_err(err)?,
                "flush_threshold" => cfg.probe.flush_threshold = num(value).map_err(err)?,
                "cpus" => cfg.probe.cpus = num(value).map_err(err)?,
                "sched_quantum" => cfg.probe.sched_quantum = num(value).map_err(err)?,
                "pid" => cfg.probe.pid = num(value).map_err(err)?,
                "comm" => cfg.probe.comm = value.trim_matches('"').to_string(),
                "label_window" => {
                    cfg.label_window = if value == "flush" {
                        LabelWindow::FlushInterval
                    } else {
                        LabelWindow::Fixed { window_ns: num(value).map_err(err)? }
                    }
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.workload.pattern = match pattern_name.as_str() {
            "sweep" => Pattern::Sweep,
            "random" => Pattern::Random,
            "phased" => Pattern::Phased {
                phases: phases.ok_or_else(|| SimError::InvalidSpec("phased pattern needs phases".into()))?,
                kind: phase_kind,
            },
            other => return Err(SimError::InvalidSpec(format!("unknown pattern {other:?}"))),
        };
        cfg.workload.validate()?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let w = &self.workload;
        let mut out = vec![
            ("array_len".to_string(), w.array_len_elems.to_string()),
            ("elem_bytes".into(), w.elem_bytes.to_string()),
            ("page_size".into(), w.page_size.to_string()),
            ("access_rate_hz".into(), w.access_rate_hz.to_string()),
            ("duration_s".into(), w.duration_s.to_string()),
            ("seed".into(), w.seed.to_string()),
            ("allow_out_of_range".into(), w.allow_out_of_range.to_string()),
        ];
        match &w.pattern {
            Pattern::Sweep => out.push(("pattern".into(), "sweep".into())),
            Pattern::Random => out.push(("pattern".into(), "random".into())),
            Pattern::Phased { phases, kind } => {
                out.push(("pattern".into(), "phased".into()));
                out.push(("phases".into(), format_phases(phases)));
                out.push(("phase_pattern".into(), kind.to_string()));
            }
        }
        out.push(("capacity_pages".into(), self.capacity_pages.to_string()));
        out.push(("flush_threshold".into(), self.probe.flush_threshold.to_string()));
        out.push(("cpus".into(), self.probe.cpus.to_string()));
        out.push(("sched_quantum".into(), self.probe.sched_quantum.to_string()));
        out.push(("pid".into(), self.probe.pid.to_string()));
        out.push(("comm".into(), self.probe.comm.clone()));
        out.push((
            "label_window".into(),
            match self.label_window {
                LabelWindow::FlushInterval => "flush".into(),
                LabelWindow::Fixed { window_ns } => window_ns.to_string(),
            },
        ));
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn trace_of(pairs: &[(u64, u64)]) -> AccessTrace {
        AccessTrace::new(
            pairs.iter().map(|&(t_ns, page)| Access { t_ns, page }).collect(),
            4096,
        )
        .unwrap()
    }

    fn brute_distinct(trace: &AccessTrace, window: u64, at: u64) -> u64 {
        let lo = at as i128 - window as i128;
        let mut seen: Vec<u64> = Vec::new();
        for a in &trace.accesses {
            let t = a.t_ns as i128;
            if t > lo && t <= at as i128 && !seen.contains(&a.page) {
                seen.push(a.page);
            }
        }
        seen.len() as u64
    }

    #[test]
    fn worked_window_example() {
        let t = trace_of(&[(1, 1), (2, 2), (3, 1), (4, 3)]);
        assert_eq!(exact_wss(&t, 2, 4), 2);
        assert_eq!(exact_wss(&t, 100, 4), t.footprint());
        assert_eq!(exact_wss(&t, 5, 0), 0);
    }

    #[test]
    fn matches_brute_force_on_random_traces() {
        for seed in 0..20 {
            let mut rng = SplitMix64::new(seed);
            let mut t = 0;
            let pairs: Vec<(u64, u64)> = (0..300)
                .map(|_| {
                    t += rng.below(3);
                    (t, rng.below(40))
                })
                .collect();
            let trace = trace_of(&pairs);
            for _ in 0..20 {
                let w = 1 + rng.below(200);
                let at = rng.below(t + 10);
                assert_eq!(exact_wss(&trace, w, at), brute_distinct(&trace, w, at));
            }
        }
    }

    #[test]
    fn window_monotone() {
        let mut rng = SplitMix64::new(3);
        let pairs: Vec<(u64, u64)> = (0..500).map(|k| (k, rng.below(60))).collect();
        let trace = trace_of(&pairs);
        let mut prev = 0;
        for w in 1..600 {
            let v = exact_wss(&trace, w, 450);
            assert!(v >= prev);
            prev = v;
        }
    }

    fn sim(spec: WorkloadSpec, capacity: u64, cpus: u32) -> SimulationConfig {
        SimulationConfig {
            workload: spec,
            capacity_pages: capacity,
            probe: ProbeSettings {
                cpus,
                ..ProbeSettings::default()
            },
            label_window: LabelWindow::FlushInterval,
        }
    }

    #[test]
    fn steady_sweep_labels_closed_form() {
        // F = 64 pages, capacity 32: every access faults, so a window of
        // `threshold` faults spans `threshold` consecutive sweep steps.
        let spec = WorkloadSpec {
            array_len_elems: 64 * 1024,
            access_rate_hz: 10_000.0,
            duration_s: 1.0,
            ..WorkloadSpec::default()
        };
        let run = emit_labeled_dataset(&sim(spec.clone(), 32, 1)).unwrap();
        let trace = generate_workload(&spec).unwrap();
        let f = 64u64;
        for (i, r) in run.records.iter().enumerate().skip(1) {
            let window = r.kernel_ts_ns - run.records[i - 1].kernel_ts_ns;
            let steps = window / 100_000;
            assert_eq!(r.wss_pages, f.min(steps));
            assert_eq!(r.wss_pages, brute_distinct(&trace, window, r.kernel_ts_ns));
        }
    }

    #[test]
    fn phased_labels_alternate_between_plateaus() {
        let spec = WorkloadSpec {
            array_len_elems: 1 << 16,
            access_rate_hz: 20_000.0,
            duration_s: 4.0,
            pattern: Pattern::Phased {
                phases: vec![
                    Phase { array_len_elems: 1 << 15, duration_s: 1.0 },
                    Phase { array_len_elems: 1 << 17, duration_s: 1.0 },
                ],
                kind: AccessKind::Sweep,
            },
            ..WorkloadSpec::default()
        };
        let mut cfg = sim(spec.clone(), 16, 1);
        cfg.label_window = LabelWindow::Fixed { window_ns: 20_000_000 };
        let run = emit_labeled_dataset(&cfg).unwrap();
        let trace = generate_workload(&spec).unwrap();
        let mut plateaus: Vec<u64> = Vec::new();
        for r in &run.records {
            assert_eq!(r.wss_pages, brute_distinct(&trace, 20_000_000, r.kernel_ts_ns));
            if plateaus.last() != Some(&r.wss_pages) {
                plateaus.push(r.wss_pages);
            }
        }
        let distinct: HashSet<u64> = plateaus.iter().copied().collect();
        // 32 pages and min(128, 400 accesses in 20 ms) = 128 pages, plus
        // mixed windows straddling a boundary
        assert!(distinct.contains(&32) && distinct.contains(&128));
        assert!(plateaus.len() >= 4);
    }

    #[test]
    fn single_page_workload_labels_one() {
        let mut cfg = SimulationConfig::default();
        cfg.workload.array_len_elems = 1 << 7;
        cfg.workload.access_rate_hz = 1000.0;
        cfg.probe.flush_threshold = 1;
        cfg.probe.cpus = 1;
        // a resident single page faults exactly once: one flush, no interval
        assert!(matches!(
            emit_labeled_dataset(&cfg),
            Err(SimError::InsufficientData(1))
        ));
        let trace = generate_workload(&cfg.workload).unwrap();
        assert!(trace
            .accesses
            .iter()
            .all(|a| exact_wss(&trace, 1_000_000, a.t_ns) == 1));
    }

    #[test]
    fn deterministic_dataset() {
        let spec = WorkloadSpec {
            array_len_elems: 1 << 16,
            access_rate_hz: 10_000.0,
            pattern: Pattern::Random,
            seed: 9,
            ..WorkloadSpec::default()
        };
        let a = emit_labeled_dataset(&sim(spec.clone(), 8, 4)).unwrap().to_dataset().unwrap();
        let b = emit_labeled_dataset(&sim(spec, 8, 4)).unwrap().to_dataset().unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn conservation_through_emit() {
        let spec = WorkloadSpec {
            array_len_elems: 1 << 14,
            access_rate_hz: 10_000.0,
            pattern: Pattern::Random,
            seed: 1,
            ..WorkloadSpec::default()
        };
        let run = emit_labeled_dataset(&sim(spec, 5, 3)).unwrap();
        let flushed: u64 = run.records.iter().map(|r| r.fault_count).sum();
        assert_eq!(flushed + run.residual, run.fault_total);
    }

    #[test]
    fn config_round_trip() {
        let text = "\
# phased demo
array_len = 4096
access_rate_hz = 5000
pattern = phased
phases = 128:0.5, 65536:0.5
phase_pattern = random
duration_s = 3
seed = 11
capacity_pages = 8
flush_threshold = 50
cpus = 2
label_window = 1000000
comm = \"myprogram\"
";
        let cfg = SimulationConfig::parse(text).unwrap();
        assert_eq!(cfg.probe.comm, "myprogram");
        assert_eq!(cfg.label_window, LabelWindow::Fixed { window_ns: 1_000_000 });
        assert_eq!(SimulationConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        match SimulationConfig::parse("seed = 1\nbogus = 2\n") {
            Err(SimError::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(SimulationConfig::parse("pattern = phased\n").is_err());
    }
}
