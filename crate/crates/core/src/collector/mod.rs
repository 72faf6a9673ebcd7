//! User-space side of fault collection: drains flushed records from a
//! [`RecordSource`], applies the `min_value` floor, stamps receipt time and
//! appends events to a line-oriented log.

mod eventlog;
pub mod record;
pub mod ring;

#[cfg(target_os = "linux")]
pub mod live;

use std::collections::VecDeque;
use std::time::Duration;

pub use eventlog::{format_event, parse_event, read_event_log, write_events, EventLogError};
pub use record::{EmittedRecord, RecordError, COMM_LEN, RECORD_SIZE};

use crate::clock;

pub const DEFAULT_FLUSH_THRESHOLD: u64 = 100;
pub const DEFAULT_MIN_VALUE: u64 = 1;

/// One flushed page-fault record as seen by user space.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultEvent {
    pub pid: u32,
    pub comm: String,
    pub fault_count: u64,
    pub kernel_ts_ns: u64,
    pub user_ts_ns: u64,
    pub session_elapsed_s: f64,
}

impl FaultEvent {
    /// Elapsed seconds quantized to the nanosecond grid the log preserves,
    /// so a written event parses back to an identical value.
    pub fn elapsed_from_ns(ns: u64) -> f64 {
        format!("{:.9}", ns as f64 / 1e9).parse().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectorConfig {
    /// Exact task name to trace; empty traces every process.
    pub comm_filter: String,
    pub flush_threshold: u64,
    pub min_value: u64,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            comm_filter: String::new(),
            flush_threshold: DEFAULT_FLUSH_THRESHOLD,
            min_value: DEFAULT_MIN_VALUE,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionCounters {
    pub received: u64,
    pub filtered_out: u64,
    /// Records the kernel could not deliver: perf-ring overruns plus
    /// submission failures counted in the probe's dropped map.
    pub dropped_kernel: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    #[error("insufficient privileges: {0}")]
    PermissionDenied(String),
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error("probe rejected by the verifier: {message}\n{log}")]
    VerifierRejected { message: String, log: String },
    #[error("invalid probe object: {0}")]
    InvalidObject(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Records drained from the channel in one poll.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceBatch {
    /// `(cpu, record)` grouped by CPU, each CPU in arrival order.
    pub records: Vec<(u32, EmittedRecord)>,
    /// Records the channel reported lost to overruns during this poll.
    pub lost: u64,
}

/// Kernel-to-user record channel. Implemented by the live probe and by
/// in-memory fakes fed from the paging simulator.
pub trait RecordSource {
    fn poll_batch(&mut self, timeout: Duration) -> Result<SourceBatch, CollectorError>;

    /// Cumulative submission failures the probe recorded in kernel space.
    fn kernel_dropped(&mut self) -> Result<u64, CollectorError> {
        Ok(0)
    }
}

/// An attached collector. Single consumer: `poll` takes `&mut self`.
pub struct CollectorSession<S> {
    begin_time_ns: u64,
    config: CollectorConfig,
    counters: SessionCounters,
    source: S,
    last_kernel_dropped: u64,
    last_elapsed: f64,
    clock: fn() -> u64,
}

impl<S: RecordSource> CollectorSession<S> {
    /// Starts a session over an already attached source.
    pub fn new(config: CollectorConfig, source: S) -> Result<Self, CollectorError> {
        Self::with_clock(config, source, clock::monotonic_ns)
    }

    pub fn with_clock(
        config: CollectorConfig,
        source: S,
        clock: fn() -> u64,
    ) -> Result<Self, CollectorError> {
        validate_config(&config)?;
        Ok(Self {
            begin_time_ns: clock(),
            config,
            counters: SessionCounters::default(),
            source,
            last_kernel_dropped: 0,
            last_elapsed: 0.0,
            clock,
        })
    }

    pub fn begin_time_ns(&self) -> u64 {
        self.begin_time_ns
    }

    pub fn config(&self) -> &CollectorConfig {
        &self.config
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }

    /// Drains whatever arrives within `timeout`.
    pub fn poll(&mut self, timeout: Duration) -> Result<Vec<FaultEvent>, CollectorError> {
        let batch = self.source.poll_batch(timeout)?;
        let dropped = self.source.kernel_dropped()?;
        self.counters.dropped_kernel += batch.lost + dropped.saturating_sub(self.last_kernel_dropped);
        self.last_kernel_dropped = self.last_kernel_dropped.max(dropped);

        let mut events = Vec::with_capacity(batch.records.len());
        for (_cpu, rec) in batch.records {
            self.counters.received += 1;
            if rec.count < self.config.min_value {
                self.counters.filtered_out += 1;
                continue;
            }
            let user_ts_ns = (self.clock)();
            let elapsed = FaultEvent::elapsed_from_ns(user_ts_ns.saturating_sub(self.begin_time_ns));
            // receipt stamps come from one clock, but guard against a
            // non-monotone injected clock
            let elapsed = elapsed.max(self.last_elapsed);
            self.last_elapsed = elapsed;
            events.push(FaultEvent {
                pid: rec.pid,
                comm: rec.comm_str(),
                fault_count: rec.count,
                kernel_ts_ns: rec.kernel_ts_ns,
                user_ts_ns,
                session_elapsed_s: elapsed,
            });
        }
        Ok(events)
    }
}

pub(crate) fn validate_config(config: &CollectorConfig) -> Result<(), CollectorError> {
    if config.flush_threshold == 0 {
        return Err(CollectorError::InvalidConfig("flush threshold must be >= 1".into()));
    }
    if config.comm_filter.len() >= COMM_LEN {
        return Err(CollectorError::InvalidConfig(format!(
            "comm filter {:?} longer than {} bytes",
            config.comm_filter,
            COMM_LEN - 1
        )));
    }
    Ok(())
}

/// In-memory channel with one FIFO per CPU. Used to replay simulator
/// output through the collector without a kernel.
#[derive(Debug, Clone, Default)]
pub struct MemoryChannel {
    per_cpu: Vec<VecDeque<EmittedRecord>>,
    pending_lost: u64,
    kernel_dropped: u64,
}

impl MemoryChannel {
    pub fn new(cpus: usize) -> Self {
        Self {
            per_cpu: vec![VecDeque::new(); cpus.max(1)],
            ..Self::default()
        }
    }

    pub fn push(&mut self, cpu: u32, rec: EmittedRecord) {
        let idx = cpu as usize;
        if idx >= self.per_cpu.len() {
            self.per_cpu.resize(idx + 1, VecDeque::new());
        }
        self.per_cpu[idx].push_back(rec);
    }

    /// Simulates a ring overrun of `n` records.
    pub fn overrun(&mut self, n: u64) {
        self.pending_lost += n;
    }

    /// Simulates `n` failed submissions inside the probe.
    pub fn submission_failures(&mut self, n: u64) {
        self.kernel_dropped += n;
    }

    pub fn is_empty(&self) -> bool {
        self.per_cpu.iter().all(VecDeque::is_empty)
    }
}

impl RecordSource for MemoryChannel {
    fn poll_batch(&mut self, _timeout: Duration) -> Result<SourceBatch, CollectorError> {
        let mut records = Vec::new();
        for (cpu, queue) in self.per_cpu.iter_mut().enumerate() {
            records.extend(queue.drain(..).map(|r| (cpu as u32, r)));
        }
        let lost = std::mem::take(&mut self.pending_lost);
        Ok(SourceBatch { records, lost })
    }

    fn kernel_dropped(&mut self) -> Result<u64, CollectorError> {
        Ok(self.kernel_dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    static FAKE_NOW: AtomicU64 = AtomicU64::new(1_000);

    fn fake_clock() -> u64 {
        FAKE_NOW.fetch_add(250_000_000, Ordering::SeqCst)
    }

    fn rec(pid: u32, count: u64, ts: u64) -> EmittedRecord {
        EmittedRecord::new(pid, "myprogram", count, ts)
    }

    #[test]
    fn fresh_session_has_zero_counters() {
        let s = CollectorSession::new(CollectorConfig::default(), MemoryChannel::new(1)).unwrap();
        assert_eq!(s.counters(), SessionCounters::default());
    }

    #[test]
    fn min_value_boundary_is_inclusive() {
        let cfg = CollectorConfig {
            min_value: 5,
            ..CollectorConfig::default()
        };
        let mut ch = MemoryChannel::new(1);
        for (i, c) in [3u64, 7, 5].into_iter().enumerate() {
            ch.push(0, rec(1, c, i as u64));
        }
        let mut s = CollectorSession::new(cfg, ch).unwrap();
        let ev = s.poll(Duration::ZERO).unwrap();
        let counts: Vec<u64> = ev.iter().map(|e| e.fault_count).collect();
        assert_eq!(counts, vec![7, 5]);
        assert_eq!(s.counters().received, 3);
        assert_eq!(s.counters().filtered_out, 1);
    }

    #[test]
    fn empty_poll_is_not_an_error() {
        let mut s = CollectorSession::new(CollectorConfig::default(), MemoryChannel::new(4)).unwrap();
        assert!(s.poll(Duration::from_millis(1)).unwrap().is_empty());
    }

    #[test]
    fn per_cpu_order_preserved() {
        let mut ch = MemoryChannel::new(2);
        ch.push(1, rec(7, 100, 30));
        ch.push(0, rec(7, 100, 20));
        ch.push(1, rec(7, 100, 40));
        let mut s = CollectorSession::new(CollectorConfig::default(), ch).unwrap();
        let ts: Vec<u64> = s
            .poll(Duration::ZERO)
            .unwrap()
            .iter()
            .map(|e| e.kernel_ts_ns)
            .collect();
        assert_eq!(ts, vec![20, 30, 40]);
    }

    #[test]
    fn drop_accounting_accumulates_deltas() {
        let mut ch = MemoryChannel::new(1);
        ch.push(0, rec(1, 100, 1));
        ch.overrun(2);
        ch.submission_failures(3);
        let mut s = CollectorSession::new(CollectorConfig::default(), ch).unwrap();
        s.poll(Duration::ZERO).unwrap();
        assert_eq!(s.counters().dropped_kernel, 5);
        // cumulative kernel counter unchanged → no double counting
        s.poll(Duration::ZERO).unwrap();
        assert_eq!(s.counters().dropped_kernel, 5);
        s.source_mut().submission_failures(1);
        s.poll(Duration::ZERO).unwrap();
        assert_eq!(s.counters().dropped_kernel, 6);
    }

    #[test]
    fn elapsed_is_non_decreasing() {
        let mut ch = MemoryChannel::new(1);
        for i in 0..10 {
            ch.push(0, rec(1, 100, i));
        }
        let mut s = CollectorSession::with_clock(CollectorConfig::default(), ch, fake_clock).unwrap();
        let ev = s.poll(Duration::ZERO).unwrap();
        assert!(ev.windows(2).all(|w| w[0].session_elapsed_s <= w[1].session_elapsed_s));
        assert!(ev[0].session_elapsed_s > 0.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = CollectorConfig {
            flush_threshold: 0,
            ..CollectorConfig::default()
        };
        assert!(CollectorSession::new(bad, MemoryChannel::new(1)).is_err());
        let long = CollectorConfig {
            comm_filter: "x".repeat(16),
            ..CollectorConfig::default()
        };
        assert!(CollectorSession::new(long, MemoryChannel::new(1)).is_err());
    }
}
