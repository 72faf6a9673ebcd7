//! Ground-truth WSS by the referenced-flag method: clear the accessed bits
//! through `clear_refs`, wait, then sum `Referenced:` over all mappings.

use std::fmt;
use std::io::{self, ErrorKind};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::clock;

#[derive(Debug, thiserror::Error)]
pub enum WssError {
    #[error("interval must be positive and finite, got {0}")]
    InvalidInterval(f64),
    #[error("process {pid} is gone; no partial measurement")]
    ProcessGone { pid: u32 },
    #[error("permission denied on {path}; run as the process owner or with CAP_SYS_PTRACE")]
    PermissionDenied { path: PathBuf },
    #[error("{path}: no Referenced: lines")]
    Unparsable { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WssMeasurement {
    pub pid: u32,
    pub measured_at_ns: u64,
    pub interval_s: f64,
    pub referenced_pages: u64,
    pub referenced_bytes: u64,
}

impl fmt::Display for WssMeasurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pid={} ts={} interval={} pages={}",
            self.pid, self.measured_at_ns, self.interval_s, self.referenced_pages
        )
    }
}

impl FromStr for WssMeasurement {
    type Err = String;

    /// Parses a log line. Bytes are not logged, so they are rebuilt from
    /// the local page size.
    fn from_str(line: &str) -> Result<Self, String> {
        let mut pid = None;
        let mut ts = None;
        let mut interval = None;
        let mut pages = None;
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| format!("bad token {tok:?}"))?;
            let bad = |_| format!("bad value for {k}: {v:?}");
            match k {
                "pid" => pid = Some(v.parse::<u32>().map_err(|e| bad(e.to_string()))?),
                "ts" => ts = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "interval" => interval = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "pages" => pages = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(format!("unknown key {k:?}")),
            }
        }
        let pages = pages.ok_or("missing pages")?;
        Ok(Self {
            pid: pid.ok_or("missing pid")?,
            measured_at_ns: ts.ok_or("missing ts")?,
            interval_s: interval.ok_or("missing interval")?,
            referenced_pages: pages,
            referenced_bytes: pages * clock::page_size(),
        })
    }
}

pub fn read_label_log(text: &str) -> Result<Vec<WssMeasurement>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// Root of the proc filesystem; swapped out in tests.
#[derive(Debug, Clone)]
pub struct ProcFs {
    root: PathBuf,
}

impl Default for ProcFs {
    fn default() -> Self {
        Self::at("/proc")
    }
}

impl ProcFs {
    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn pid_file(&self, pid: u32, name: &str) -> PathBuf {
        self.root.join(pid.to_string()).join(name)
    }

    fn map_err(pid: u32, path: &Path, e: io::Error) -> WssError {
        match e.kind() {
            ErrorKind::NotFound => WssError::ProcessGone { pid },
            ErrorKind::PermissionDenied => WssError::PermissionDenied { path: path.to_path_buf() },
            _ if e.raw_os_error() == Some(libc::ESRCH) => WssError::ProcessGone { pid },
            _ => WssError::Io { path: path.to_path_buf(), source: e },
        }
    }

    pub fn clear_refs(&self, pid: u32) -> Result<(), WssError> {
        let path = self.pid_file(pid, "clear_refs");
        std::fs::write(&path, b"1").map_err(|e| Self::map_err(pid, &path, e))
    }

    /// Sum of `Referenced:` in kB, from `smaps_rollup` when present and
    /// `smaps` otherwise.
    pub fn referenced_kb(&self, pid: u32) -> Result<u64, WssError> {
        self.sum_field(pid, "Referenced:")
    }

    pub fn rss_kb(&self, pid: u32) -> Result<u64, WssError> {
        self.sum_field(pid, "Rss:")
    }

    fn sum_field(&self, pid: u32, field: &str) -> Result<u64, WssError> {
        let rollup = self.pid_file(pid, "smaps_rollup");
        let (path, text) = match std::fs::read_to_string(&rollup) {
            Ok(t) => (rollup, t),
            Err(e) if e.kind() == ErrorKind::NotFound && self.root.join(pid.to_string()).exists() => {
                let p = self.pid_file(pid, "smaps");
                let t = std::fs::read_to_string(&p).map_err(|e| Self::map_err(pid, &p, e))?;
                (p, t)
            }
            Err(e) => return Err(Self::map_err(pid, &rollup, e)),
        };
        if text.is_empty() {
            // an exited but unreaped process has no mappings left
            return Err(WssError::ProcessGone { pid });
        }
        sum_kb(&text, field).ok_or(WssError::Unparsable { path })
    }
}

fn sum_kb(text: &str, field: &str) -> Option<u64> {
    let mut seen = false;
    let mut total = 0u64;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(field) {
            let kb = rest.split_whitespace().next()?.parse::<u64>().ok()?;
            total += kb;
            seen = true;
        }
    }
    seen.then_some(total)
}

fn check_interval(interval_s: f64) -> Result<Duration, WssError> {
    if interval_s.is_finite() && interval_s > 0.0 {
        Ok(Duration::from_secs_f64(interval_s))
    } else {
        Err(WssError::InvalidInterval(interval_s))
    }
}

pub fn measure_wss(pid: u32, interval_s: f64) -> Result<WssMeasurement, WssError> {
    measure_wss_in(&ProcFs::default(), pid, interval_s)
}

pub fn measure_wss_in(proc_fs: &ProcFs, pid: u32, interval_s: f64) -> Result<WssMeasurement, WssError> {
    let wait = check_interval(interval_s)?;
    proc_fs.clear_refs(pid)?;
    std::thread::sleep(wait);
    let kb = proc_fs.referenced_kb(pid)?;
    let measured_at_ns = clock::monotonic_ns();
    let page = clock::page_size();
    let referenced_pages = kb * 1024 / page;
    Ok(WssMeasurement {
        pid,
        measured_at_ns,
        interval_s,
        referenced_pages,
        referenced_bytes: referenced_pages * page,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub measurements: Vec<WssMeasurement>,
    /// Set when the process exited before the duration ran out.
    pub process_exited: bool,
}

/// Back-to-back measurements, each settling for `cadence_s`, as many as
/// fit in `duration_s` and at least one. A process that is gone before the
/// first measurement is an error; one that exits later ends the loop.
pub fn groundtruth_loop(pid: u32, cadence_s: f64, duration_s: f64) -> Result<GroundTruth, WssError> {
    groundtruth_loop_in(&ProcFs::default(), pid, cadence_s, duration_s, |_| {})
}

pub fn groundtruth_loop_in(
    proc_fs: &ProcFs,
    pid: u32,
    cadence_s: f64,
    duration_s: f64,
    mut on_measurement: impl FnMut(&WssMeasurement),
) -> Result<GroundTruth, WssError> {
    check_interval(cadence_s)?;
    if !(duration_s.is_finite() && duration_s >= 0.0) {
        return Err(WssError::InvalidInterval(duration_s));
    }
    // tolerate ratios like 1.6 / 0.2 landing just below an integer
    let rounds = ((duration_s / cadence_s * (1.0 + 1e-9)).floor() as u64).max(1);
    let mut measurements: Vec<WssMeasurement> = Vec::new();
    for _ in 0..rounds {
        match measure_wss_in(proc_fs, pid, cadence_s) {
            Ok(mut m) => {
                if let Some(prev) = measurements.last() {
                    m.measured_at_ns = m.measured_at_ns.max(prev.measured_at_ns + 1);
                }
                on_measurement(&m);
                measurements.push(m);
            }
            Err(WssError::ProcessGone { .. }) if !measurements.is_empty() => {
                return Ok(GroundTruth { measurements, process_exited: true });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(GroundTruth { measurements, process_exited: false })
}
