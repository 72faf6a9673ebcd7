//! Referenced-flag measurements against real processes. Needs Linux with
//! `/proc/<pid>/clear_refs` writable by the owner.
#![cfg(target_os = "linux")]

use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use wsse_core::clock;
use wsse_core::wss_probe::{groundtruth_loop, measure_wss, ProcFs, WssError};

struct Reaper(Child);

impl Drop for Reaper {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// 129-byte static x86_64 executable: `loop { pause() }`.
#[cfg(target_arch = "x86_64")]
fn idle_elf() -> Vec<u8> {
    let code = [0xb8, 0x22, 0x00, 0x00, 0x00, 0x0f, 0x05, 0xeb, 0xf7];
    let base = 0x40_0000u64;
    let hdr_len = 64 + 56;
    let total = (hdr_len + code.len()) as u64;
    let mut b = Vec::with_capacity(total as usize);
    b.extend_from_slice(&[0x7f, b'E', b'L', b'F', 2, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&0x3eu16.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&(base + hdr_len as u64).to_le_bytes());
    b.extend_from_slice(&64u64.to_le_bytes());
    b.extend_from_slice(&0u64.to_le_bytes());
    b.extend_from_slice(&0u32.to_le_bytes());
    for v in [64u16, 56, 1, 64, 0, 0] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&5u32.to_le_bytes());
    for v in [0, base, base, total, total, 0x1000] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&code);
    assert_eq!(b.len() as u64, total);
    b
}

#[cfg(target_arch = "x86_64")]
fn spawn_idle(dir: &std::path::Path) -> Reaper {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join("idle");
    std::fs::write(&path, idle_elf()).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    // another test thread may still hold a writable fd from its own fork
    for _ in 0..50 {
        match Command::new(&path).stdin(Stdio::null()).spawn() {
            Ok(c) => return Reaper(c),
            Err(e) if e.raw_os_error() == Some(libc::ETXTBSY) => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => panic!("spawn idle: {e}"),
        }
    }
    panic!("idle binary stayed busy");
}

#[cfg(target_arch = "x86_64")]
#[test]
fn idle_process_references_almost_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let child = spawn_idle(dir.path());
    let pid = child.0.id();
    std::thread::sleep(Duration::from_millis(50));
    let first = measure_wss(pid, 0.2).unwrap();
    let second = measure_wss(pid, 0.2).unwrap();
    assert!(first.referenced_pages < 64, "{first}");
    assert!(second.referenced_pages <= first.referenced_pages, "{first} then {second}");
    let rss_pages = ProcFs::default().rss_kb(pid).unwrap() * 1024 / clock::page_size();
    assert!(second.referenced_pages <= rss_pages);
    assert_eq!(second.referenced_bytes, second.referenced_pages * clock::page_size());
}

/// Keeps one byte per page of an `n_pages` buffer hot until dropped.
struct Sweeper {
    stop: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl Sweeper {
    fn start(n_pages: usize) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let page = clock::page_size() as usize;
        let handle = std::thread::spawn(move || {
            let mut buf = vec![1u8; n_pages * page];
            let mut k = 0u8;
            while !flag.load(Ordering::Relaxed) {
                for i in (0..buf.len()).step_by(page) {
                    buf[i] = buf[i].wrapping_add(k);
                }
                k = k.wrapping_add(1);
                std::hint::black_box(&buf);
            }
        });
        std::thread::sleep(Duration::from_millis(100));
        Self {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for Sweeper {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Both sweep tests measure this process, so they must not overlap.
static SELF_MEASUREMENT: Mutex<()> = Mutex::new(());

fn sweep_measurements(n_pages: usize) -> Vec<f64> {
    let _guard = SELF_MEASUREMENT.lock().unwrap_or_else(|e| e.into_inner());
    let _sweep = Sweeper::start(n_pages);
    let gt = groundtruth_loop(std::process::id(), 0.2, 1.6).unwrap();
    assert!(!gt.process_exited);
    assert_eq!(gt.measurements.len(), 8);
    gt.measurements.iter().map(|m| m.referenced_pages as f64).collect()
}

#[test]
fn sweeping_thread_pages_are_all_referenced() {
    let n = 8192;
    let pages = sweep_measurements(n);
    for p in &pages {
        assert!(*p >= n as f64, "{p} < {n}; all {pages:?}");
    }
}

#[test]
fn steady_sweep_measurements_are_stable() {
    let pages = sweep_measurements(8192);
    let mean = pages.iter().sum::<f64>() / pages.len() as f64;
    let var = pages.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / pages.len() as f64;
    let cv = var.sqrt() / mean;
    assert!(cv < 0.25, "cv {cv}; all {pages:?}");
}

#[test]
fn reaped_child_is_process_gone() {
    let mut child = Command::new("true").spawn().unwrap();
    let pid = child.id();
    child.wait().unwrap();
    match measure_wss(pid, 0.01) {
        Err(WssError::ProcessGone { pid: p }) => assert_eq!(p, pid),
        other => panic!("expected ProcessGone, got {other:?}"),
    }
    assert!(matches!(groundtruth_loop(pid, 0.01, 0.02), Err(WssError::ProcessGone { .. })));
}

#[test]
fn nonpositive_interval_rejected_before_touching_proc() {
    assert!(matches!(measure_wss(1, 0.0), Err(WssError::InvalidInterval(_))));
    assert!(matches!(measure_wss(1, f64::NAN), Err(WssError::InvalidInterval(_))));
}
