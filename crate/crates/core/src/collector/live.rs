//! Live backend: loads the compiled probe object, creates the maps named in
//! `probe/wsse_probe_abi.h`, attaches the program to `__handle_mm_fault`
//! through the kprobe PMU and reads records from per-CPU perf buffers.
//!
//! Only raw syscalls are used. The loader owns every map definition; the
//! object contributes instructions, relocations against map symbols and
//! its license string.

use std::ffi::CString;
use std::fs;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use object::{Object, ObjectSection, ObjectSymbol, RelocationTarget};

use super::ring::{self, RingItem};
use super::{
    validate_config, CollectorConfig, CollectorError, CollectorSession, EmittedRecord,
    RecordSource, SourceBatch,
};
use crate::collector::record::comm_bytes;

pub use crate::collector::record::{
    ATTACH_SYMBOL, COUNTER_MAP_CAPACITY, MAP_CONFIG, MAP_COUNTS, MAP_DROPPED, MAP_EVENTS, MAP_FREQUENCY,
    PROBE_CONFIG_SIZE,
};

const KPROBE_PMU_TYPE: &str = "/sys/bus/event_source/devices/kprobe/type";
const PERF_DATA_PAGES: usize = 8;

const BPF_MAP_CREATE: libc::c_long = 0;
const BPF_MAP_LOOKUP_ELEM: libc::c_long = 1;
const BPF_MAP_UPDATE_ELEM: libc::c_long = 2;
const BPF_PROG_LOAD: libc::c_long = 5;

const BPF_MAP_TYPE_HASH: u32 = 1;
const BPF_MAP_TYPE_ARRAY: u32 = 2;
const BPF_MAP_TYPE_PERF_EVENT_ARRAY: u32 = 4;
const BPF_MAP_TYPE_PERCPU_HASH: u32 = 5;
const BPF_PROG_TYPE_KPROBE: u32 = 2;
const BPF_PSEUDO_MAP_FD: u8 = 1;
const BPF_LD_IMM64: u8 = 0x18;

const PERF_TYPE_SOFTWARE: u32 = 1;
const PERF_COUNT_SW_BPF_OUTPUT: u64 = 10;
const PERF_SAMPLE_RAW: u64 = 1 << 10;
const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;
const PERF_EVENT_IOC_ENABLE: libc::c_ulong = 0x2400;
const PERF_EVENT_IOC_SET_BPF: libc::c_ulong = 0x4004_2408;

const CAP_SYS_ADMIN: u32 = 21;
const CAP_PERFMON: u32 = 38;
const CAP_BPF: u32 = 39;

/// Value stored at key 0 of the config map.
#[repr(C)]
#[derive(Clone, Copy)]
struct ProbeConfigValue {
    threshold: u64,
    comm: [u8; 16],
}

const _: () = assert!(std::mem::size_of::<ProbeConfigValue>() == PROBE_CONFIG_SIZE);

#[repr(C)]
#[derive(Default)]
struct MapCreateAttr {
    map_type: u32,
    key_size: u32,
    value_size: u32,
    max_entries: u32,
    map_flags: u32,
}

#[repr(C)]
#[derive(Default)]
struct MapElemAttr {
    map_fd: u32,
    _pad: u32,
    key: u64,
    value: u64,
    flags: u64,
}

#[repr(C)]
#[derive(Default)]
struct ProgLoadAttr {
    prog_type: u32,
    insn_cnt: u32,
    insns: u64,
    license: u64,
    log_level: u32,
    log_size: u32,
    log_buf: u64,
    kern_version: u32,
    prog_flags: u32,
}

#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    type_: u32,
    size: u32,
    config: u64,
    sample_period: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
    branch_sample_type: u64,
    sample_regs_user: u64,
    sample_stack_user: u32,
    clockid: i32,
    sample_regs_intr: u64,
    aux_watermark: u32,
    sample_max_stack: u16,
    reserved2: u16,
    aux_sample_size: u32,
    reserved3: u32,
    sig_data: u64,
    config3: u64,
}

fn sys_bpf<T>(cmd: libc::c_long, attr: &mut T) -> std::io::Result<RawFd> {
    // SAFETY: attr points to a live, correctly laid out bpf_attr prefix.
    let rc = unsafe {
        libc::syscall(
            libc::SYS_bpf,
            cmd,
            attr as *mut T as *mut libc::c_void,
            std::mem::size_of::<T>() as libc::c_uint,
        )
    };
    if rc < 0 {
        Err(std::io::Error::last_os_error())
    } else {
        Ok(rc as RawFd)
    }
}

fn perf_event_open(attr: &mut PerfEventAttr, pid: i32, cpu: i32) -> std::io::Result<OwnedFd> {
    attr.size = std::mem::size_of::<PerfEventAttr>() as u32;
    // SAFETY: attr is a valid perf_event_attr with `size` set.
    let rc = unsafe {
        libc::syscall(
            libc::SYS_perf_event_open,
            attr as *mut PerfEventAttr,
            pid,
            cpu,
            -1i32,
            PERF_FLAG_FD_CLOEXEC,
        )
    };
    if rc < 0 {
        Err(std::io::Error::last_os_error())
    } else {
        // SAFETY: the kernel returned a fresh descriptor we now own.
        Ok(unsafe { OwnedFd::from_raw_fd(rc as RawFd) })
    }
}

fn ioctl(fd: &OwnedFd, req: libc::c_ulong, arg: libc::c_ulong) -> std::io::Result<()> {
    // SAFETY: perf ioctls take an integer argument.
    let rc = unsafe { libc::ioctl(fd.as_raw_fd(), req as _, arg) };
    if rc < 0 {
        Err(std::io::Error::last_os_error())
    } else {
        Ok(())
    }
}

fn map_error(what: &str, err: std::io::Error) -> CollectorError {
    match err.raw_os_error() {
        Some(libc::EPERM) | Some(libc::EACCES) => {
            CollectorError::PermissionDenied(format!("{what}: {err}"))
        }
        Some(libc::ENOENT) | Some(libc::EOPNOTSUPP) | Some(libc::EINVAL) => {
            CollectorError::UnsupportedKernel(format!("{what}: {err}"))
        }
        _ => CollectorError::Io(std::io::Error::new(err.kind(), format!("{what}: {err}"))),
    }
}

struct BpfMap {
    fd: OwnedFd,
}

impl BpfMap {
    fn create(map_type: u32, key_size: u32, value_size: u32, max_entries: u32) -> std::io::Result<Self> {
        let mut attr = MapCreateAttr {
            map_type,
            key_size,
            value_size,
            max_entries,
            map_flags: 0,
        };
        let fd = sys_bpf(BPF_MAP_CREATE, &mut attr)?;
        // SAFETY: fresh descriptor returned by the kernel.
        Ok(Self { fd: unsafe { OwnedFd::from_raw_fd(fd) } })
    }

    fn update<K, V>(&self, key: &K, value: &V) -> std::io::Result<()> {
        let mut attr = MapElemAttr {
            map_fd: self.fd.as_raw_fd() as u32,
            key: key as *const K as u64,
            value: value as *const V as u64,
            ..MapElemAttr::default()
        };
        sys_bpf(BPF_MAP_UPDATE_ELEM, &mut attr).map(|_| ())
    }

    fn lookup<K, V: Default>(&self, key: &K) -> std::io::Result<V> {
        let mut out = V::default();
        let mut attr = MapElemAttr {
            map_fd: self.fd.as_raw_fd() as u32,
            key: key as *const K as u64,
            value: &mut out as *mut V as u64,
            ..MapElemAttr::default()
        };
        sys_bpf(BPF_MAP_LOOKUP_ELEM, &mut attr)?;
        Ok(out)
    }
}

struct PerfBuffer {
    cpu: u32,
    fd: OwnedFd,
    base: *mut u8,
    mmap_len: usize,
    page: usize,
}

// SAFETY: the mapping is owned exclusively by this value.
unsafe impl Send for PerfBuffer {}

impl PerfBuffer {
    fn open(cpu: u32, page: usize) -> std::io::Result<Self> {
        let mut attr = PerfEventAttr {
            type_: PERF_TYPE_SOFTWARE,
            config: PERF_COUNT_SW_BPF_OUTPUT,
            sample_period: 1,
            sample_type: PERF_SAMPLE_RAW,
            wakeup_events: 1,
            ..PerfEventAttr::default()
        };
        let fd = perf_event_open(&mut attr, -1, cpu as i32)?;
        let mmap_len = page * (1 + PERF_DATA_PAGES);
        // SAFETY: mapping a perf fd with the documented 1 + 2^n page layout.
        let base = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                mmap_len,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_SHARED,
                fd.as_raw_fd(),
                0,
            )
        };
        if base == libc::MAP_FAILED {
            return Err(std::io::Error::last_os_error());
        }
        ioctl(&fd, PERF_EVENT_IOC_ENABLE, 0)?;
        Ok(Self {
            cpu,
            fd,
            base: base as *mut u8,
            mmap_len,
            page,
        })
    }

    fn head_tail(&self) -> (&AtomicU64, &AtomicU64) {
        // SAFETY: data_head/data_tail sit at fixed offsets 1024/1032 of the
        // control page and are 8-byte aligned.
        unsafe {
            (
                &*(self.base.add(1024) as *const AtomicU64),
                &*(self.base.add(1032) as *const AtomicU64),
            )
        }
    }

    fn drain(&mut self) -> Result<Vec<RingItem>, CollectorError> {
        let (head, tail) = self.head_tail();
        let h = head.load(Ordering::Acquire);
        let t = tail.load(Ordering::Relaxed);
        // SAFETY: the data area follows the control page within the mapping.
        let data = unsafe {
            std::slice::from_raw_parts(self.base.add(self.page), self.page * PERF_DATA_PAGES)
        };
        let (items, new_tail) = ring::drain(data, t, h)
            .map_err(|e| CollectorError::Io(std::io::Error::other(e.to_string())))?;
        tail.store(new_tail, Ordering::Release);
        Ok(items)
    }
}

impl Drop for PerfBuffer {
    fn drop(&mut self) {
        // SAFETY: base/mmap_len describe the mapping created in `open`.
        unsafe {
            libc::munmap(self.base as *mut libc::c_void, self.mmap_len);
        }
    }
}

/// An attached probe. Dropping it detaches everything.
pub struct LiveProbe {
    _counts: BpfMap,
    _frq: BpfMap,
    _config: BpfMap,
    dropped: BpfMap,
    _events: BpfMap,
    _prog: OwnedFd,
    _kprobe: OwnedFd,
    buffers: Vec<PerfBuffer>,
}

impl LiveProbe {
    pub fn cpus(&self) -> Vec<u32> {
        self.buffers.iter().map(|b| b.cpu).collect()
    }
}

impl RecordSource for LiveProbe {
    fn poll_batch(&mut self, timeout: Duration) -> Result<SourceBatch, CollectorError> {
        let mut fds: Vec<libc::pollfd> = self
            .buffers
            .iter()
            .map(|b| libc::pollfd {
                fd: b.fd.as_raw_fd(),
                events: libc::POLLIN,
                revents: 0,
            })
            .collect();
        let ms = timeout.as_millis().min(i32::MAX as u128) as i32;
        // SAFETY: fds is a valid array of pollfd for its length.
        let rc = unsafe { libc::poll(fds.as_mut_ptr(), fds.len() as libc::nfds_t, ms) };
        if rc < 0 {
            let err = std::io::Error::last_os_error();
            if err.kind() != std::io::ErrorKind::Interrupted {
                return Err(err.into());
            }
        }
        let mut batch = SourceBatch::default();
        for buf in &mut self.buffers {
            let cpu = buf.cpu;
            for item in buf.drain()? {
                match item {
                    RingItem::Sample(raw) => batch.records.push((cpu, EmittedRecord::decode(&raw)?)),
                    RingItem::Lost(n) => batch.lost += n,
                }
            }
        }
        Ok(batch)
    }

    fn kernel_dropped(&mut self) -> Result<u64, CollectorError> {
        let v: u64 = self.dropped.lookup(&0u32).map_err(|e| map_error("read dropped map", e))?;
        Ok(v)
    }
}

/// Loads `object_path`, attaches it and starts a session. Every resource
/// is released again if any step fails.
pub fn attach(
    config: CollectorConfig,
    object_path: &Path,
) -> Result<CollectorSession<LiveProbe>, CollectorError> {
    validate_config(&config)?;
    let status = fs::read_to_string("/proc/self/status")?;
    check_privileges(&status)?;
    let pmu_type = kprobe_pmu_type()?;
    let kallsyms = fs::read_to_string("/proc/kallsyms").unwrap_or_default();
    if !kallsyms_has(&kallsyms, ATTACH_SYMBOL) {
        return Err(CollectorError::UnsupportedKernel(format!(
            "attach point {ATTACH_SYMBOL} not found in /proc/kallsyms"
        )));
    }

    let bytes = fs::read(object_path)?;
    let program = ProbeObject::parse(&bytes)?;

    let possible = parse_cpu_list(&fs::read_to_string("/sys/devices/system/cpu/possible")?)?;
    let online = parse_cpu_list(&fs::read_to_string("/sys/devices/system/cpu/online")?)?;
    let n_possible = possible.iter().max().map_or(1, |m| m + 1);

    let mk = |ty, k, v, n, name: &str| {
        BpfMap::create(ty, k, v, n).map_err(|e| map_error(&format!("create map {name}"), e))
    };
    let counts = mk(BPF_MAP_TYPE_HASH, 4, 8, COUNTER_MAP_CAPACITY, MAP_COUNTS)?;
    let frq = mk(BPF_MAP_TYPE_PERCPU_HASH, 4, 8, COUNTER_MAP_CAPACITY, MAP_FREQUENCY)?;
    let cfg_map = mk(
        BPF_MAP_TYPE_ARRAY,
        4,
        std::mem::size_of::<ProbeConfigValue>() as u32,
        1,
        MAP_CONFIG,
    )?;
    let dropped = mk(BPF_MAP_TYPE_ARRAY, 4, 8, 1, MAP_DROPPED)?;
    let events = mk(BPF_MAP_TYPE_PERF_EVENT_ARRAY, 4, 4, n_possible, MAP_EVENTS)?;

    let value = ProbeConfigValue {
        threshold: config.flush_threshold,
        comm: comm_bytes(&config.comm_filter),
    };
    cfg_map
        .update(&0u32, &value)
        .map_err(|e| map_error("write probe config", e))?;

    let fd_for = |name: &str| -> Option<RawFd> {
        match name {
            MAP_COUNTS => Some(counts.fd.as_raw_fd()),
            MAP_FREQUENCY => Some(frq.fd.as_raw_fd()),
            MAP_CONFIG => Some(cfg_map.fd.as_raw_fd()),
            MAP_DROPPED => Some(dropped.fd.as_raw_fd()),
            MAP_EVENTS => Some(events.fd.as_raw_fd()),
            _ => None,
        }
    };
    let mut insns = program.insns.clone();
    for (offset, symbol) in &program.relocations {
        let fd = fd_for(symbol).ok_or_else(|| {
            CollectorError::InvalidObject(format!("relocation against unknown map {symbol:?}"))
        })?;
        patch_map_fd(&mut insns, *offset, fd)?;
    }

    let prog = load_program(&insns, &program.license)?;

    let mut buffers = Vec::with_capacity(online.len());
    let page = crate::clock::page_size() as usize;
    for &cpu in &online {
        let buf = PerfBuffer::open(cpu, page).map_err(|e| map_error("open perf buffer", e))?;
        let fd = buf.fd.as_raw_fd() as u32;
        events
            .update(&cpu, &fd)
            .map_err(|e| map_error("register perf buffer", e))?;
        buffers.push(buf);
    }

    let symbol = CString::new(ATTACH_SYMBOL).unwrap();
    let mut attr = PerfEventAttr {
        type_: pmu_type,
        config1: symbol.as_ptr() as u64,
        ..PerfEventAttr::default()
    };
    let kprobe = perf_event_open(&mut attr, -1, 0).map_err(|e| map_error("open kprobe", e))?;
    ioctl(&kprobe, PERF_EVENT_IOC_SET_BPF, prog.as_raw_fd() as libc::c_ulong)
        .map_err(|e| map_error("attach program", e))?;
    ioctl(&kprobe, PERF_EVENT_IOC_ENABLE, 0).map_err(|e| map_error("enable kprobe", e))?;

    let probe = LiveProbe {
        _counts: counts,
        _frq: frq,
        _config: cfg_map,
        dropped,
        _events: events,
        _prog: prog,
        _kprobe: kprobe,
        buffers,
    };
    CollectorSession::new(config, probe)
}

fn load_program(insns: &[u8], license: &str) -> Result<OwnedFd, CollectorError> {
    let license = CString::new(license)
        .map_err(|_| CollectorError::InvalidObject("license contains NUL".into()))?;
    let kern_version = fs::read_to_string("/proc/sys/kernel/osrelease")
        .ok()
        .and_then(|r| kernel_version_code(&r))
        .unwrap_or(0);
    let attempt = |log: Option<&mut Vec<u8>>| {
        let mut attr = ProgLoadAttr {
            prog_type: BPF_PROG_TYPE_KPROBE,
            insn_cnt: (insns.len() / 8) as u32,
            insns: insns.as_ptr() as u64,
            license: license.as_ptr() as u64,
            kern_version,
            ..ProgLoadAttr::default()
        };
        if let Some(buf) = log {
            attr.log_level = 1;
            attr.log_size = buf.len() as u32;
            attr.log_buf = buf.as_mut_ptr() as u64;
        }
        sys_bpf(BPF_PROG_LOAD, &mut attr)
    };
    match attempt(None) {
        // SAFETY: fresh descriptor returned by the kernel.
        Ok(fd) => Ok(unsafe { OwnedFd::from_raw_fd(fd) }),
        Err(err) if matches!(err.raw_os_error(), Some(libc::EPERM)) => {
            Err(CollectorError::PermissionDenied(format!("load program: {err}")))
        }
        Err(err) => {
            log::debug!("program load failed ({err}); retrying with the verifier log enabled");
            let mut log = vec![0u8; 1 << 20];
            let retry = attempt(Some(&mut log));
            if let Ok(fd) = retry {
                // SAFETY: as above.
                return Ok(unsafe { OwnedFd::from_raw_fd(fd) });
            }
            let end = log.iter().position(|&b| b == 0).unwrap_or(log.len());
            let text = String::from_utf8_lossy(&log[..end]);
            Err(CollectorError::VerifierRejected {
                message: err.to_string(),
                log: log_excerpt(&text, 40),
            })
        }
    }
}

fn log_excerpt(log: &str, tail_lines: usize) -> String {
    let lines: Vec<&str> = log.lines().collect();
    let start = lines.len().saturating_sub(tail_lines);
    lines[start..].join("\n")
}

/// Program section, relocations (byte offset, symbol) and license pulled
/// out of a relocatable BPF object.
#[derive(Debug)]
pub struct ProbeObject {
    pub section: String,
    pub insns: Vec<u8>,
    pub relocations: Vec<(u64, String)>,
    pub license: String,
}

impl ProbeObject {
    pub fn parse(bytes: &[u8]) -> Result<Self, CollectorError> {
        let invalid = |m: String| CollectorError::InvalidObject(m);
        let file = object::File::parse(bytes).map_err(|e| invalid(e.to_string()))?;
        let section = file
            .sections()
            .find(|s| s.name().is_ok_and(|n| n.starts_with("kprobe/")))
            .ok_or_else(|| invalid("no kprobe/ program section".into()))?;
        let name = section.name().map_err(|e| invalid(e.to_string()))?.to_string();
        let insns = section.data().map_err(|e| invalid(e.to_string()))?.to_vec();
        if insns.is_empty() || insns.len() % 8 != 0 {
            return Err(invalid(format!("section {name} is not a whole number of instructions")));
        }
        let mut relocations = Vec::new();
        for (offset, reloc) in section.relocations() {
            let RelocationTarget::Symbol(idx) = reloc.target() else {
                return Err(invalid(format!("unsupported relocation at {offset}")));
            };
            let sym = file.symbol_by_index(idx).map_err(|e| invalid(e.to_string()))?;
            let sym_name = sym.name().map_err(|e| invalid(e.to_string()))?;
            relocations.push((offset, sym_name.to_string()));
        }
        let license = file
            .section_by_name("license")
            .and_then(|s| s.data().ok())
            .map(|d| {
                let end = d.iter().position(|&b| b == 0).unwrap_or(d.len());
                String::from_utf8_lossy(&d[..end]).into_owned()
            })
            .unwrap_or_else(|| "GPL".to_string());
        Ok(Self {
            section: name,
            insns,
            relocations,
            license,
        })
    }
}

/// Rewrites the `ld_imm64` at byte `offset` to load map descriptor `fd`.
pub fn patch_map_fd(insns: &mut [u8], offset: u64, fd: RawFd) -> Result<(), CollectorError> {
    let off = offset as usize;
    if !off.is_multiple_of(8) || off + 16 > insns.len() {
        return Err(CollectorError::InvalidObject(format!(
            "relocation offset {offset} outside program"
        )));
    }
    if insns[off] != BPF_LD_IMM64 {
        return Err(CollectorError::InvalidObject(format!(
            "relocation at {offset} does not target ld_imm64 (opcode {:#x})",
            insns[off]
        )));
    }
    insns[off + 1] = (insns[off + 1] & 0x0f) | (BPF_PSEUDO_MAP_FD << 4);
    insns[off + 4..off + 8].copy_from_slice(&fd.to_le_bytes());
    Ok(())
}

fn kprobe_pmu_type() -> Result<u32, CollectorError> {
    let raw = fs::read_to_string(KPROBE_PMU_TYPE).map_err(|_| {
        CollectorError::UnsupportedKernel(
            "kprobe PMU not available (kernel built without CONFIG_KPROBE_EVENTS?)".into(),
        )
    })?;
    raw.trim()
        .parse()
        .map_err(|_| CollectorError::UnsupportedKernel(format!("bad kprobe PMU type {raw:?}")))
}

pub fn kallsyms_has(kallsyms: &str, symbol: &str) -> bool {
    kallsyms
        .lines()
        .any(|l| l.split_whitespace().nth(2) == Some(symbol))
}

/// Accepts either CAP_SYS_ADMIN or the CAP_BPF + CAP_PERFMON pair from
/// the `CapEff:` line of `/proc/self/status`.
pub fn check_privileges(status: &str) -> Result<(), CollectorError> {
    let caps = status
        .lines()
        .find_map(|l| l.strip_prefix("CapEff:"))
        .and_then(|v| u64::from_str_radix(v.trim(), 16).ok())
        .unwrap_or(0);
    let has = |bit: u32| caps & (1u64 << bit) != 0;
    if has(CAP_SYS_ADMIN) || (has(CAP_BPF) && has(CAP_PERFMON)) {
        Ok(())
    } else {
        Err(CollectorError::PermissionDenied(
            "need CAP_SYS_ADMIN or CAP_BPF+CAP_PERFMON (run as root)".into(),
        ))
    }
}

pub fn parse_cpu_list(text: &str) -> Result<Vec<u32>, CollectorError> {
    let bad = || CollectorError::UnsupportedKernel(format!("cannot parse cpu list {text:?}"));
    let mut cpus = Vec::new();
    for part in text.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u32 = a.parse().map_err(|_| bad())?;
                let b: u32 = b.parse().map_err(|_| bad())?;
                cpus.extend(a..=b);
            }
            None => cpus.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(cpus)
}

pub fn kernel_version_code(release: &str) -> Option<u32> {
    let mut it = release
        .trim()
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u32>().ok());
    let major = it.next()??;
    let minor = it.next()??;
    let patch = it.next().flatten().unwrap_or(0);
    Some((major << 16) | (minor << 8) | patch.min(255))
}
