//! Binary layout of the record the kernel probe pushes through the perf
//! channel. Mirrors `probe/wsse_probe_abi.h`; both sides must agree.
//!
//! ```text
//! offset  size  field
//!      0     4  pid           (u32, little-endian)
//!      4    16  comm          (NUL-padded task name)
//!     20     4  padding       (zero)
//!     24     8  count         (u64, faults in this flush window)
//!     32     8  kernel_ts_ns  (u64, CLOCK_MONOTONIC at flush)
//! total 40
//! ```

pub const COMM_LEN: usize = 16;
pub const RECORD_SIZE: usize = 40;
/// Threshold (u64) then the comm filter.
pub const PROBE_CONFIG_SIZE: usize = 24;

pub const ATTACH_SYMBOL: &str = "__handle_mm_fault";
pub const MAP_COUNTS: &str = "counts";
pub const MAP_FREQUENCY: &str = "frq";
pub const MAP_CONFIG: &str = "probe_config";
pub const MAP_DROPPED: &str = "dropped";
pub const MAP_EVENTS: &str = "events";
pub const COUNTER_MAP_CAPACITY: u32 = 10240;

const PID_OFFSET: usize = 0;
const COMM_OFFSET: usize = 4;
const COUNT_OFFSET: usize = 24;
const TS_OFFSET: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmittedRecord {
    pub pid: u32,
    pub comm: [u8; COMM_LEN],
    pub count: u64,
    pub kernel_ts_ns: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("record too short: {0} bytes, need {RECORD_SIZE}")]
    Truncated(usize),
    #[error("comm field is not NUL-terminated")]
    UnterminatedComm,
}

impl EmittedRecord {
    pub fn new(pid: u32, comm: &str, count: u64, kernel_ts_ns: u64) -> Self {
        Self {
            pid,
            comm: comm_bytes(comm),
            count,
            kernel_ts_ns,
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, RecordError> {
        if buf.len() < RECORD_SIZE {
            return Err(RecordError::Truncated(buf.len()));
        }
        let mut comm = [0u8; COMM_LEN];
        comm.copy_from_slice(&buf[COMM_OFFSET..COMM_OFFSET + COMM_LEN]);
        if !comm.contains(&0) {
            return Err(RecordError::UnterminatedComm);
        }
        Ok(Self {
            pid: u32::from_le_bytes(buf[PID_OFFSET..PID_OFFSET + 4].try_into().unwrap()),
            comm,
            count: u64::from_le_bytes(buf[COUNT_OFFSET..COUNT_OFFSET + 8].try_into().unwrap()),
            kernel_ts_ns: u64::from_le_bytes(buf[TS_OFFSET..TS_OFFSET + 8].try_into().unwrap()),
        })
    }

    pub fn encode(&self) -> [u8; RECORD_SIZE] {
        let mut out = [0u8; RECORD_SIZE];
        out[PID_OFFSET..PID_OFFSET + 4].copy_from_slice(&self.pid.to_le_bytes());
        out[COMM_OFFSET..COMM_OFFSET + COMM_LEN].copy_from_slice(&self.comm);
        out[COUNT_OFFSET..COUNT_OFFSET + 8].copy_from_slice(&self.count.to_le_bytes());
        out[TS_OFFSET..TS_OFFSET + 8].copy_from_slice(&self.kernel_ts_ns.to_le_bytes());
        out
    }

    /// Task name up to the first NUL, lossily decoded.
    pub fn comm_str(&self) -> String {
        let end = self.comm.iter().position(|&b| b == 0).unwrap_or(COMM_LEN);
        String::from_utf8_lossy(&self.comm[..end]).into_owned()
    }
}

/// Kernel-style comm: at most 15 bytes followed by NUL padding.
pub fn comm_bytes(name: &str) -> [u8; COMM_LEN] {
    let mut out = [0u8; COMM_LEN];
    let bytes = name.as_bytes();
    let n = bytes.len().min(COMM_LEN - 1);
    out[..n].copy_from_slice(&bytes[..n]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets() {
        let rec = EmittedRecord::new(0x0102_0304, "myprogram", 100, 0xAABB);
        let buf = rec.encode();
        assert_eq!(&buf[0..4], &[4, 3, 2, 1]);
        assert_eq!(&buf[4..13], b"myprogram");
        assert_eq!(buf[13], 0);
        assert_eq!(&buf[20..24], &[0; 4]);
        assert_eq!(buf[24], 100);
        assert_eq!(&buf[32..34], &[0xBB, 0xAA]);
        assert_eq!(EmittedRecord::decode(&buf).unwrap(), rec);
    }

    #[test]
    fn long_names_truncate_to_fifteen_bytes() {
        let rec = EmittedRecord::new(1, "a_very_long_process_name", 1, 0);
        assert_eq!(rec.comm_str(), "a_very_long_pro");
    }

    #[test]
    fn short_buffer_rejected() {
        assert_eq!(
            EmittedRecord::decode(&[0u8; 39]),
            Err(RecordError::Truncated(39))
        );
    }

    #[test]
    fn unterminated_comm_rejected() {
        let mut buf = EmittedRecord::new(1, "x", 1, 0).encode();
        buf[4..20].fill(b'z');
        assert_eq!(
            EmittedRecord::decode(&buf),
            Err(RecordError::UnterminatedComm)
        );
    }
}
