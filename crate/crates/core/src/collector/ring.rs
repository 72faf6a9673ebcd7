//! Decoding of a perf ring buffer data area (the pages after the
//! `perf_event_mmap_page` header). Pure byte manipulation so it can be
//! exercised without a kernel.

pub const PERF_RECORD_LOST: u32 = 2;
pub const PERF_RECORD_SAMPLE: u32 = 9;

const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RingItem {
    /// Raw payload of a PERF_SAMPLE_RAW sample (may include tail padding).
    Sample(Vec<u8>),
    Lost(u64),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RingError {
    #[error("record at offset {0} has invalid size {1}")]
    BadSize(u64, usize),
    #[error("data area length {0} is not a power of two")]
    BadArea(usize),
}

/// Reads every complete record between `tail` and `head` (free-running
/// byte counters) and returns them with the new tail. Unknown record
/// types are skipped.
pub fn drain(data: &[u8], mut tail: u64, head: u64) -> Result<(Vec<RingItem>, u64), RingError> {
    let len = data.len();
    if len == 0 || !len.is_power_of_two() {
        return Err(RingError::BadArea(len));
    }
    let mut items = Vec::new();
    while head.wrapping_sub(tail) >= HEADER_LEN as u64 {
        let hdr = read_wrapped(data, tail, HEADER_LEN);
        let kind = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
        let size = u16::from_le_bytes(hdr[6..8].try_into().unwrap()) as usize;
        if size < HEADER_LEN || size > len {
            return Err(RingError::BadSize(tail, size));
        }
        if head.wrapping_sub(tail) < size as u64 {
            break;
        }
        let body = read_wrapped(data, tail + HEADER_LEN as u64, size - HEADER_LEN);
        match kind {
            PERF_RECORD_SAMPLE if body.len() >= 4 => {
                let raw_len = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
                let end = (4 + raw_len).min(body.len());
                items.push(RingItem::Sample(body[4..end].to_vec()));
            }
            PERF_RECORD_LOST if body.len() >= 16 => {
                items.push(RingItem::Lost(u64::from_le_bytes(body[8..16].try_into().unwrap())));
            }
            _ => {}
        }
        tail = tail.wrapping_add(size as u64);
    }
    Ok((items, tail))
}

fn read_wrapped(data: &[u8], pos: u64, n: usize) -> Vec<u8> {
    let len = data.len();
    let start = (pos % len as u64) as usize;
    if start + n <= len {
        data[start..start + n].to_vec()
    } else {
        let first = len - start;
        let mut out = Vec::with_capacity(n);
        out.extend_from_slice(&data[start..]);
        out.extend_from_slice(&data[..n - first]);
        out
    }
}

/// Serializes records the way the kernel lays them out; used by tests and
/// by the in-memory fakes.
pub fn encode_sample(raw: &[u8]) -> Vec<u8> {
    // u32 size + payload, padded so the whole record is 8-byte aligned
    let body = 4 + raw.len();
    let size = (HEADER_LEN + body + 7) & !7;
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(&PERF_RECORD_SAMPLE.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(size as u16).to_le_bytes());
    let padded_raw = size - HEADER_LEN - 4;
    out.extend_from_slice(&(padded_raw as u32).to_le_bytes());
    out.extend_from_slice(raw);
    out.resize(size, 0);
    out
}

pub fn encode_lost(lost: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(24);
    out.extend_from_slice(&PERF_RECORD_LOST.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    out.extend_from_slice(&lost.to_le_bytes());
    out
}
