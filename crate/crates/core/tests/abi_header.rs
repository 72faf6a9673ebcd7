//! The shared C header and the Rust decoder must describe the same layout.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Command;

use wsse_core::collector::record::{
    ATTACH_SYMBOL, COUNTER_MAP_CAPACITY, MAP_CONFIG, MAP_COUNTS, MAP_DROPPED, MAP_EVENTS, MAP_FREQUENCY,
    PROBE_CONFIG_SIZE,
};
use wsse_core::collector::{EmittedRecord, COMM_LEN, RECORD_SIZE};

fn header_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("probe/wsse_probe_abi.h")
}

fn defines() -> HashMap<String, String> {
    let text = std::fs::read_to_string(header_path()).unwrap();
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("#define "))
        .filter_map(|rest| {
            let rest = rest.split("/*").next().unwrap().trim();
            let (name, value) = rest.split_once(char::is_whitespace)?;
            Some((name.to_string(), value.trim().trim_matches('"').to_string()))
        })
        .collect()
}

#[test]
fn header_constants_match() {
    let d = defines();
    assert_eq!(d["WSSE_ATTACH_SYMBOL"], ATTACH_SYMBOL);
    assert_eq!(d["WSSE_MAP_COUNTS"], MAP_COUNTS);
    assert_eq!(d["WSSE_MAP_FREQUENCY"], MAP_FREQUENCY);
    assert_eq!(d["WSSE_MAP_CONFIG"], MAP_CONFIG);
    assert_eq!(d["WSSE_MAP_DROPPED"], MAP_DROPPED);
    assert_eq!(d["WSSE_MAP_EVENTS"], MAP_EVENTS);
    assert_eq!(d["WSSE_COUNTER_MAP_CAPACITY"].parse::<u32>().unwrap(), COUNTER_MAP_CAPACITY);
    assert_eq!(d["WSSE_COMM_LEN"].parse::<usize>().unwrap(), COMM_LEN);
    assert_eq!(d["WSSE_RECORD_SIZE"].parse::<usize>().unwrap(), RECORD_SIZE);
    assert_eq!(d["WSSE_PROBE_CONFIG_SIZE"].parse::<usize>().unwrap(), PROBE_CONFIG_SIZE);
}

/// Compiles a host program against the header and compares the offsets it
/// reports with the bytes the Rust encoder produces. Skipped without `cc`.
#[test]
fn compiled_layout_matches_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("layout.c");
    let bin = dir.path().join("layout");
    std::fs::write(
        &src,
        r#"
#include <stddef.h>
#include <stdio.h>
typedef unsigned int __u32;
typedef unsigned long long __u64;
#include "wsse_probe_abi.h"
int main(void) {
    printf("%zu %zu %zu %zu %zu %zu %zu\n",
        sizeof(struct wsse_record),
        offsetof(struct wsse_record, pid),
        offsetof(struct wsse_record, comm),
        offsetof(struct wsse_record, count),
        offsetof(struct wsse_record, kernel_ts_ns),
        sizeof(struct wsse_probe_config),
        offsetof(struct wsse_probe_config, comm));
    return 0;
}
"#,
    )
    .unwrap();
    let include = header_path().parent().unwrap().to_path_buf();
    let status = match Command::new("cc")
        .arg("-std=c11")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("cc not available; layout check skipped");
            return;
        }
    };
    assert!(status.success(), "header does not compile");
    let out = Command::new(&bin).output().unwrap();
    let nums: Vec<usize> = String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    let [size, pid, comm, count, ts, cfg_size, cfg_comm] = nums[..] else {
        panic!("unexpected output {nums:?}");
    };
    assert_eq!(size, RECORD_SIZE);
    assert_eq!(cfg_size, PROBE_CONFIG_SIZE);
    assert_eq!(cfg_comm, 8);

    let rec = EmittedRecord::new(0x0403_0201, "abc", 0x1817_1615_1413_1211, 0x2827_2625_2423_2221);
    let bytes = rec.encode();
    assert_eq!(bytes[pid..pid + 4], 0x0403_0201u32.to_le_bytes());
    assert_eq!(&bytes[comm..comm + 4], b"abc\0");
    assert_eq!(bytes[count..count + 8], 0x1817_1615_1413_1211u64.to_le_bytes());
    assert_eq!(bytes[ts..ts + 8], 0x2827_2625_2423_2221u64.to_le_bytes());
}
