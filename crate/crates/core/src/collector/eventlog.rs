//! Event-log line format:
//!
//! ```text
//! pid=<u32> comm="<escaped>" count=<u64> kts=<u64> uts=<u64> el=<f64, 9 decimals>
//! ```
//!
//! Inside `comm`, `"` and `\` are backslash-escaped. A trailing line without
//! its LF is treated as a torn write and ignored.

use std::io::{self, BufRead, Write};

use super::FaultEvent;

#[derive(Debug, thiserror::Error)]
pub enum EventLogError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("write failed after {written} lines: {source}")]
    Write { written: usize, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn format_event(e: &FaultEvent) -> String {
    let mut comm = String::with_capacity(e.comm.len() + 2);
    for ch in e.comm.chars() {
        if ch == '"' || ch == '\\' {
            comm.push('\\');
        }
        comm.push(ch);
    }
    format!(
        "pid={} comm=\"{}\" count={} kts={} uts={} el={:.9}",
        e.pid, comm, e.fault_count, e.kernel_ts_ns, e.user_ts_ns, e.session_elapsed_s
    )
}

/// Appends one line per event and flushes. Each line goes out in a single
/// `write_all`, so a failure leaves only whole lines before it.
pub fn write_events<W: Write>(events: &[FaultEvent], sink: &mut W) -> Result<usize, EventLogError> {
    let mut written = 0;
    for e in events {
        let mut line = format_event(e);
        line.push('\n');
        sink.write_all(line.as_bytes())
            .map_err(|source| EventLogError::Write { written, source })?;
        written += 1;
    }
    sink.flush()
        .map_err(|source| EventLogError::Write { written, source })?;
    Ok(written)
}

pub fn parse_event(line: &str) -> Result<FaultEvent, String> {
    let mut rest = line.trim_end_matches('\r');
    let mut pid = None;
    let mut comm = None;
    let mut count = None;
    let mut kts = None;
    let mut uts = None;
    let mut el = None;

    while !rest.is_empty() {
        rest = rest.trim_start_matches(' ');
        if rest.is_empty() {
            break;
        }
        let eq = rest.find('=').ok_or_else(|| format!("expected key=value near {rest:?}"))?;
        let key = &rest[..eq];
        rest = &rest[eq + 1..];
        let value: String;
        if key == "comm" {
            let (v, tail) = take_quoted(rest)?;
            value = v;
            rest = tail;
        } else {
            let end = rest.find(' ').unwrap_or(rest.len());
            value = rest[..end].to_string();
            rest = &rest[end..];
        }
        let num_err = |e: &dyn std::fmt::Display| format!("bad {key}: {e}");
        match key {
            "pid" => pid = Some(value.parse::<u32>().map_err(|e| num_err(&e))?),
            "comm" => comm = Some(value),
            "count" => count = Some(value.parse::<u64>().map_err(|e| num_err(&e))?),
            "kts" => kts = Some(value.parse::<u64>().map_err(|e| num_err(&e))?),
            "uts" => uts = Some(value.parse::<u64>().map_err(|e| num_err(&e))?),
            "el" => el = Some(value.parse::<f64>().map_err(|e| num_err(&e))?),
            other => return Err(format!("unknown key {other:?}")),
        }
    }

    let missing = |k: &str| format!("missing {k}");
    Ok(FaultEvent {
        pid: pid.ok_or_else(|| missing("pid"))?,
        comm: comm.ok_or_else(|| missing("comm"))?,
        fault_count: count.ok_or_else(|| missing("count"))?,
        kernel_ts_ns: kts.ok_or_else(|| missing("kts"))?,
        user_ts_ns: uts.ok_or_else(|| missing("uts"))?,
        session_elapsed_s: el.ok_or_else(|| missing("el"))?,
    })
}

fn take_quoted(s: &str) -> Result<(String, &str), String> {
    let mut chars = s.char_indices();
    match chars.next() {
        Some((_, '"')) => {}
        _ => return Err("comm must be quoted".into()),
    }
    let mut out = String::new();
    let mut escaped = false;
    for (i, ch) in chars {
        if escaped {
            out.push(ch);
            escaped = false;
        } else if ch == '\\' {
            escaped = true;
        } else if ch == '"' {
            return Ok((out, &s[i + 1..]));
        } else {
            out.push(ch);
        }
    }
    Err("unterminated quote in comm".into())
}

pub fn read_event_log<R: BufRead>(mut reader: R) -> Result<Vec<FaultEvent>, EventLogError> {
    let mut events = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            log::warn!("event log line {line_no}: ignoring torn final line");
            break;
        }
        let line = buf.trim_end_matches('\n');
        if line.trim().is_empty() {
            continue;
        }
        let ev = parse_event(line).map_err(|msg| EventLogError::Malformed { line: line_no, msg })?;
        events.push(ev);
    }
    Ok(events)
}
