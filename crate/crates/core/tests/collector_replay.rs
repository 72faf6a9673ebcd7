//! Simulator flushes replayed through the collector, the event log and the
//! feature join come out as the simulator's own dataset.

use std::io::Cursor;
use std::time::Duration;

use wsse_core::collector::{read_event_log, write_events, CollectorConfig, CollectorSession};
use wsse_core::features::{intervals_from_events, join_labels, JoinPolicy, LabelPoint};
use wsse_core::simulator::{emit_labeled_dataset, SimulationConfig};

fn config() -> SimulationConfig {
    SimulationConfig::parse(
        "pattern = phased\nphase_pattern = random\nphases = 4096:0.05,65536:0.05\n\
         access_rate_hz = 1000000\nduration_s = 0.4\ncapacity_pages = 16\ncpus = 4\nseed = 9\n",
    )
    .unwrap()
}

#[test]
fn replay_reproduces_simulated_dataset() {
    let run = emit_labeled_dataset(&config()).unwrap();
    let mut session = CollectorSession::new(CollectorConfig::default(), run.to_channel()).unwrap();
    let events = session.poll(Duration::ZERO).unwrap();
    assert!(session.source_mut().is_empty());
    assert_eq!(events.len(), run.records.len());
    let flushed: u64 = events.iter().map(|e| e.fault_count).sum();
    assert_eq!(flushed + run.residual, run.fault_total);

    let mut log = Vec::new();
    write_events(&events, &mut log).unwrap();
    let parsed = read_event_log(Cursor::new(&log)).unwrap();
    assert_eq!(parsed.len(), events.len());
    for (a, b) in parsed.iter().zip(&events) {
        assert_eq!((a.pid, &a.comm, a.fault_count, a.kernel_ts_ns), (b.pid, &b.comm, b.fault_count, b.kernel_ts_ns));
    }

    let intervals = intervals_from_events(&parsed).unwrap();
    let labels: Vec<LabelPoint> = run.to_measurements().iter().map(LabelPoint::from).collect();
    let joined = join_labels(&intervals, &labels, JoinPolicy { max_gap_ns: 0 }).unwrap();
    assert_eq!(joined.unmatched, 0);

    let direct = run.to_dataset().unwrap();
    assert_eq!(joined.rows, direct.rows);
}

#[test]
fn min_value_drops_small_records() {
    let run = emit_labeled_dataset(&config()).unwrap();
    let floor = 60;
    let cfg = CollectorConfig {
        min_value: floor,
        ..CollectorConfig::default()
    };
    let mut session = CollectorSession::new(cfg, run.to_channel()).unwrap();
    let events = session.poll(Duration::ZERO).unwrap();
    let expected = run.records.iter().filter(|r| r.fault_count >= floor).count();
    assert_eq!(events.len(), expected);
    let c = session.counters();
    assert_eq!(c.received as usize, run.records.len());
    assert_eq!(c.filtered_out as usize, run.records.len() - expected);
}

#[test]
fn overruns_and_submission_failures_are_counted() {
    let run = emit_labeled_dataset(&config()).unwrap();
    let mut ch = run.to_channel();
    ch.overrun(3);
    ch.submission_failures(2);
    let mut session = CollectorSession::new(CollectorConfig::default(), ch).unwrap();
    session.poll(Duration::ZERO).unwrap();
    session.source_mut().submission_failures(1);
    session.poll(Duration::ZERO).unwrap();
    assert_eq!(session.counters().dropped_kernel, 6);
}
