use std::io::ErrorKind;

use wsse_core::collector::{CollectorError, EventLogError};
use wsse_core::features::FeatureError;
use wsse_core::gbdt::GbdtError;
use wsse_core::pipeline::PipelineError;
use wsse_core::simulator::SimError;
use wsse_core::tuner::TunerError;
use wsse_core::wss_probe::WssError;

pub const OK: u8 = 0;
pub const USAGE: u8 = 2;
pub const PERMISSION: u8 = 3;
pub const DATA: u8 = 4;
pub const INTERNAL: u8 = 5;

/// Flag combinations clap cannot check.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Input files that are missing or unreadable.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

fn io_code(e: &std::io::Error) -> u8 {
    match e.kind() {
        ErrorKind::PermissionDenied => PERMISSION,
        ErrorKind::NotFound | ErrorKind::InvalidData | ErrorKind::UnexpectedEof => DATA,
        _ => INTERNAL,
    }
}

fn gbdt_code(e: &GbdtError) -> u8 {
    match e {
        GbdtError::Internal(_) => INTERNAL,
        GbdtError::Io(io) => io_code(io),
        _ => DATA,
    }
}

pub fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.is::<DataError>() {
            return DATA;
        }
        if let Some(e) = cause.downcast_ref::<CollectorError>() {
            return match e {
                CollectorError::PermissionDenied(_) => PERMISSION,
                CollectorError::InvalidConfig(_) => USAGE,
                CollectorError::Io(io) => io_code(io),
                _ => INTERNAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<WssError>() {
            return match e {
                WssError::PermissionDenied { .. } => PERMISSION,
                WssError::InvalidInterval(_) => USAGE,
                WssError::Io { source, .. } => io_code(source),
                _ => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<GbdtError>() {
            return gbdt_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Gbdt(g) => gbdt_code(g),
                _ => DATA,
            };
        }
        if cause.is::<FeatureError>() || cause.is::<SimError>() || cause.is::<EventLogError>() {
            return DATA;
        }
        if let Some(e) = cause.downcast_ref::<TunerError>() {
            return match e {
                TunerError::NoTrials | TunerError::BadDomain(_) => USAGE,
                TunerError::AllFailed(..) => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return io_code(e);
        }
    }
    INTERNAL
}
