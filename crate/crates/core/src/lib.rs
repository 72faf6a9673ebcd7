//! Working-set-size estimation from page-fault telemetry.
//!
//! Fault counts flow from the [`collector`] (or the [`simulator`]) through
//! [`features`] into a histogram gradient-boosted model ([`gbdt`]), whose
//! hyperparameters [`tuner`] can search. [`wss_probe`] provides ground-truth
//! labels on a live system.

pub mod clock;
pub mod collector;
pub mod features;
pub mod gbdt;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod simulator;
pub mod tuner;
pub mod wss_probe;
