//! Co-design toolkit for lightweight magnetically levitated positioning stages.
//!
//! The pipeline goes: plate FE modal model -> mass-minimal structure under
//! frequency constraints -> grammian-based actuator/sensor placement -> MIMO
//! plant assembly with static decoupling -> per-channel loop-shaping control
//! tuned for bandwidth under a sensitivity-peak bound -> closed-loop analysis
//! (margins, acceleration capability, time-domain simulation).

pub mod analysis;
pub mod band;
pub mod config;
pub mod control;
pub mod eigen;
pub mod error;
pub mod fe;
pub mod freq;
pub mod geometry;
pub mod modal;
pub mod pipeline;
pub mod placement;
pub mod plant;
pub mod structure;

pub use error::{Error, Result};
