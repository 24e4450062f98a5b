//! Event-driven simulation of an intermittent-contact (tapping-mode) atomic
//! force microscope.
//!
//! The cantilever is a driven point-mass impact oscillator with a DMT
//! tip-sample force and a restitution reset law. On top of it sit the z-piezo
//! model, a peak-hold amplitude demodulator and the controller stack: PID with
//! Q control, dynamic PID, a four-mode hybrid PID, an adaptive scan-speed
//! regulator and a line-to-line predictive feedforward.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command line live in the `afm-sim` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod control;
pub mod demod;
mod error;
mod math;
pub mod metrics;
pub mod model;
pub mod sample;
pub mod sim;

pub use error::{Error, Result};
