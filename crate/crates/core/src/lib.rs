//! Covert vision screening embedded in games.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every pure piece of
//! the screening pipeline:
//!
//! * [`geometry`] converts between pixels and visual angle for a known screen
//!   and a measured viewing distance.
//! * [`stimulus`] and [`color`] describe probes for the four monitored
//!   channels (acuity, color axes, grating orientation, dim-light detection).
//! * [`staircase`] and [`session`] schedule probes inside gameplay with a
//!   3-down-1-up staircase per condition cell and a probe budget.
//! * [`psychometric`] fits a logistic psychometric function by maximum
//!   likelihood, [`screening`] turns fits into impairment flags.
//! * [`monitor`] tracks thresholds across sessions, raises alerts and builds
//!   the parent report; [`analysis`] derives all of that from a trial log.
//! * [`observer`] is a simulated child with known impairments used to verify
//!   the whole loop.
//!
//! IO, JSON Lines logs, the HTTP service and the CLI live in the `gamediag`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod analysis;
pub mod color;
pub mod config;
pub mod geometry;
pub mod monitor;
pub mod observer;
pub mod psychometric;
pub mod screening;
pub mod session;
pub mod staircase;
pub mod stimulus;

mod math;
pub mod schema;

pub use analysis::{derive, DerivedState};
pub use config::Config;
pub use schema::SchemaV1;
pub use geometry::{arcmin_to_px, px_to_arcmin, GeometryError, ScreenProfile, ViewingSample};
pub use monitor::{Alert, EstimateSeries, Report};
pub use observer::ImpairmentProfile;
pub use psychometric::{fit_psychometric, FitError, Observation, PsychometricFit};
pub use screening::{ScreenKind, ScreenResult};
pub use session::{Response, SessionState, TrialRecord};
pub use stimulus::{Channel, ColorAxis, ProbeMode, StimulusSpec};

/// Schema version stamped on every serialized document.
pub const SCHEMA_VERSION: u32 = 1;
