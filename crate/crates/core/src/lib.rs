//! Real-time beat, meter and measure-onset tracking for velocity-weighted
//! note streams.
//!
//! Onsets are smoothed into a sum of Gaussian bumps ("Gaussification"). The
//! beat is the lag that maximizes the salience-weighted autocorrelation of
//! that signal. The meter is the accent prototype (3/4 or 4/4) that correlates
//! best with it, and the best prototype shift gives the phase from which the
//! next measure start is extrapolated.
//!
//! Modules:
//!
//! - [`kernel`]: Gaussification, correlation, autocorrelation, pulse salience
//! - [`tracker`]: windowed beat, meter and next-measure estimation
//! - [`simulator`]: human-like performances with ground truth
//! - [`script`]: line-delimited script files and offline replay
//! - [`metrics`]: T-AC, M-AC, precision/recall and report records
//! - [`experiments`]: the evaluation sweeps

pub mod events;
pub mod experiments;
pub mod kernel;
pub mod metrics;
pub mod script;
pub mod simulator;
pub mod tracker;

pub use events::{EventError, NoteEventSet};
pub use kernel::KernelConfig;
pub use tracker::{analyze, BeatEstimate, Meter, MeterEstimate, RhythmEstimate, TrackerConfig, TrackerError};
