//! Session clocks, in milliseconds since the session started.

use std::sync::Mutex;
use std::time::Instant;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> f64;
}

/// Monotonic wall time zeroed at construction.
#[derive(Debug)]
pub struct MonotonicClock {
    start: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1000.0
    }
}

/// Clock that only moves when told to. For tests and offline drivers.
#[derive(Debug, Default)]
pub struct ManualClock {
    ms: Mutex<f64>,
}

impl ManualClock {
    pub fn new(start_ms: f64) -> Self {
        Self {
            ms: Mutex::new(start_ms),
        }
    }

    pub fn set(&self, ms: f64) {
        *self.ms.lock().expect("clock lock") = ms;
    }

    pub fn advance(&self, ms: f64) {
        *self.ms.lock().expect("clock lock") += ms;
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> f64 {
        *self.ms.lock().expect("clock lock")
    }
}
