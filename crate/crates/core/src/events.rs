//! Velocity-weighted note onsets, the input to every analysis routine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest velocity accepted after clamping. Non-positive inputs are raised to it.
pub const MIN_VELOCITY: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("onsets and velocities differ in length ({onsets} vs {velocities})")]
    LengthMismatch { onsets: usize, velocities: usize },
    #[error("non-finite value in event {index}")]
    NonFinite { index: usize },
}

/// Clamps a raw velocity into `(0, 1]`. The flag reports whether it changed.
pub fn clamp_velocity(v: f64) -> (f64, bool) {
    if v > 1.0 {
        (1.0, true)
    } else if v < MIN_VELOCITY {
        (MIN_VELOCITY, true)
    } else {
        (v, false)
    }
}

/// Paired onset times (ms) and velocities, kept sorted by onset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoteEventSet {
    onsets: Vec<f64>,
    velocities: Vec<f64>,
}

impl NoteEventSet {
    /// Builds a set from parallel lists. Events are sorted by onset (velocities
    /// travel with their onsets) and out-of-range velocities are clamped.
    pub fn new(onsets: Vec<f64>, velocities: Vec<f64>) -> Result<Self, EventError> {
        if onsets.len() != velocities.len() {
            return Err(EventError::LengthMismatch {
                onsets: onsets.len(),
                velocities: velocities.len(),
            });
        }
        if let Some(index) = onsets
            .iter()
            .zip(&velocities)
            .position(|(t, v)| !t.is_finite() || !v.is_finite())
        {
            return Err(EventError::NonFinite { index });
        }

        let mut pairs: Vec<(f64, f64)> = onsets.into_iter().zip(velocities).collect();
        let mut clamped = 0usize;
        for (_, v) in pairs.iter_mut() {
            let (c, changed) = clamp_velocity(*v);
            if changed {
                clamped += 1;
                *v = c;
            }
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} velocities into (0, 1]");
        }
        if !pairs.windows(2).all(|w| w[0].0 <= w[1].0) {
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let (onsets, velocities) = pairs.into_iter().unzip();
        Ok(Self { onsets, velocities })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set from `(onset, velocity)` pairs.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, EventError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let (onsets, velocities) = pairs.into_iter().unzip();
        Self::new(onsets, velocities)
    }

    /// Trusted constructor for internal callers that already hold sorted,
    /// in-range data.
    pub(crate) fn from_sorted_unchecked(onsets: Vec<f64>, velocities: Vec<f64>) -> Self {
        debug_assert_eq!(onsets.len(), velocities.len());
        debug_assert!(onsets.windows(2).all(|w| w[0] <= w[1]));
        Self { onsets, velocities }
    }

    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }

    pub fn onsets(&self) -> &[f64] {
        &self.onsets
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.onsets.iter().copied().zip(self.velocities.iter().copied())
    }

    pub fn last_onset(&self) -> Option<f64> {
        self.onsets.last().copied()
    }

    /// Events with onset `<= time`.
    pub fn up_to(&self, time: f64) -> Self {
        let end = self.onsets.partition_point(|&t| t <= time);
        Self::from_sorted_unchecked(self.onsets[..end].to_vec(), self.velocities[..end].to_vec())
    }

    /// The most recent `count` events.
    pub fn most_recent(&self, count: usize) -> Self {
        let start = self.len().saturating_sub(count);
        Self::from_sorted_unchecked(self.onsets[start..].to_vec(), self.velocities[start..].to_vec())
    }

    /// Same events with every onset moved by `delta` ms.
    pub fn shifted(&self, delta: f64) -> Self {
        Self::from_sorted_unchecked(self.onsets.iter().map(|t| t + delta).collect(), self.velocities.clone())
    }
}
