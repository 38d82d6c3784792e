//! Windowed beat, meter, phase and next-measure estimation.
//!
//! The entry point is [`analyze`], a pure function of a frozen event snapshot
//! and a frozen `current_time`. It can run on any worker thread; callers decide
//! whether the result is still usable by comparing `next_measure_onset` with
//! their own clock once it returns.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::NoteEventSet;
use crate::kernel::{
    autocorrelation, autocorrelation_curve, parncutt_salience, template_correlation_curve, KernelConfig, KernelError,
    LagGrid,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("need at least 2 notes in the analysis window, have {notes}")]
    InsufficientData { notes: usize },
    #[error("unsupported meter {0}; only 3 and 4 are modelled")]
    UnsupportedMeter(u32),
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error("event at {onset} ms lies after the analysis time {current_time} ms")]
    EventAfterAnalysisTime { onset: f64, current_time: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Beats per measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub enum Meter {
    Three,
    Four,
}

impl Meter {
    pub const ALL: [Meter; 2] = [Meter::Three, Meter::Four];

    pub fn beats(self) -> u32 {
        match self {
            Meter::Three => 3,
            Meter::Four => 4,
        }
    }

    /// Sixteenth notes per measure.
    pub fn sixteenths(self) -> usize {
        4 * self.beats() as usize
    }
}

impl From<Meter> for u32 {
    fn from(m: Meter) -> u32 {
        m.beats()
    }
}

impl TryFrom<u32> for Meter {
    type Error = TrackerError;

    fn try_from(n: u32) -> Result<Self, Self::Error> {
        match n {
            3 => Ok(Meter::Three),
            4 => Ok(Meter::Four),
            other => Err(TrackerError::UnsupportedMeter(other)),
        }
    }
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/4", self.beats())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub kernel: KernelConfig,
    /// Length of the analysis window, ms.
    pub window: f64,
    pub min_lag: f64,
    pub max_lag: f64,
    pub lag_step: f64,
    pub phase_step: f64,
    /// Cap on analysed notes (most recent kept); 0 disables the cap.
    pub max_notes: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::default(),
            window: 6000.0,
            min_lag: 100.0,
            max_lag: 2000.0,
            lag_step: 1.0,
            phase_step: 1.0,
            max_notes: 60,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        self.kernel.validate()?;
        let invalid = |msg: String| Err(TrackerError::InvalidConfig(msg));
        if !(self.min_lag > 0.0 && self.min_lag < self.max_lag && self.max_lag <= self.window) {
            return invalid(format!(
                "need 0 < min_lag < max_lag <= window, got {} / {} / {}",
                self.min_lag, self.max_lag, self.window
            ));
        }
        if !(self.lag_step >= 1.0 && self.phase_step >= 1.0) {
            return invalid(format!(
                "lag_step and phase_step must be >= 1 ms, got {} / {}",
                self.lag_step, self.phase_step
            ));
        }
        Ok(())
    }

    pub fn lag_grid(&self) -> LagGrid {
        LagGrid::inclusive(self.min_lag, self.max_lag, self.lag_step)
    }

    pub fn phase_grid(&self) -> LagGrid {
        LagGrid::inclusive(0.0, self.window, self.phase_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatEstimate {
    /// Beat duration, ms.
    pub beat: f64,
    pub bpm: f64,
    /// Normalized autocorrelation at the chosen lag, before salience weighting.
    pub clarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterEstimate {
    pub meter: Meter,
    /// Start of a measure relative to the window start, in `[0, measure)`.
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhythmEstimate {
    pub beat: BeatEstimate,
    pub meter: MeterEstimate,
    /// `beat * meter`, ms.
    pub measure: f64,
    /// Absolute time of the first measure start after `analyzed_at`.
    pub next_measure_onset: f64,
    pub note_count: usize,
    pub analyzed_at: f64,
}

/// Keeps events inside `[current_time - window, ...)` and rebases them so the
/// window starts at 0.
pub fn trim_window(events: &NoteEventSet, current_time: f64, window: f64) -> NoteEventSet {
    let start = current_time - window;
    let first = events.onsets().partition_point(|&t| t < start);
    NoteEventSet::from_sorted_unchecked(
        events.onsets()[first..].iter().map(|t| t - start).collect(),
        events.velocities()[first..].to_vec(),
    )
}

/// Picks the beat lag maximizing salience-weighted normalized autocorrelation.
///
/// `events` must already be windowed. Ties go to the smallest lag.
pub fn estimate_beat(events: &NoteEventSet, cfg: &TrackerConfig) -> Result<BeatEstimate, TrackerError> {
    if events.len() < 2 {
        return Err(TrackerError::InsufficientData { notes: events.len() });
    }
    let grid = cfg.lag_grid();
    let norm = autocorrelation(events, 0.0, &cfg.kernel);
    let curve = autocorrelation_curve(events, &grid, &cfg.kernel);

    let mut best: Option<(usize, f64, f64)> = None;
    for (k, ag) in curve.iter().enumerate() {
        let salience = parncutt_salience(grid.point(k), &cfg.kernel)?;
        let score = (ag / norm) * salience;
        if best.is_none_or(|(_, s, _)| score > s) {
            best = Some((k, score, salience));
        }
    }
    let (k, score, salience) = best.ok_or_else(|| TrackerError::InvalidConfig("empty lag grid".into()))?;
    let beat = grid.point(k);
    Ok(BeatEstimate {
        beat,
        bpm: 60_000.0 / beat,
        clarity: score / salience,
    })
}

/// Nine-point accent prototype: strong (1.0) on every `meter`-th beat, weak (0.1) elsewhere.
pub fn generate_prototype(meter: u32, beat: f64) -> Result<NoteEventSet, TrackerError> {
    let meter = Meter::try_from(meter)?;
    Ok(prototype(meter, beat))
}

fn prototype(meter: Meter, beat: f64) -> NoteEventSet {
    let m = meter.beats() as usize;
    let (onsets, velocities) = (0..9)
        .map(|i| (i as f64 * beat, if i % m == 0 { 1.0 } else { 0.1 }))
        .unzip();
    NoteEventSet::from_sorted_unchecked(onsets, velocities)
}

fn first_argmax(values: &[f64]) -> Option<(usize, f64)> {
    values
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
}

/// Chooses 3/4 or 4/4 by sliding each prototype across the window; the
/// best-scoring shift of the winner is the phase. Ties go to 4/4.
pub fn estimate_meter(events: &NoteEventSet, beat: f64, cfg: &TrackerConfig) -> Result<MeterEstimate, TrackerError> {
    if events.is_empty() {
        return Err(TrackerError::InsufficientData { notes: 0 });
    }
    if beat.is_nan() || beat <= 0.0 {
        return Err(TrackerError::InvalidConfig(format!(
            "beat must be positive, got {beat}"
        )));
    }
    let grid = cfg.phase_grid();
    let peak = |meter: Meter| {
        let curve = template_correlation_curve(events, &prototype(meter, beat), &grid, &cfg.kernel);
        first_argmax(&curve)
    };
    let empty = || TrackerError::InvalidConfig("empty phase grid".into());
    let (k3, max3) = peak(Meter::Three).ok_or_else(empty)?;
    let (k4, max4) = peak(Meter::Four).ok_or_else(empty)?;
    let (meter, k) = if max3 > max4 {
        (Meter::Three, k3)
    } else {
        (Meter::Four, k4)
    };

    // Any shift by whole measures names the same measure grid; report the earliest.
    let measure = beat * meter.beats() as f64;
    Ok(MeterEstimate {
        meter,
        phase: grid.point(k).rem_euclid(measure),
    })
}

/// Absolute onset of the first measure that starts after `current_time`.
pub fn predict_next_measure_onset(current_time: f64, window: f64, phase: f64, beat: f64, meter: Meter) -> f64 {
    let measure = beat * meter.beats() as f64;
    let mut offset = (window - phase).rem_euclid(measure);
    if offset >= measure {
        offset = 0.0;
    }
    let onset = current_time + measure - offset;
    if onset > current_time {
        onset
    } else {
        current_time + measure
    }
}

/// Full snapshot analysis: trim, cap, beat, meter and next measure onset.
pub fn analyze(events: &NoteEventSet, current_time: f64, cfg: &TrackerConfig) -> Result<RhythmEstimate, TrackerError> {
    cfg.validate()?;
    if let Some(onset) = events.last_onset().filter(|&t| t > current_time) {
        return Err(TrackerError::EventAfterAnalysisTime { onset, current_time });
    }
    let mut windowed = trim_window(events, current_time, cfg.window);
    if cfg.max_notes > 0 && windowed.len() > cfg.max_notes {
        windowed = windowed.most_recent(cfg.max_notes);
    }

    let beat = estimate_beat(&windowed, cfg)?;
    let meter = estimate_meter(&windowed, beat.beat, cfg)?;
    let measure = beat.beat * meter.meter.beats() as f64;
    let next_measure_onset = predict_next_measure_onset(current_time, cfg.window, meter.phase, beat.beat, meter.meter);

    Ok(RhythmEstimate {
        beat,
        meter,
        measure,
        next_measure_onset,
        note_count: windowed.len(),
        analyzed_at: current_time,
    })
}
