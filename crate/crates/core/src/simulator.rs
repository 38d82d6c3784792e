//! Human-like rhythm generation with ground truth.
//!
//! A metronome walks the sixteenth-note grid. At every position the accent
//! table gives both the probability of playing a note and its velocity; played
//! notes are displaced by Gaussian timing error. Tempo and meter can change
//! mid-performance according to a [`ChangeSchedule`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::NoteEventSet;
use crate::tracker::Meter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("accent table for {meter} needs {expected} weights, got {got}")]
    TableLength { meter: Meter, expected: usize, got: usize },
    #[error("accent weight {0} outside [0, 1]")]
    WeightRange(f64),
    #[error("accent table is not metrically ordered: {0}")]
    Hierarchy(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Per-sixteenth importance within one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccentTable {
    meter: Meter,
    weights: Vec<f64>,
}

impl AccentTable {
    /// Validates length and range, that the downbeat is the heaviest position,
    /// and that no off-beat position outweighs a beat position.
    pub fn new(meter: Meter, weights: Vec<f64>) -> Result<Self, SimulationError> {
        let expected = meter.sixteenths();
        if weights.len() != expected {
            return Err(SimulationError::TableLength {
                meter,
                expected,
                got: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(SimulationError::WeightRange(w));
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        if weights[0] < max {
            return Err(SimulationError::Hierarchy("downbeat is not the maximum".into()));
        }
        let weakest_beat = weights.iter().step_by(4).cloned().fold(1.0, f64::min);
        let strongest_offbeat = weights
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 4 != 0)
            .map(|(_, &w)| w)
            .fold(0.0, f64::max);
        if strongest_offbeat > weakest_beat {
            return Err(SimulationError::Hierarchy(format!(
                "off-beat weight {strongest_offbeat} exceeds beat weight {weakest_beat}"
            )));
        }
        Ok(Self { meter, weights })
    }

    pub fn default_for(meter: Meter) -> Self {
        let weights = match meter {
            Meter::Four => vec![
                1.0, 0.1, 0.2, 0.1, 0.5, 0.1, 0.2, 0.1, 0.7, 0.1, 0.2, 0.1, 0.5, 0.1, 0.2, 0.1,
            ],
            Meter::Three => vec![1.0, 0.1, 0.2, 0.1, 0.5, 0.1, 0.2, 0.1, 0.5, 0.1, 0.2, 0.1],
        };
        Self { meter, weights }
    }

    /// Every position weighted `weight`.
    pub fn uniform(meter: Meter, weight: f64) -> Result<Self, SimulationError> {
        Self::new(meter, vec![weight; meter.sixteenths()])
    }

    pub fn meter(&self) -> Meter {
        self.meter
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, position: usize) -> f64 {
        self.weights[position]
    }
}

/// One table per meter, so a performance can switch meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccentTables {
    pub three: AccentTable,
    pub four: AccentTable,
}

impl Default for AccentTables {
    fn default() -> Self {
        Self {
            three: AccentTable::default_for(Meter::Three),
            four: AccentTable::default_for(Meter::Four),
        }
    }
}

impl AccentTables {
    pub fn for_meter(&self, meter: Meter) -> &AccentTable {
        match meter {
            Meter::Three => &self.three,
            Meter::Four => &self.four,
        }
    }
}

/// Mid-performance change. Changes take effect at the first sixteenth of
/// measure `after_measures + 1` (zero-based index `after_measures`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeSchedule {
    #[default]
    None,
    SuddenTempo {
        after_measures: usize,
        new_beat: f64,
    },
    SuddenMeter {
        after_measures: usize,
        new_meter: Meter,
    },
    /// Beat grows by `increment` ms every sixteenth for one measure, then holds.
    TempoRamp {
        after_measures: usize,
        increment: f64,
    },
}

impl ChangeSchedule {
    pub const DEFAULT_AFTER_MEASURES: usize = 5;

    pub fn validate(&self) -> Result<(), SimulationError> {
        match *self {
            ChangeSchedule::SuddenTempo { new_beat, .. } if new_beat.is_nan() || new_beat <= 0.0 => Err(
                SimulationError::InvalidConfig(format!("new beat must be positive, got {new_beat}")),
            ),
            ChangeSchedule::TempoRamp { increment, .. } if !(1.0..=5.0).contains(&increment.abs()) => {
                Err(SimulationError::InvalidConfig(format!(
                    "ramp increment must be 1..=5 ms per sixteenth in magnitude, got {increment}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn after_measures(&self) -> Option<usize> {
        match *self {
            ChangeSchedule::None => None,
            ChangeSchedule::SuddenTempo { after_measures, .. }
            | ChangeSchedule::SuddenMeter { after_measures, .. }
            | ChangeSchedule::TempoRamp { after_measures, .. } => Some(after_measures),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Quarter-note beat, ms.
    pub beat: f64,
    pub meter: Meter,
    /// Standard deviation of timing error, ms.
    pub sigma_err: f64,
    /// Number of sixteenth-note steps.
    pub steps: usize,
    pub accents: AccentTables,
    pub schedule: ChangeSchedule,
    pub rng_seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            beat: 500.0,
            meter: Meter::Four,
            sigma_err: 0.0,
            steps: 160,
            accents: AccentTables::default(),
            schedule: ChangeSchedule::None,
            rng_seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(self.beat.is_finite() && self.beat > 0.0) {
            return Err(SimulationError::InvalidConfig(format!(
                "beat must be positive, got {}",
                self.beat
            )));
        }
        if !(self.sigma_err.is_finite() && self.sigma_err >= 0.0) {
            return Err(SimulationError::InvalidConfig(format!(
                "sigma_err must be >= 0, got {}",
                self.sigma_err
            )));
        }
        self.schedule.validate()
    }
}

/// Effective setting at one sixteenth step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSetting {
    /// Quarter-note beat in force at this step, ms.
    pub beat: f64,
    pub meter: Meter,
    /// Sixteenth position within the measure.
    pub position: usize,
    pub measure_index: usize,
}

/// Expands a schedule into the per-step beat and meter.
pub fn apply_schedule(cfg: &SimulationConfig, schedule: &ChangeSchedule) -> Vec<StepSetting> {
    let mut settings = Vec::with_capacity(cfg.steps);
    let (mut measure_index, mut position) = (0usize, 0usize);
    for _ in 0..cfg.steps {
        let (beat, meter) = match *schedule {
            ChangeSchedule::None => (cfg.beat, cfg.meter),
            ChangeSchedule::SuddenTempo {
                after_measures,
                new_beat,
            } => {
                let beat = if measure_index >= after_measures {
                    new_beat
                } else {
                    cfg.beat
                };
                (beat, cfg.meter)
            }
            ChangeSchedule::SuddenMeter {
                after_measures,
                new_meter,
            } => {
                let meter = if measure_index >= after_measures {
                    new_meter
                } else {
                    cfg.meter
                };
                (cfg.beat, meter)
            }
            ChangeSchedule::TempoRamp {
                after_measures,
                increment,
            } => {
                let ramp_len = cfg.meter.sixteenths();
                let done = if measure_index < after_measures {
                    0
                } else if measure_index == after_measures {
                    position + 1
                } else {
                    ramp_len
                };
                (cfg.beat + done as f64 * increment, cfg.meter)
            }
        };
        settings.push(StepSetting {
            beat,
            meter,
            position,
            measure_index,
        });
        position += 1;
        if position == meter.sixteenths() {
            position = 0;
            measure_index += 1;
        }
    }
    settings
}

/// Ground truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t: f64,
    pub beat: f64,
    pub meter: Meter,
    pub measure_onset: bool,
}

/// Simulator output: the performance and what the simulated player intended.
///
/// `truth_timeline` holds one non-onset record per event, in event order and
/// at the event's time, plus one record per measure start at its unperturbed
/// grid time. It is sorted by time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceScript {
    pub events: NoteEventSet,
    pub truth_timeline: Vec<TruthRecord>,
}

impl PerformanceScript {
    /// Truth records paired with events, in event order.
    pub fn event_truths(&self) -> impl Iterator<Item = &TruthRecord> + '_ {
        self.truth_timeline.iter().filter(|r| !r.measure_onset)
    }

    pub fn measure_onsets(&self) -> Vec<f64> {
        self.truth_timeline
            .iter()
            .filter(|r| r.measure_onset)
            .map(|r| r.t)
            .collect()
    }

    /// The latest truth record at or before `time`.
    pub fn truth_at(&self, time: f64) -> Option<&TruthRecord> {
        let end = self.truth_timeline.partition_point(|r| r.t <= time);
        end.checked_sub(1).map(|i| &self.truth_timeline[i])
    }

    /// Time of the last event or truth record.
    pub fn duration(&self) -> f64 {
        let last_truth = self.truth_timeline.last().map_or(0.0, |r| r.t);
        self.events.last_onset().map_or(last_truth, |t| t.max(last_truth))
    }
}

/// Generates one performance. Deterministic for a given `rng_seed`.
pub fn generate(cfg: &SimulationConfig) -> Result<PerformanceScript, SimulationError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let jitter = Normal::new(0.0, cfg.sigma_err).map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;

    let mut notes: Vec<(f64, f64, TruthRecord)> = Vec::new();
    let mut onsets: Vec<TruthRecord> = Vec::new();
    let mut time = 0.0;
    for step in apply_schedule(cfg, &cfg.schedule) {
        if step.position == 0 {
            onsets.push(TruthRecord {
                t: time,
                beat: step.beat,
                meter: step.meter,
                measure_onset: true,
            });
        }
        let importance = cfg.accents.for_meter(step.meter).weight(step.position);
        if rng.random::<f64>() < importance {
            let error = if cfg.sigma_err > 0.0 {
                jitter.sample(&mut rng)
            } else {
                0.0
            };
            let onset = (time + error).max(0.0);
            let truth = TruthRecord {
                t: onset,
                beat: step.beat,
                meter: step.meter,
                measure_onset: false,
            };
            notes.push((onset, importance, truth));
        }
        time += step.beat / 4.0;
    }

    notes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (event_onsets, velocities): (Vec<f64>, Vec<f64>) = notes.iter().map(|n| (n.0, n.1)).unzip();
    let event_truths = notes.into_iter().map(|n| n.2);

    Ok(PerformanceScript {
        events: NoteEventSet::from_sorted_unchecked(event_onsets, velocities),
        truth_timeline: merge_by_time(event_truths.collect(), onsets),
    })
}

/// Stable merge of two time-sorted record lists; on equal times `a` goes first.
pub(crate) fn merge_by_time(a: Vec<TruthRecord>, b: Vec<TruthRecord>) -> Vec<TruthRecord> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut a, mut b) = (a.into_iter().peekable(), b.into_iter().peekable());
    loop {
        let take_a = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => x.t <= y.t,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        out.extend(if take_a { a.next() } else { b.next() });
    }
    out
}
