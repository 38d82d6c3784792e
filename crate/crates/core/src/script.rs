//! Line-delimited script files and offline replay.
//!
//! A script is the event-stream format (one `{"type":"note",...}` object per
//! line) optionally interleaved with ground-truth sidecar records
//! (`{"type":"truth",...}`). Replaying a script runs the same snapshot
//! analysis as a live session, either after every note or on a fixed cadence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventError, NoteEventSet};
use crate::simulator::{merge_by_time, PerformanceScript, TruthRecord};
use crate::tracker::{analyze, Meter, RhythmEstimate, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{notes} notes but {truths} event truth records")]
    TruthMismatch { notes: usize, truths: usize },
    #[error(transparent)]
    Events(#[from] EventError),
}

/// One line of a script file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptRecord {
    Note {
        t: f64,
        v: f64,
    },
    Truth {
        t: f64,
        beat: f64,
        meter: Meter,
        measure_onset: bool,
    },
}

pub fn write_script<W: Write>(script: &PerformanceScript, out: W) -> Result<(), ScriptError> {
    let mut out = BufWriter::new(out);
    let mut notes = script.events.iter();
    for rec in &script.truth_timeline {
        if !rec.measure_onset {
            if let Some((t, v)) = notes.next() {
                serde_json::to_writer(&mut out, &ScriptRecord::Note { t, v }).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
        }
        let truth = ScriptRecord::Truth {
            t: rec.t,
            beat: rec.beat,
            meter: rec.meter,
            measure_onset: rec.measure_onset,
        };
        serde_json::to_writer(&mut out, &truth).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    // Scripts recorded without truth carry notes only.
    for (t, v) in notes {
        serde_json::to_writer(&mut out, &ScriptRecord::Note { t, v }).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a script. Blank lines are ignored. Truth records are optional, but
/// when present there must be exactly one non-onset record per note.
pub fn read_script<R: BufRead>(input: R) -> Result<PerformanceScript, ScriptError> {
    let mut notes = Vec::new();
    let mut event_truths = Vec::new();
    let mut onsets = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScriptRecord = serde_json::from_str(&line).map_err(|e| ScriptError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match record {
            ScriptRecord::Note { t, v } => notes.push((t, v)),
            ScriptRecord::Truth {
                t,
                beat,
                meter,
                measure_onset,
            } => {
                let rec = TruthRecord {
                    t,
                    beat,
                    meter,
                    measure_onset,
                };
                if measure_onset {
                    onsets.push(rec);
                } else {
                    event_truths.push(rec);
                }
            }
        }
    }
    if !event_truths.is_empty() && event_truths.len() != notes.len() {
        return Err(ScriptError::TruthMismatch {
            notes: notes.len(),
            truths: event_truths.len(),
        });
    }

    // Sort notes and their truth together, then restore timeline order.
    let mut order: Vec<usize> = (0..notes.len()).collect();
    order.sort_by(|&a, &b| notes[a].0.total_cmp(&notes[b].0));
    let events = NoteEventSet::from_pairs(order.iter().map(|&i| notes[i]))?;
    let event_truths: Vec<TruthRecord> = if event_truths.is_empty() {
        Vec::new()
    } else {
        order.iter().map(|&i| event_truths[i]).collect()
    };
    onsets.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(PerformanceScript {
        events,
        truth_timeline: merge_by_time(event_truths, onsets),
    })
}

pub fn load_script(path: &Path) -> Result<PerformanceScript, ScriptError> {
    read_script(BufReader::new(File::open(path)?))
}

pub fn save_script(script: &PerformanceScript, path: &Path) -> Result<(), ScriptError> {
    write_script(script, File::create(path)?)
}

/// When the replay driver asks for an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    /// After every note, at the note's onset.
    EveryNote,
    /// At `cadence, 2 * cadence, ...` up to the script's duration.
    Cadence(f64),
}

/// Ground truth in force when an estimate was made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub beat: f64,
    pub meter: Meter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub estimate: RhythmEstimate,
    pub truth: Option<TruthPoint>,
    /// Simulated time of the estimate, ms.
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateTrace {
    pub entries: Vec<TraceEntry>,
    /// Triggers that produced no estimate for lack of notes.
    pub warmup_skipped: usize,
}

impl EstimateTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn predicted_onsets(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.estimate.next_measure_onset).collect()
    }
}

/// Replays `script` through the tracker. Deterministic.
pub fn replay(
    script: &PerformanceScript,
    trigger: Trigger,
    cfg: &TrackerConfig,
) -> Result<EstimateTrace, TrackerError> {
    cfg.validate()?;
    let mut trace = EstimateTrace::default();
    let run = |now: f64, truth: Option<TruthPoint>, trace: &mut EstimateTrace| match analyze(
        &script.events.up_to(now),
        now,
        cfg,
    ) {
        Ok(estimate) => {
            trace.entries.push(TraceEntry {
                estimate,
                truth,
                at: now,
            });
            Ok(())
        }
        Err(TrackerError::InsufficientData { .. }) => {
            trace.warmup_skipped += 1;
            Ok(())
        }
        Err(e) => Err(e),
    };

    match trigger {
        Trigger::EveryNote => {
            let truths: Vec<&TruthRecord> = script.event_truths().collect();
            for (i, &now) in script.events.onsets().iter().enumerate() {
                let truth = truths.get(i).map(|r| TruthPoint {
                    beat: r.beat,
                    meter: r.meter,
                });
                run(now, truth, &mut trace)?;
            }
        }
        Trigger::Cadence(cadence) => {
            if cadence.is_nan() || cadence <= 0.0 {
                return Err(TrackerError::InvalidConfig(format!(
                    "cadence must be positive, got {cadence}"
                )));
            }
            let duration = script.duration();
            let mut k = 1u64;
            loop {
                let now = k as f64 * cadence;
                if now > duration {
                    break;
                }
                let truth = script.truth_at(now).map(|r| TruthPoint {
                    beat: r.beat,
                    meter: r.meter,
                });
                run(now, truth, &mut trace)?;
                k += 1;
            }
        }
    }
    Ok(trace)
}

/// Loads a script file and replays it on a fixed cadence.
pub fn replay_file(path: &Path, cadence: f64, cfg: &TrackerConfig) -> Result<EstimateTrace, ReplayError> {
    let script = load_script(path)?;
    Ok(replay(&script, Trigger::Cadence(cadence), cfg)?)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, SimulationConfig};

    #[test]
    fn round_trip_preserves_script() {
        let script = generate(&SimulationConfig {
            sigma_err: 12.0,
            rng_seed: 9,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_script(&script, &mut buf).unwrap();
        let back = read_script(buf.as_slice()).unwrap();
        assert_eq!(back, script);
    }

    #[test]
    fn notes_only_script() {
        let text = "{\"type\":\"note\",\"t\":500,\"v\":1}\n\n{\"type\":\"note\",\"t\":0,\"v\":0.5}\n";
        let script = read_script(text.as_bytes()).unwrap();
        assert_eq!(script.events.onsets(), &[0.0, 500.0]);
        assert_eq!(script.events.velocities(), &[0.5, 1.0]);
        assert!(script.truth_timeline.is_empty());
    }

    #[test]
    fn corrupt_lines_are_reported() {
        let err = read_script("{\"type\":\"note\",\"t\":1,\"v\":1}\nnot json\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScriptError::Parse { line: 2, .. }), "{err}");
        let text = "{\"type\":\"note\",\"t\":1,\"v\":1}\n{\"type\":\"note\",\"t\":2,\"v\":1}\n\
                    {\"type\":\"truth\",\"t\":1,\"beat\":500,\"meter\":4,\"measure_onset\":false}\n";
        assert!(matches!(
            read_script(text.as_bytes()),
            Err(ScriptError::TruthMismatch { notes: 2, truths: 1 })
        ));
    }

    #[test]
    fn empty_script_gives_empty_trace() {
        let script = read_script("".as_bytes()).unwrap();
        let trace = replay(&script, Trigger::Cadence(500.0), &TrackerConfig::default()).unwrap();
        assert!(trace.is_empty());
        let trace = replay(&script, Trigger::EveryNote, &TrackerConfig::default()).unwrap();
        assert!(trace.is_empty());
    }
}
