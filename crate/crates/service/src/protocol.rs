//! Line-delimited JSON records exchanged with clients.

use pulsetrack::{Meter, RhythmEstimate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A record sent by a client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inbound {
    /// A note; without `t` the onset is the arrival time on the session clock.
    Note {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<f64>,
        v: f64,
    },
    /// Analyze now; `now` overrides the session clock.
    Analyze {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        now: Option<f64>,
    },
    /// Clock probe; answered with a pong carrying the session time.
    Ping { client_t: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("field `{field}` must be finite")]
    NonFinite { field: &'static str },
}

pub fn parse_inbound(line: &str) -> Result<Inbound, ProtocolError> {
    let record: Inbound = serde_json::from_str(line.trim()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let finite = |x: Option<f64>, field| match x {
        Some(x) if !x.is_finite() => Err(ProtocolError::NonFinite { field }),
        _ => Ok(()),
    };
    match record {
        Inbound::Note { t, v } => {
            finite(t, "t")?;
            finite(Some(v), "v")?;
        }
        Inbound::Analyze { now } => finite(now, "now")?,
        Inbound::Ping { client_t } => finite(Some(client_t), "client_t")?,
    }
    Ok(record)
}

/// Published estimate in wire form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub beat_ms: f64,
    pub bpm: f64,
    pub clarity: f64,
    pub meter: Meter,
    pub phase_ms: f64,
    pub next_measure_onset_ms: f64,
    pub note_count: usize,
    pub analyzed_at_ms: f64,
    /// The predicted onset had already passed when the estimate was published.
    pub stale: bool,
}

impl EstimateRecord {
    pub fn new(est: &RhythmEstimate, stale: bool) -> Self {
        Self {
            beat_ms: est.beat.beat,
            bpm: est.beat.bpm,
            clarity: est.beat.clarity,
            meter: est.meter.meter,
            phase_ms: est.meter.phase,
            next_measure_onset_ms: est.next_measure_onset,
            note_count: est.note_count,
            analyzed_at_ms: est.analyzed_at,
            stale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatusCode {
    Ready,
    InsufficientData,
    Warning,
    ProtocolError,
    AnalysisError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRecord {
    pub status: StatusCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ms: Option<f64>,
}

impl StatusRecord {
    pub fn new(status: StatusCode) -> Self {
        Self {
            status,
            message: None,
            note_count: None,
            at_ms: None,
        }
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.message = Some(message.into());
        self
    }
}

/// A record sent to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Estimate(EstimateRecord),
    Status(StatusRecord),
    Pong { client_t: f64, t: f64 },
}

impl Outbound {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("outbound records always serialize")
    }
}
