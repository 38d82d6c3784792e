//! A live tracking session: note ingestion, single-flight snapshot analysis
//! and publication to subscribers.
//!
//! Ingestion and analysis only share the note ring, and the ring lock is held
//! just long to insert a note or copy a snapshot. Analysis runs on a worker
//! thread against that copy and a frozen `now`.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use pulsetrack::events::clamp_velocity;
use pulsetrack::{analyze, NoteEventSet, RhythmEstimate, TrackerConfig, TrackerError};
use thiserror::Error;

use crate::clock::Clock;
use crate::protocol::{parse_inbound, EstimateRecord, Inbound, Outbound, StatusCode, StatusRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub tracker: TrackerConfig,
    /// Milliseconds between automatic analyses; 0 disables the ticker.
    pub cadence_ms: f64,
    /// Upper bound on buffered notes.
    pub max_ring: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            cadence_ms: 500.0,
            max_ring: 4096,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("note field `{field}` must be finite")]
    NonFinite { field: &'static str },
}

/// Receipt for an ingested note.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ack {
    pub onset: f64,
    pub velocity: f64,
    /// The velocity was outside `(0, 1]` and was clamped.
    pub clamped: bool,
    pub buffered: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickOutcome {
    Started,
    /// An analysis was already running; this tick was dropped.
    Coalesced,
}

/// The most recent successful analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Published {
    pub estimate: RhythmEstimate,
    pub stale: bool,
    pub published_at: f64,
}

struct Job {
    events: NoteEventSet,
    now: f64,
}

struct Shared {
    cfg: SessionConfig,
    clock: Arc<dyn Clock>,
    ring: Mutex<VecDeque<(f64, f64)>>,
    busy: AtomicBool,
    last: Mutex<Option<Published>>,
    subscribers: Mutex<Vec<Sender<Outbound>>>,
    analyses: AtomicU64,
    coalesced: AtomicU64,
}

impl Shared {
    fn broadcast(&self, msg: &Outbound) {
        let mut subs = self.subscribers.lock().expect("subscriber lock");
        subs.retain(|tx| tx.send(msg.clone()).is_ok());
    }

    fn run(&self, job: Job) {
        let result = analyze(&job.events, job.now, &self.cfg.tracker);
        let published_at = self.clock.now_ms();
        let msg = match result {
            Ok(estimate) => {
                let stale = estimate.next_measure_onset < published_at;
                *self.last.lock().expect("estimate lock") = Some(Published {
                    estimate,
                    stale,
                    published_at,
                });
                Outbound::Estimate(EstimateRecord::new(&estimate, stale))
            }
            Err(TrackerError::InsufficientData { notes }) => Outbound::Status(StatusRecord {
                note_count: Some(notes),
                at_ms: Some(job.now),
                ..StatusRecord::new(StatusCode::InsufficientData)
            }),
            Err(e) => {
                log::error!("analysis at {} failed: {e}", job.now);
                Outbound::Status(StatusRecord {
                    at_ms: Some(job.now),
                    ..StatusRecord::new(StatusCode::AnalysisError).with_message(e.to_string())
                })
            }
        };
        self.analyses.fetch_add(1, Ordering::Relaxed);
        self.broadcast(&msg);
        self.busy.store(false, Ordering::Release);
    }
}

pub struct Session {
    shared: Arc<Shared>,
    jobs: Option<SyncSender<Job>>,
    worker: Option<JoinHandle<()>>,
}

impl Session {
    pub fn new(cfg: SessionConfig, clock: Arc<dyn Clock>) -> Result<Self, TrackerError> {
        cfg.tracker.validate()?;
        if cfg.cadence_ms.is_nan() || cfg.cadence_ms < 0.0 || cfg.max_ring == 0 {
            return Err(TrackerError::InvalidConfig(format!(
                "cadence must be >= 0 and ring non-empty (cadence {}, ring {})",
                cfg.cadence_ms, cfg.max_ring
            )));
        }
        let shared = Arc::new(Shared {
            cfg,
            clock,
            ring: Mutex::new(VecDeque::new()),
            busy: AtomicBool::new(false),
            last: Mutex::new(None),
            subscribers: Mutex::new(Vec::new()),
            analyses: AtomicU64::new(0),
            coalesced: AtomicU64::new(0),
        });
        let (tx, rx) = mpsc::sync_channel::<Job>(1);
        let worker_shared = Arc::clone(&shared);
        let worker = thread::Builder::new()
            .name("pulsetrack-analysis".into())
            .spawn(move || {
                for job in rx {
                    worker_shared.run(job);
                }
            })
            .expect("spawn analysis worker");
        Ok(Self {
            shared,
            jobs: Some(tx),
            worker: Some(worker),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.shared.cfg
    }

    pub fn now(&self) -> f64 {
        self.shared.clock.now_ms()
    }

    /// Buffers one note. Never waits for a running analysis.
    pub fn ingest(&self, t: Option<f64>, v: f64) -> Result<Ack, IngestError> {
        if t.is_some_and(|t| !t.is_finite()) {
            return Err(IngestError::NonFinite { field: "t" });
        }
        if !v.is_finite() {
            return Err(IngestError::NonFinite { field: "v" });
        }
        let onset = t.unwrap_or_else(|| self.shared.clock.now_ms());
        let (velocity, clamped) = clamp_velocity(v);
        if clamped {
            log::warn!("velocity {v} at {onset} clamped to {velocity}");
        }

        let keep_after = 2.0 * self.shared.cfg.tracker.window;
        let mut ring = self.shared.ring.lock().expect("ring lock");
        if ring.back().is_none_or(|&(last, _)| last <= onset) {
            ring.push_back((onset, velocity));
        } else {
            let at = ring.partition_point(|&(t, _)| t <= onset);
            ring.insert(at, (onset, velocity));
        }
        let newest = ring.back().map_or(onset, |&(t, _)| t);
        while ring.len() > self.shared.cfg.max_ring || ring.front().is_some_and(|&(t, _)| t < newest - keep_after) {
            ring.pop_front();
        }
        Ok(Ack {
            onset,
            velocity,
            clamped,
            buffered: ring.len(),
        })
    }

    /// Buffered notes with onset at or before `now`, in onset order.
    pub fn snapshot(&self, now: f64) -> NoteEventSet {
        let ring = self.shared.ring.lock().expect("ring lock");
        let end = ring.partition_point(|&(t, _)| t <= now);
        let pairs: Vec<(f64, f64)> = ring.range(..end).copied().collect();
        drop(ring);
        NoteEventSet::from_pairs(pairs).expect("ring holds validated notes")
    }

    /// Starts an analysis of the current buffer at `now` (default: the
    /// session clock), unless one is already running.
    pub fn tick(&self, now: Option<f64>) -> TickOutcome {
        if self
            .shared
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            self.shared.coalesced.fetch_add(1, Ordering::Relaxed);
            return TickOutcome::Coalesced;
        }
        let now = now.unwrap_or_else(|| self.shared.clock.now_ms());
        let job = Job {
            events: self.snapshot(now),
            now,
        };
        let sent = self.jobs.as_ref().is_some_and(|tx| tx.send(job).is_ok());
        if !sent {
            self.shared.busy.store(false, Ordering::Release);
            log::error!("analysis worker is gone");
        }
        TickOutcome::Started
    }

    pub fn is_busy(&self) -> bool {
        self.shared.busy.load(Ordering::Acquire)
    }

    /// Waits until no analysis is running. Returns false on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.is_busy() {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(1));
        }
        true
    }

    pub fn last_estimate(&self) -> Option<Published> {
        *self.shared.last.lock().expect("estimate lock")
    }

    /// Completed analyses and dropped ticks so far.
    pub fn counters(&self) -> (u64, u64) {
        (
            self.shared.analyses.load(Ordering::Relaxed),
            self.shared.coalesced.load(Ordering::Relaxed),
        )
    }

    pub fn add_subscriber(&self, tx: Sender<Outbound>) {
        self.shared.subscribers.lock().expect("subscriber lock").push(tx);
    }

    pub fn subscribe(&self) -> Receiver<Outbound> {
        let (tx, rx) = mpsc::channel();
        self.add_subscriber(tx);
        rx
    }

    pub fn clear_subscribers(&self) {
        self.shared.subscribers.lock().expect("subscriber lock").clear();
    }

    /// Applies one protocol line and returns the immediate replies.
    /// Estimates arrive later through subscribers.
    pub fn handle_line(&self, line: &str) -> Vec<Outbound> {
        let protocol_error = |msg: String| {
            vec![Outbound::Status(
                StatusRecord::new(StatusCode::ProtocolError).with_message(msg),
            )]
        };
        match parse_inbound(line) {
            Err(e) => protocol_error(e.to_string()),
            Ok(Inbound::Note { t, v }) => match self.ingest(t, v) {
                Ok(ack) if ack.clamped => vec![Outbound::Status(StatusRecord {
                    at_ms: Some(ack.onset),
                    ..StatusRecord::new(StatusCode::Warning)
                        .with_message(format!("velocity {v} clamped to {}", ack.velocity))
                })],
                Ok(_) => Vec::new(),
                Err(e) => protocol_error(e.to_string()),
            },
            Ok(Inbound::Analyze { now }) => {
                if self.tick(now) == TickOutcome::Coalesced {
                    log::debug!("analyze request coalesced with a running analysis");
                }
                Vec::new()
            }
            Ok(Inbound::Ping { client_t }) => vec![Outbound::Pong {
                client_t,
                t: self.now(),
            }],
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

/// Background thread calling [`Session::tick`] every `cadence_ms`.
pub struct Ticker {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Ticker {
    /// `None` when the session's cadence is 0.
    pub fn spawn(session: Arc<Session>) -> Option<Self> {
        let cadence = session.config().cadence_ms;
        if cadence <= 0.0 {
            return None;
        }
        let period = Duration::from_secs_f64(cadence / 1000.0);
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::Builder::new()
            .name("pulsetrack-ticker".into())
            .spawn(move || {
                let mut next = Instant::now() + period;
                while !flag.load(Ordering::Acquire) {
                    let now = Instant::now();
                    if now >= next {
                        session.tick(None);
                        next += period;
                        if next < now {
                            next = now + period;
                        }
                    } else {
                        thread::sleep((next - now).min(Duration::from_millis(20)));
                    }
                }
            })
            .expect("spawn ticker");
        Some(Self {
            stop,
            handle: Some(handle),
        })
    }
}

impl Drop for Ticker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
