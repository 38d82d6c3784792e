//! Real-time front end for the `pulsetrack` tracker.
//!
//! A [`Session`] buffers incoming notes and analyzes snapshots of them on a
//! worker thread, either on a fixed cadence or on request. Results go to any
//! number of subscribers as protocol records. [`stdio::run_lines`] drives a
//! session from a line stream; [`ws::WsServer`] exposes the same records over
//! a websocket.

pub mod clock;
pub mod protocol;
pub mod session;
pub mod stdio;
pub mod ws;

pub use clock::{Clock, ManualClock, MonotonicClock};
pub use protocol::{parse_inbound, EstimateRecord, Inbound, Outbound, ProtocolError, StatusCode, StatusRecord};
pub use session::{Ack, IngestError, Published, Session, SessionConfig, TickOutcome, Ticker};
