//! Websocket endpoint speaking the same records as the line protocol, one
//! record per text message (or several, newline separated). One session per
//! connection; connections are served one at a time.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::clock::MonotonicClock;
use crate::protocol::{Outbound, StatusCode, StatusRecord};
use crate::session::{Session, SessionConfig};

/// Read timeout; bounds the delay of published estimates and ticks.
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("websocket error: {0}")]
    WebSocket(#[from] Box<tungstenite::Error>),
    #[error("invalid session configuration: {0}")]
    Config(#[from] pulsetrack::TrackerError),
}

pub struct WsServer {
    listener: TcpListener,
    cfg: SessionConfig,
}

impl WsServer {
    pub fn bind(addr: impl ToSocketAddrs, cfg: SessionConfig) -> Result<Self, ServeError> {
        cfg.tracker.validate()?;
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            cfg,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `limit` have been served (forever if `None`).
    /// A failed connection is logged and does not stop the server.
    pub fn serve(&self, limit: Option<usize>) -> Result<(), ServeError> {
        for (served, stream) in (1..).zip(self.listener.incoming()) {
            let stream = stream?;
            let peer = stream.peer_addr().ok();
            log::info!("connection from {peer:?}");
            if let Err(e) = self.handle(stream) {
                log::warn!("connection {peer:?} ended with error: {e}");
            }
            if limit.is_some_and(|n| served >= n) {
                break;
            }
        }
        Ok(())
    }

    fn handle(&self, stream: TcpStream) -> Result<(), ServeError> {
        stream.set_nodelay(true)?;
        let mut ws = tungstenite::accept(stream).map_err(|e| match e {
            tungstenite::HandshakeError::Failure(e) => ServeError::WebSocket(Box::new(e)),
            tungstenite::HandshakeError::Interrupted(_) => {
                ServeError::Io(io::Error::new(io::ErrorKind::WouldBlock, "handshake interrupted"))
            }
        })?;
        ws.get_ref().set_read_timeout(Some(POLL))?;

        let session = Session::new(self.cfg.clone(), Arc::new(MonotonicClock::new()))?;
        let published = session.subscribe();
        send(&mut ws, &Outbound::Status(StatusRecord::new(StatusCode::Ready)))?;

        let cadence = (self.cfg.cadence_ms > 0.0).then(|| Duration::from_secs_f64(self.cfg.cadence_ms / 1000.0));
        let mut next_tick = cadence.map(|c| Instant::now() + c);
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        for reply in session.handle_line(line) {
                            send(&mut ws, &reply)?;
                        }
                    }
                }
                Ok(Message::Binary(_)) => send(
                    &mut ws,
                    &Outbound::Status(
                        StatusRecord::new(StatusCode::ProtocolError).with_message("binary messages are not supported"),
                    ),
                )?,
                Ok(Message::Close(_)) => {}
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
                Err(e) => return Err(Box::new(e).into()),
            }
            while let Ok(msg) = published.try_recv() {
                send(&mut ws, &msg)?;
            }
            if let (Some(c), Some(due)) = (cadence, next_tick) {
                let now = Instant::now();
                if now >= due {
                    session.tick(None);
                    next_tick = Some((due + c).max(now));
                }
            }
        }
        Ok(())
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &Outbound) -> Result<(), ServeError> {
    ws.send(Message::Text(msg.to_line())).map_err(|e| Box::new(e).into())
}
