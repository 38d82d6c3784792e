//! Line protocol over a reader/writer pair (standard input and output in the CLI).

use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::protocol::{Outbound, StatusCode, StatusRecord};
use crate::session::{Session, Ticker};

/// How long to wait for an in-flight analysis once input ends.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(60);

/// Runs a session until `input` ends, then waits for the last analysis and
/// returns the writer.
pub fn run_lines<R, W>(session: Arc<Session>, input: R, output: W) -> io::Result<W>
where
    R: BufRead,
    W: Write + Send + 'static,
{
    let (tx, rx) = mpsc::channel::<Outbound>();
    session.add_subscriber(tx.clone());
    let writer = thread::Builder::new().name("pulsetrack-writer".into()).spawn(move || {
        let mut output = output;
        for msg in rx {
            writeln!(output, "{}", msg.to_line())?;
            output.flush()?;
        }
        Ok::<W, io::Error>(output)
    })?;

    let _ = tx.send(Outbound::Status(StatusRecord::new(StatusCode::Ready)));
    let ticker = Ticker::spawn(Arc::clone(&session));
    let mut read_result = Ok(());
    for line in input.lines() {
        let line = match line {
            Ok(line) => line,
            Err(e) => {
                read_result = Err(e);
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        for reply in session.handle_line(&line) {
            let _ = tx.send(reply);
        }
    }

    drop(ticker);
    if !session.wait_idle(DRAIN_TIMEOUT) {
        log::warn!("analysis still running at shutdown");
    }
    session.clear_subscribers();
    drop(tx);
    let output = writer
        .join()
        .map_err(|_| io::Error::other("writer thread panicked"))??;
    read_result.map(|_| output)
}
