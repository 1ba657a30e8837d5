//! TCP acceleration server: accepts one client session at a time, prepares
//! the uploaded remote part on a background thread, then serves calls.

use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use baar_core::interp::Clock;
use baar_core::offload::RemotePart;
use baar_core::proto::{hello_version, CallRequest, Direction, Kind, Message, ProtoError, Session, PROTOCOL_VERSION};
use baar_core::server::{optimize, CallFault, ExecutablePart};
use log::{info, warn};

use crate::exec::{MonotonicClock, PoolRunner};
use crate::transport::{read_message, write_message, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    pub workers: usize,
    /// Lane-group width for independent innermost loops; 1 disables it.
    pub vector_width: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { workers: crate::exec::host_cores(), vector_width: 1 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("protocol violation: {0}")]
    Protocol(#[from] ProtoError),
    #[error("could not start the worker pool: {0}")]
    Pool(String),
}

impl From<io::Error> for SessionError {
    fn from(e: io::Error) -> Self {
        SessionError::Transport(e.into())
    }
}

/// How a session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEnd {
    /// The remote part was rejected; the text is the REJECT payload.
    Rejected(String),
    /// The client disconnected after this many calls, of which `faults`
    /// failed.
    Finished { calls: u64, faults: u64 },
}

pub struct Server {
    listener: TcpListener,
    config: ServerConfig,
    runner: Arc<PoolRunner>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> Result<Self, SessionError> {
        let listener = TcpListener::bind(addr)?;
        let runner = PoolRunner::new(config.workers).map_err(|e| SessionError::Pool(e.to_string()))?;
        Ok(Server { listener, config, runner: Arc::new(runner) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves sessions one after another until accepting fails.
    pub fn run(&self) -> io::Result<()> {
        info!("listening on {} with {} workers, vector width {}", self.local_addr()?, self.config.workers, self.config.vector_width);
        loop {
            let (stream, peer) = self.listener.accept()?;
            info!("session from {peer}");
            match self.serve_connection(stream) {
                Ok(end) => info!("session from {peer} ended: {end:?}"),
                Err(e) => warn!("session from {peer} aborted: {e}"),
            }
        }
    }

    /// Runs the server on a detached thread and returns its address.
    pub fn spawn(self) -> io::Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::Builder::new().name("baar-server".into()).spawn(move || {
            if let Err(e) = self.run() {
                warn!("server stopped: {e}");
            }
        })?;
        Ok(addr)
    }

    pub fn serve_connection(&self, stream: TcpStream) -> Result<SessionEnd, SessionError> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut conn = Conn { writer: stream, session: Session::new() };

        let hello = conn.receive(&mut reader)?;
        match hello_version(&hello) {
            Ok(PROTOCOL_VERSION) => {}
            Ok(v) => return conn.reject(format!("protocol version {v} is not supported (server speaks {PROTOCOL_VERSION})")),
            Err(e) => return conn.reject(e.to_string()),
        }

        let upload = conn.receive(&mut reader)?;
        let part = match RemotePart::from_text(&upload.payload) {
            Ok(p) => p,
            Err(e) => return conn.reject(format!("unreadable remote part: {e}")),
        };
        info!(
            "remote part received: {} bytes, {} exported, {} helpers, alias {}",
            upload.payload.len(),
            part.functions.len(),
            part.helpers.len(),
            part.alias
        );
        let (workers, width) = (self.config.workers, self.config.vector_width);
        let prepared = thread::Builder::new()
            .name("baar-optimize".into())
            .spawn(move || optimize(&part, workers, width))?
            .join()
            .map_err(|_| SessionError::Pool("optimizer thread panicked".into()))?;
        let ep = match prepared {
            Ok(ep) => ep,
            Err(e) => return conn.reject(e.to_string()),
        };
        let summary: Vec<String> = ep.schedules.iter().map(|s| s.to_string()).collect();
        for s in &summary {
            info!("schedule {s}");
        }
        conn.send(&Message::new(Kind::Ready, summary.join("\n")))?;

        let clock = MonotonicClock::default();
        let (mut calls, mut faults) = (0, 0);
        loop {
            let m = match conn.receive(&mut reader) {
                Ok(m) => m,
                Err(SessionError::Transport(TransportError::Closed)) => return Ok(SessionEnd::Finished { calls, faults }),
                Err(e) => return Err(e),
            };
            calls += 1;
            let reply = self.execute(&ep, &m, &clock);
            if reply.kind == Kind::Fault {
                faults += 1;
            }
            conn.send(&reply)?;
        }
    }

    fn execute(&self, ep: &ExecutablePart, m: &Message, clock: &MonotonicClock) -> Message {
        let start = clock.now_ns();
        let outcome = CallRequest::from_message(m)
            .map_err(|e| CallFault(e.to_string()))
            .and_then(|req| ep.execute_call(&req, self.runner.as_ref(), Some(clock)).map(|r| (req.function, r)));
        let wall = clock.now_ns() - start;
        match outcome {
            Ok((function, resp)) => {
                info!("call {function}: raw {} ns, wall {wall} ns", resp.raw_ns);
                resp.to_message()
            }
            Err(fault) => {
                warn!("call failed after {wall} ns: {fault}");
                Message::new(Kind::Fault, fault.0)
            }
        }
    }
}

/// The write half of a session plus its order checker.
struct Conn {
    writer: TcpStream,
    session: Session,
}

impl Conn {
    fn receive(&mut self, reader: &mut BufReader<TcpStream>) -> Result<Message, SessionError> {
        let m = read_message(reader)?;
        self.session.observe(Direction::ToServer, m.kind)?;
        Ok(m)
    }

    fn send(&mut self, m: &Message) -> Result<(), SessionError> {
        self.session.observe(Direction::ToClient, m.kind)?;
        write_message(&mut self.writer, m)?;
        Ok(())
    }

    fn reject(&mut self, reason: String) -> Result<SessionEnd, SessionError> {
        warn!("rejecting session: {reason}");
        self.send(&Message::new(Kind::Reject, reason.clone()))?;
        Ok(SessionEnd::Rejected(reason))
    }
}
