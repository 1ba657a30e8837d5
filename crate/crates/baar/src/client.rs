//! Client end of the wire protocol.

use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use baar_core::interp::Value;
use baar_core::offload::{RemoteCaller, RemoteError, RemotePart, RemoteReply};
use baar_core::proto::{CallRequest, CallResponse, Direction, Kind, Message, ProtoError, Session};

use crate::transport::{read_message, write_message, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot resolve `{0}`")]
    Resolve(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("protocol violation: {0}")]
    Protocol(#[from] ProtoError),
    #[error("server rejected the remote part: {0}")]
    Rejected(String),
}

impl From<std::io::Error> for ClientError {
    fn from(e: std::io::Error) -> Self {
        ClientError::Transport(e.into())
    }
}

/// One connection to a server. Calls are answered strictly in order.
pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    session: Session,
    /// Set once the connection can no longer be trusted.
    broken: Option<String>,
}

impl Client {
    pub fn connect(addr: &str, connect_timeout: Duration, call_timeout: Duration) -> Result<Self, ClientError> {
        let sock = addr
            .to_socket_addrs()
            .map_err(|_| ClientError::Resolve(addr.into()))?
            .next()
            .ok_or_else(|| ClientError::Resolve(addr.into()))?;
        let stream = TcpStream::connect_timeout(&sock, connect_timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(call_timeout).filter(|d| !d.is_zero()))?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Client { writer: stream, reader, session: Session::new(), broken: None })
    }

    fn send(&mut self, m: &Message) -> Result<(), ClientError> {
        self.session.observe(Direction::ToServer, m.kind)?;
        write_message(&mut self.writer, m)?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Message, ClientError> {
        let m = read_message(&mut self.reader)?;
        self.session.observe(Direction::ToClient, m.kind)?;
        Ok(m)
    }

    /// Greets the server and uploads `part`, blocking until the server
    /// reports READY. Returns the READY payload, a schedule summary.
    pub fn prepare(&mut self, part: &RemotePart) -> Result<String, ClientError> {
        self.send(&Message::hello())?;
        self.send(&Message::new(Kind::RemotePart, part.to_text()))?;
        let reply = self.receive()?;
        match reply.kind {
            Kind::Ready => Ok(reply.payload),
            _ => Err(ClientError::Rejected(reply.payload)),
        }
    }

    fn round_trip(&mut self, req: &CallRequest) -> Result<Result<CallResponse, String>, ClientError> {
        self.send(&req.to_message())?;
        let reply = self.receive()?;
        Ok(match reply.kind {
            Kind::Fault => Err(reply.payload),
            _ => Ok(CallResponse::from_message(&reply)?),
        })
    }
}

impl RemoteCaller for Client {
    fn call(&mut self, function: &str, args: &[Value]) -> Result<RemoteReply, RemoteError> {
        if let Some(why) = &self.broken {
            return Err(RemoteError::Transport(why.clone()));
        }
        let req = CallRequest { function: function.into(), args: args.to_vec() };
        match self.round_trip(&req) {
            Ok(Ok(resp)) => Ok(RemoteReply { result: resp.result, arrays: resp.arrays, raw_ns: resp.raw_ns }),
            Ok(Err(fault)) => Err(RemoteError::Fault(fault)),
            Err(e) => {
                let why = e.to_string();
                self.broken = Some(why.clone());
                Err(RemoteError::Transport(why))
            }
        }
    }
}
