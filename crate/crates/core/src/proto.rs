//! Wire protocol between the offloading client and the acceleration server.
//!
//! Every message is a frame: a 4-byte big-endian payload length, a 1-byte
//! kind tag, then the UTF-8 payload. A session runs
//! `HELLO, REMOTE_PART -> READY | REJECT`, then `CALL -> RESULT | FAULT`
//! one call at a time.
//!
//! Values travel as text: `i64` in decimal, `f64` as the 16 lowercase hex
//! digits of its bit pattern, arrays as `[extent,extent] e e e ...`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::interp::{Array, Value};
use crate::ir::{ScalarType, ValueType};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 47701;
pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = (1 << 31) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Hello = 1,
    RemotePart = 2,
    Ready = 3,
    Reject = 4,
    Call = 5,
    Result = 6,
    Fault = 7,
}

impl Kind {
    pub const ALL: [Kind; 7] =
        [Kind::Hello, Kind::RemotePart, Kind::Ready, Kind::Reject, Kind::Call, Kind::Result, Kind::Fault];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Hello => "HELLO",
            Kind::RemotePart => "REMOTE_PART",
            Kind::Ready => "READY",
            Kind::Reject => "REJECT",
            Kind::Call => "CALL",
            Kind::Result => "RESULT",
            Kind::Fault => "FAULT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: Kind,
    pub payload: String,
}

impl Message {
    pub fn new(kind: Kind, payload: impl Into<String>) -> Self {
        Message { kind, payload: payload.into() }
    }

    pub fn hello() -> Self {
        Message::new(Kind::Hello, alloc::format!("baar {PROTOCOL_VERSION}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtoError {
    #[error("short frame: need {needed} bytes, have {available}")]
    ShortFrame { needed: usize, available: usize },
    #[error("frame payload of {0} bytes exceeds the limit")]
    Oversize(u64),
    #[error("unknown message kind tag {0}")]
    UnknownKind(u8),
    #[error("payload is not valid UTF-8")]
    BadUtf8,
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("{kind} is not allowed {direction} while {state}")]
    OutOfOrder { kind: Kind, direction: Direction, state: &'static str },
}

fn malformed(msg: impl Into<String>) -> ProtoError {
    ProtoError::Malformed(msg.into())
}

pub fn encode(m: &Message) -> Result<Vec<u8>, ProtoError> {
    let n = m.payload.len();
    if n > MAX_PAYLOAD {
        return Err(ProtoError::Oversize(n as u64));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n);
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.push(m.kind.tag());
    out.extend_from_slice(m.payload.as_bytes());
    Ok(out)
}

/// Parses a frame header into the kind and payload length.
pub fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(Kind, usize), ProtoError> {
    let len = u32::from_be_bytes([h[0], h[1], h[2], h[3]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtoError::Oversize(len as u64));
    }
    let kind = Kind::from_tag(h[4]).ok_or(ProtoError::UnknownKind(h[4]))?;
    Ok((kind, len))
}

pub fn decode_payload(kind: Kind, payload: Vec<u8>) -> Result<Message, ProtoError> {
    let payload = String::from_utf8(payload).map_err(|_| ProtoError::BadUtf8)?;
    Ok(Message { kind, payload })
}

/// Decodes the frame at the start of `bytes`, returning the message and the
/// number of bytes it occupied.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), ProtoError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(ProtoError::ShortFrame { needed: HEADER_LEN, available: bytes.len() })?;
    let (kind, len) = decode_header(header)?;
    let end = HEADER_LEN + len;
    let body = bytes.get(HEADER_LEN..end).ok_or(ProtoError::ShortFrame { needed: end, available: bytes.len() })?;
    Ok((decode_payload(kind, body.to_vec())?, end))
}

pub fn marshal_value(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

fn write_value(out: &mut String, v: &Value) {
    fn extents(out: &mut String, shape: &[usize]) {
        out.push('[');
        for (i, e) in shape.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{e}");
        }
        out.push(']');
    }
    match v {
        Value::I64(x) => {
            let _ = write!(out, "{x}");
        }
        Value::F64(x) => {
            let _ = write!(out, "{:016x}", x.to_bits());
        }
        Value::I64Array(a) => {
            extents(out, &a.shape);
            for x in &a.data {
                let _ = write!(out, " {x}");
            }
        }
        Value::F64Array(a) => {
            extents(out, &a.shape);
            for x in &a.data {
                let _ = write!(out, " {:016x}", x.to_bits());
            }
        }
    }
}

fn parse_i64(s: &str) -> Result<i64, ProtoError> {
    let v: i64 = s.parse().map_err(|_| malformed(alloc::format!("bad i64 literal `{s}`")))?;
    // Only the canonical spelling is accepted, keeping the encoding injective.
    if v.to_string() != s {
        return Err(malformed(alloc::format!("non-canonical i64 literal `{s}`")));
    }
    Ok(v)
}

fn parse_f64(s: &str) -> Result<f64, ProtoError> {
    if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(malformed(alloc::format!("bad f64 literal `{s}`")));
    }
    u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| malformed(alloc::format!("bad f64 literal `{s}`")))
}

fn parse_elems<T>(
    text: &str,
    shape: &[usize],
    parse: fn(&str) -> Result<T, ProtoError>,
) -> Result<Array<T>, ProtoError> {
    let rest = text.strip_prefix('[').ok_or_else(|| malformed("array must start with its extents"))?;
    let (ext, rest) = rest.split_once(']').ok_or_else(|| malformed("unterminated extent list"))?;
    let got: Vec<usize> = if ext.is_empty() {
        Vec::new()
    } else {
        ext.split(',')
            .map(|e| e.parse::<usize>().map_err(|_| malformed(alloc::format!("bad extent `{e}`"))))
            .collect::<Result<_, _>>()?
    };
    if got != shape {
        return Err(malformed(alloc::format!("extents {got:?} do not match declared {shape:?}")));
    }
    let n = shape.iter().product::<usize>();
    let mut data = Vec::with_capacity(n);
    if !rest.is_empty() {
        let elems = rest.strip_prefix(' ').ok_or_else(|| malformed("expected a space after the extents"))?;
        for p in elems.split(' ') {
            data.push(parse(p)?);
        }
    }
    if data.len() != n {
        return Err(malformed(alloc::format!("expected {n} elements, got {}", data.len())));
    }
    Ok(Array { shape: got, data })
}

pub fn unmarshal_value(text: &str, ty: &ValueType) -> Result<Value, ProtoError> {
    match ty {
        ValueType::Scalar(ScalarType::I64) => parse_i64(text).map(Value::I64),
        ValueType::Scalar(ScalarType::F64) => parse_f64(text).map(Value::F64),
        ValueType::Array { elem: ScalarType::I64, shape } => parse_elems(text, shape, parse_i64).map(Value::I64Array),
        ValueType::Array { elem: ScalarType::F64, shape } => parse_elems(text, shape, parse_f64).map(Value::F64Array),
    }
}

/// Parses a type written as by its `Display` impl, e.g. `f64[4][4]`.
pub fn parse_type(text: &str) -> Result<ValueType, ProtoError> {
    let split = text.find('[').unwrap_or(text.len());
    let elem = match &text[..split] {
        "i64" => ScalarType::I64,
        "f64" => ScalarType::F64,
        other => return Err(malformed(alloc::format!("unknown type `{other}`"))),
    };
    let mut rest = &text[split..];
    if rest.is_empty() {
        return Ok(ValueType::Scalar(elem));
    }
    let mut shape = Vec::new();
    while !rest.is_empty() {
        let inner = rest.strip_prefix('[').ok_or_else(|| malformed(alloc::format!("bad type `{text}`")))?;
        let (n, tail) = inner.split_once(']').ok_or_else(|| malformed(alloc::format!("bad type `{text}`")))?;
        shape.push(n.parse().map_err(|_| malformed(alloc::format!("bad extent in `{text}`")))?);
        rest = tail;
    }
    Ok(ValueType::Array { elem, shape })
}

fn write_typed(out: &mut String, v: &Value) {
    let _ = write!(out, "{} ", v.ty());
    write_value(out, v);
    out.push('\n');
}

fn parse_typed(line: &str) -> Result<Value, ProtoError> {
    let (ty, value) = line.split_once(' ').ok_or_else(|| malformed(alloc::format!("expected `<type> <value>`: `{line}`")))?;
    unmarshal_value(value, &parse_type(ty)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRequest {
    pub function: String,
    pub args: Vec<Value>,
}

impl CallRequest {
    pub fn to_message(&self) -> Message {
        let mut p = alloc::format!("{}\n", self.function);
        for a in &self.args {
            write_typed(&mut p, a);
        }
        Message::new(Kind::Call, p)
    }

    pub fn from_message(m: &Message) -> Result<Self, ProtoError> {
        expect_kind(m, Kind::Call)?;
        let mut lines = m.payload.lines();
        let function = lines.next().filter(|l| !l.is_empty()).ok_or_else(|| malformed("missing function name"))?;
        let args = lines.map(parse_typed).collect::<Result<_, _>>()?;
        Ok(CallRequest { function: function.into(), args })
    }
}

/// Reply to a call: the scalar result and the final contents of every array
/// argument, in argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct CallResponse {
    pub result: Option<Value>,
    pub arrays: Vec<Value>,
    /// Execution time measured on the server, excluding transport.
    pub raw_ns: u64,
}

impl CallResponse {
    pub fn to_message(&self) -> Message {
        let mut p = alloc::format!("raw-ns {}\n", self.raw_ns);
        match &self.result {
            Some(v) => write_typed(&mut p, v),
            None => p.push_str("void\n"),
        }
        for a in &self.arrays {
            write_typed(&mut p, a);
        }
        Message::new(Kind::Result, p)
    }

    pub fn from_message(m: &Message) -> Result<Self, ProtoError> {
        expect_kind(m, Kind::Result)?;
        let mut lines = m.payload.lines();
        let raw_ns = lines
            .next()
            .and_then(|l| l.strip_prefix("raw-ns "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| malformed("missing `raw-ns` line"))?;
        let result = match lines.next() {
            Some("void") => None,
            Some(line) => {
                let v = parse_typed(line)?;
                if v.is_array() {
                    return Err(malformed("call result must be a scalar"));
                }
                Some(v)
            }
            None => return Err(malformed("missing result line")),
        };
        let arrays: Vec<Value> = lines.map(parse_typed).collect::<Result<_, _>>()?;
        if arrays.iter().any(|a| !a.is_array()) {
            return Err(malformed("only arrays follow the result"));
        }
        Ok(CallResponse { result, arrays, raw_ns })
    }
}

fn expect_kind(m: &Message, kind: Kind) -> Result<(), ProtoError> {
    if m.kind != kind {
        return Err(malformed(alloc::format!("expected {kind}, got {}", m.kind)));
    }
    Ok(())
}

/// Extracts the protocol version from a HELLO payload.
pub fn hello_version(m: &Message) -> Result<u32, ProtoError> {
    expect_kind(m, Kind::Hello)?;
    m.payload
        .strip_prefix("baar ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| malformed(alloc::format!("bad HELLO payload `{}`", m.payload)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToServer,
    ToClient,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ToServer => "client to server",
            Direction::ToClient => "server to client",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Start,
    Greeted,
    Preparing,
    Idle,
    InCall,
    Closed,
}

impl SessionState {
    fn name(self) -> &'static str {
        match self {
            SessionState::Start => "awaiting HELLO",
            SessionState::Greeted => "awaiting REMOTE_PART",
            SessionState::Preparing => "preparing the remote part",
            SessionState::Idle => "idle",
            SessionState::InCall => "executing a call",
            SessionState::Closed => "closed",
        }
    }
}

/// Tracks the legal message order of one connection, seen from either end.
#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
}

impl Default for Session {
    fn default() -> Self {
        Session { state: SessionState::Start }
    }
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Records a message; out-of-order messages are a protocol fault and
    /// leave the state unchanged.
    pub fn observe(&mut self, direction: Direction, kind: Kind) -> Result<(), ProtoError> {
        use Direction::*;
        use SessionState::*;
        let next = match (self.state, direction, kind) {
            (Start, ToServer, Kind::Hello) => Greeted,
            (Greeted, ToServer, Kind::RemotePart) => Preparing,
            (Greeted | Preparing, ToClient, Kind::Reject) => Closed,
            (Preparing, ToClient, Kind::Ready) => Idle,
            (Idle, ToServer, Kind::Call) => InCall,
            (InCall, ToClient, Kind::Result | Kind::Fault) => Idle,
            (state, _, _) => return Err(ProtoError::OutOfOrder { kind, direction, state: state.name() }),
        };
        self.state = next;
        Ok(())
    }
}
