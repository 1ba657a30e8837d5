//! Blocking frame I/O over any byte stream.

use std::io::{self, Read, Write};

use baar_core::proto::{self, Message, ProtoError, HEADER_LEN};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Proto(#[from] ProtoError),
    #[error("connection closed by peer")]
    Closed,
}

/// Reads one frame. A clean end of stream before the header is `Closed`.
pub fn read_message(r: &mut impl Read) -> Result<Message, TransportError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(TransportError::Closed),
            Ok(0) => return Err(ProtoError::ShortFrame { needed: HEADER_LEN, available: got }.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (kind, len) = proto::decode_header(&header)?;
    let mut payload = Vec::new();
    let read = r.take(len as u64).read_to_end(&mut payload)?;
    if read < len {
        return Err(ProtoError::ShortFrame { needed: HEADER_LEN + len, available: HEADER_LEN + read }.into());
    }
    Ok(proto::decode_payload(kind, payload)?)
}

pub fn write_message(w: &mut impl Write, m: &Message) -> Result<(), TransportError> {
    let frame = proto::encode(m)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}
