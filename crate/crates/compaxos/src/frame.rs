//! Length-prefixed JSON frames: a 4-byte big-endian payload length, then
//! `{"type", "from", "to", "body"}`.

use std::io::{self, Read, Write};

use compaxos_core::message::{Message, MessageKind, NodeId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_FRAME: u32 = 16 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub body: Message,
}

impl Envelope {
    pub fn new(from: NodeId, to: NodeId, body: Message) -> Self {
        Envelope { kind: body.kind(), from, to, body }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("bad payload: {0}")]
    Json(#[from] serde_json::Error),
    #[error("type {kind:?} does not match body")]
    KindMismatch { kind: MessageKind },
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    let payload = serde_json::to_vec(env)?;
    let len = u32::try_from(payload.len()).ok().filter(|&n| n <= MAX_FRAME).ok_or_else(|| io::Error::other("frame too large"))?;
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(&payload);
    w.write_all(&buf)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Envelope>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    let env: Envelope = serde_json::from_slice(&payload)?;
    if env.kind != env.body.kind() {
        return Err(FrameError::KindMismatch { kind: env.kind });
    }
    Ok(Some(env))
}

#[cfg(test)]
mod tests {
    use super::*;
    use compaxos_core::config::Command;

    fn sample() -> Envelope {
        Envelope::new(NodeId::Client(3), NodeId::Proposer(0), Message::ClientRequest { command: Command::write(3, 0, "k", "v") })
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &sample()).unwrap();
        write_frame(&mut buf, &sample()).unwrap();
        let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&buf[4..4 + len]).unwrap();
        assert_eq!(v["type"], "client_request");
        assert_eq!(v["from"], serde_json::json!({"client": 3}));
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap(), Some(sample()));
        assert_eq!(read_frame(&mut r).unwrap(), Some(sample()));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn rejects_garbage() {
        let mut r: &[u8] = &[0, 0, 0, 3, b'{', b'x', b'}'];
        assert!(matches!(read_frame(&mut r), Err(FrameError::Json(_))));
        let mut r: &[u8] = &[0xff, 0xff, 0xff, 0xff];
        assert!(matches!(read_frame(&mut r), Err(FrameError::TooLarge(_))));
        let mut r: &[u8] = &[0, 0];
        assert!(matches!(read_frame(&mut r), Err(FrameError::Io(_))));
    }

    #[test]
    fn rejects_mismatched_type() {
        let mut env = sample();
        env.kind = MessageKind::Chosen;
        let payload = serde_json::to_vec(&env).unwrap();
        let mut buf = (payload.len() as u32).to_be_bytes().to_vec();
        buf.extend(payload);
        assert!(matches!(read_frame(&mut buf.as_slice()), Err(FrameError::KindMismatch { .. })));
    }
}
