//! Length-prefixed framing on the boundary channel:
//! `u32 length (big-endian, covers opcode and body) ‖ opcode ‖ body`.

use std::io::{self, Read, Write};

pub const OP_ATTEST: u8 = 0x01;
pub const OP_PROCESS: u8 = 0x02;
pub const OP_SHUTDOWN: u8 = 0x03;
pub const OP_ATTEST_REPLY: u8 = 0x81;
pub const OP_PROCESS_REPLY: u8 = 0x82;

pub const STATUS_OK: u8 = 0;
pub const STATUS_FAILED: u8 = 1;

/// Upper bound on one frame; larger lengths are treated as corruption.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: u8,
    pub body: Vec<u8>,
}

pub fn encode_frame(opcode: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&((body.len() + 1) as u32).to_be_bytes());
    out.push(opcode);
    out.extend_from_slice(body);
    out
}

pub fn write_frame<W: Write>(w: &mut W, opcode: u8, body: &[u8]) -> io::Result<()> {
    w.write_all(&((body.len() + 1) as u32).to_be_bytes())?;
    w.write_all(&[opcode])?;
    w.write_all(body)
}

/// Reads one frame. `Ok(None)` means the peer closed the channel cleanly
/// between frames.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let body = buf.split_off(1);
    Ok(Some(Frame { opcode: buf[0], body }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_covers_opcode() {
        assert_eq!(encode_frame(OP_SHUTDOWN, &[]), vec![0, 0, 0, 1, 0x03]);
        assert_eq!(encode_frame(OP_PROCESS, b"ab"), vec![0, 0, 0, 3, 0x02, b'a', b'b']);
    }

    #[test]
    fn read_back_sequence() {
        let mut bytes = encode_frame(OP_ATTEST, &[7; 48]);
        bytes.extend(encode_frame(OP_SHUTDOWN, &[]));
        let mut r = &bytes[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap().body, vec![7; 48]);
        assert_eq!(read_frame(&mut r).unwrap().unwrap().opcode, OP_SHUTDOWN);
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn truncated_and_oversized_fail() {
        let bytes = encode_frame(OP_PROCESS, b"abcdef");
        assert!(read_frame(&mut &bytes[..6]).is_err());
        assert!(read_frame(&mut &bytes[..2]).is_err());
        assert!(read_frame(&mut &[0u8, 0, 0, 0][..]).is_err());
        assert!(read_frame(&mut &[0xffu8, 0xff, 0xff, 0xff, 1][..]).is_err());
    }
}
