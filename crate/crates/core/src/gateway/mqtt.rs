//! MQTT 3.1.1 packet codec, restricted to the subset the gateway speaks:
//! QoS 0 only, no retained messages, no will, no credentials, no wildcard
//! topic filters.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const PROTOCOL_LEVEL: u8 = 4;
/// Largest value representable by the four-byte remaining-length varint.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

#[derive(Debug, Error)]
pub enum MqttError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed<T>(why: impl Into<String>) -> Result<T, MqttError> {
    Err(MqttError::MalformedFrame(why.into()))
}

fn unsupported<T>(why: impl Into<String>) -> Result<T, MqttError> {
    Err(MqttError::UnsupportedFeature(why.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect {
        client_id: String,
        keep_alive: u16,
        clean_session: bool,
    },
    ConnAck {
        session_present: bool,
        return_code: u8,
    },
    Publish {
        topic: String,
        payload: Vec<u8>,
    },
    Subscribe {
        packet_id: u16,
        topics: Vec<String>,
    },
    SubAck {
        packet_id: u16,
        return_codes: Vec<u8>,
    },
    PingReq,
    PingResp,
    Disconnect,
}

impl Packet {
    pub fn type_name(&self) -> &'static str {
        match self {
            Packet::Connect { .. } => "CONNECT",
            Packet::ConnAck { .. } => "CONNACK",
            Packet::Publish { .. } => "PUBLISH",
            Packet::Subscribe { .. } => "SUBSCRIBE",
            Packet::SubAck { .. } => "SUBACK",
            Packet::PingReq => "PINGREQ",
            Packet::PingResp => "PINGRESP",
            Packet::Disconnect => "DISCONNECT",
        }
    }
}

/// Appends the remaining-length varint for `len`.
pub fn encode_remaining_length(mut len: usize, out: &mut Vec<u8>) {
    assert!(len <= MAX_REMAINING_LENGTH, "remaining length {len} too large");
    loop {
        let mut byte = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if len == 0 {
            break;
        }
    }
}

/// Decodes a remaining-length varint; returns `(value, bytes consumed)` or
/// `None` when more input is needed.
fn decode_remaining_length(buf: &[u8]) -> Result<Option<(usize, usize)>, MqttError> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, byte) in buf.iter().enumerate() {
        if i == 4 {
            return malformed("remaining length longer than 4 bytes");
        }
        value += usize::from(byte & 0x7f) * multiplier;
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if buf.len() >= 4 {
        return malformed("remaining length longer than 4 bytes");
    }
    Ok(None)
}

fn put_str(s: &str, out: &mut Vec<u8>) {
    let bytes = s.as_bytes();
    assert!(bytes.len() <= usize::from(u16::MAX), "string too long for MQTT");
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn has_wildcard(topic: &str) -> bool {
    topic.contains(['+', '#'])
}

pub fn encode_packet(packet: &Packet) -> Vec<u8> {
    let mut body = Vec::new();
    let header: u8 = match packet {
        Packet::Connect {
            client_id,
            keep_alive,
            clean_session,
        } => {
            put_str("MQTT", &mut body);
            body.push(PROTOCOL_LEVEL);
            body.push(if *clean_session { 0x02 } else { 0x00 });
            body.extend_from_slice(&keep_alive.to_be_bytes());
            put_str(client_id, &mut body);
            0x10
        }
        Packet::ConnAck {
            session_present,
            return_code,
        } => {
            body.push(u8::from(*session_present));
            body.push(*return_code);
            0x20
        }
        Packet::Publish { topic, payload } => {
            put_str(topic, &mut body);
            body.extend_from_slice(payload);
            0x30
        }
        Packet::Subscribe { packet_id, topics } => {
            body.extend_from_slice(&packet_id.to_be_bytes());
            for t in topics {
                put_str(t, &mut body);
                body.push(0);
            }
            0x82
        }
        Packet::SubAck {
            packet_id,
            return_codes,
        } => {
            body.extend_from_slice(&packet_id.to_be_bytes());
            body.extend_from_slice(return_codes);
            0x90
        }
        Packet::PingReq => 0xC0,
        Packet::PingResp => 0xD0,
        Packet::Disconnect => 0xE0,
    };
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(header);
    encode_remaining_length(body.len(), &mut out);
    out.extend_from_slice(&body);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MqttError> {
        if self.buf.len() - self.pos < n {
            return malformed("field runs past end of packet");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MqttError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MqttError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn string(&mut self) -> Result<String, MqttError> {
        let len = usize::from(self.u16()?);
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).or_else(|_| malformed("string is not UTF-8"))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), MqttError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            malformed("trailing bytes in packet")
        }
    }
}

fn expect_flags(header: u8, flags: u8) -> Result<(), MqttError> {
    if header & 0x0f == flags {
        Ok(())
    } else {
        malformed(format!("reserved flags {:#06b} invalid", header & 0x0f))
    }
}

/// Decodes the variable header and payload of a packet whose fixed-header
/// byte is `header`.
fn decode_body(header: u8, body: &[u8]) -> Result<Packet, MqttError> {
    let mut c = Cursor { buf: body, pos: 0 };
    let packet = match header >> 4 {
        1 => {
            expect_flags(header, 0)?;
            if c.string()? != "MQTT" {
                return malformed("protocol name is not MQTT");
            }
            let level = c.u8()?;
            if level != PROTOCOL_LEVEL {
                return unsupported(format!("protocol level {level}"));
            }
            let flags = c.u8()?;
            if flags & 0x01 != 0 {
                return malformed("reserved connect flag set");
            }
            if flags & 0xfc != 0 {
                return unsupported("will, username or password in CONNECT");
            }
            let keep_alive = c.u16()?;
            let client_id = c.string()?;
            Packet::Connect {
                client_id,
                keep_alive,
                clean_session: flags & 0x02 != 0,
            }
        }
        2 => {
            expect_flags(header, 0)?;
            let ack = c.u8()?;
            if ack & 0xfe != 0 {
                return malformed("reserved CONNACK flags set");
            }
            Packet::ConnAck {
                session_present: ack & 1 == 1,
                return_code: c.u8()?,
            }
        }
        3 => {
            let qos = (header >> 1) & 0x03;
            if qos == 3 {
                return malformed("QoS 3");
            }
            if qos > 0 {
                return unsupported(format!("PUBLISH with QoS {qos}"));
            }
            if header & 0x08 != 0 {
                return malformed("DUP set on QoS 0 PUBLISH");
            }
            if header & 0x01 != 0 {
                return unsupported("retained PUBLISH");
            }
            let topic = c.string()?;
            if topic.is_empty() || has_wildcard(&topic) {
                return malformed("PUBLISH topic empty or contains wildcards");
            }
            Packet::Publish {
                topic,
                payload: c.rest().to_vec(),
            }
        }
        8 => {
            expect_flags(header, 0x02)?;
            let packet_id = c.u16()?;
            let mut topics = Vec::new();
            while c.pos < body.len() {
                let filter = c.string()?;
                let qos = c.u8()?;
                if qos & 0xfc != 0 {
                    return malformed("reserved subscription option bits set");
                }
                if qos > 0 {
                    return unsupported(format!("subscription QoS {qos}"));
                }
                if filter.is_empty() {
                    return malformed("empty topic filter");
                }
                if has_wildcard(&filter) {
                    return unsupported("wildcard topic filter");
                }
                topics.push(filter);
            }
            if topics.is_empty() {
                return malformed("SUBSCRIBE without topic filters");
            }
            Packet::Subscribe { packet_id, topics }
        }
        9 => {
            expect_flags(header, 0)?;
            let packet_id = c.u16()?;
            Packet::SubAck {
                packet_id,
                return_codes: c.rest().to_vec(),
            }
        }
        12..=14 => {
            expect_flags(header, 0)?;
            match header >> 4 {
                12 => Packet::PingReq,
                13 => Packet::PingResp,
                _ => Packet::Disconnect,
            }
        }
        4..=7 | 10 | 11 => return unsupported(format!("packet type {}", header >> 4)),
        other => return malformed(format!("packet type {other}")),
    };
    c.finish()?;
    Ok(packet)
}

/// Decodes one complete frame from the front of `buf`, returning the packet
/// and the number of bytes it occupied.
pub fn decode_packet(buf: &[u8]) -> Result<(Packet, usize), MqttError> {
    let Some(&header) = buf.first() else {
        return malformed("empty buffer");
    };
    let Some((len, varint_len)) = decode_remaining_length(&buf[1..])? else {
        return malformed("truncated remaining length");
    };
    let start = 1 + varint_len;
    let end = start + len;
    if buf.len() < end {
        return malformed(format!("truncated frame: need {end} bytes, have {}", buf.len()));
    }
    Ok((decode_body(header, &buf[start..end])?, end))
}

/// Reads one frame from a byte stream. `Ok(None)` is a clean end of stream
/// on a frame boundary.
pub fn read_packet<R: Read>(reader: &mut R, max_len: usize) -> Result<Option<Packet>, MqttError> {
    let mut header = [0u8; 1];
    match reader.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut varint = Vec::with_capacity(4);
    let len = loop {
        let mut b = [0u8; 1];
        reader.read_exact(&mut b).map_err(truncated)?;
        varint.push(b[0]);
        if let Some((len, _)) = decode_remaining_length(&varint)? {
            break len;
        }
    };
    if len > max_len {
        return malformed(format!("frame of {len} bytes exceeds limit {max_len}"));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).map_err(truncated)?;
    decode_body(header[0], &body).map(Some)
}

fn truncated(e: io::Error) -> MqttError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        MqttError::MalformedFrame("stream ended mid-frame".into())
    } else {
        MqttError::Io(e)
    }
}

pub fn write_packet<W: Write>(writer: &mut W, packet: &Packet) -> io::Result<()> {
    writer.write_all(&encode_packet(packet))?;
    writer.flush()
}
