//! Blocking MQTT-subset client used by sensors (publish side) and the
//! gateway subscriber.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;

use crossbeam_channel::{unbounded, Receiver};

use super::mqtt::{encode_packet, read_packet, MqttError, Packet};

const MAX_PACKET: usize = 1 << 20;

pub struct MqttClient {
    stream: TcpStream,
    writer: BufWriter<TcpStream>,
    next_packet_id: u16,
}

/// A message delivered to a subscriber.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
}

impl MqttClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, client_id: &str) -> Result<Self, MqttError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut client = Self {
            writer: BufWriter::new(stream.try_clone()?),
            stream,
            next_packet_id: 1,
        };
        client.send(&Packet::Connect {
            client_id: client_id.to_owned(),
            keep_alive: 0,
            clean_session: true,
        })?;
        match read_packet(&mut BufReader::new(&client.stream), MAX_PACKET)? {
            Some(Packet::ConnAck { return_code: 0, .. }) => Ok(client),
            Some(Packet::ConnAck { return_code, .. }) => Err(MqttError::MalformedFrame(format!(
                "connection refused with code {return_code}"
            ))),
            other => Err(MqttError::MalformedFrame(format!("expected CONNACK, got {other:?}"))),
        }
    }

    fn send(&mut self, packet: &Packet) -> Result<(), MqttError> {
        self.writer.write_all(&encode_packet(packet))?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), MqttError> {
        self.send(&Packet::Publish {
            topic: topic.to_owned(),
            payload: payload.to_vec(),
        })
    }

    pub fn ping(&mut self) -> Result<(), MqttError> {
        self.send(&Packet::PingReq)
    }

    /// Subscribes to `topics` and turns the connection into a message
    /// stream. A reader thread owns the socket from here on; the returned
    /// receiver disconnects when the broker closes the connection.
    pub fn subscribe(mut self, topics: &[&str]) -> Result<Subscription, MqttError> {
        let packet_id = self.next_packet_id;
        self.next_packet_id = self.next_packet_id.wrapping_add(1).max(1);
        self.send(&Packet::Subscribe {
            packet_id,
            topics: topics.iter().map(|t| (*t).to_owned()).collect(),
        })?;
        let mut reader = BufReader::new(self.stream.try_clone()?);
        match read_packet(&mut reader, MAX_PACKET)? {
            Some(Packet::SubAck { packet_id: id, .. }) if id == packet_id => {}
            other => return Err(MqttError::MalformedFrame(format!("expected SUBACK, got {other:?}"))),
        }
        let (tx, rx) = unbounded();
        thread::Builder::new()
            .name("mqtt-sub".into())
            .spawn(move || {
                while let Ok(Some(packet)) = read_packet(&mut reader, MAX_PACKET) {
                    if let Packet::Publish { topic, payload } = packet {
                        if tx.send(Message { topic, payload }).is_err() {
                            break;
                        }
                    }
                }
            })?;
        Ok(Subscription {
            stream: self.stream,
            messages: rx,
        })
    }

    pub fn disconnect(mut self) -> Result<(), MqttError> {
        self.send(&Packet::Disconnect)?;
        let _ = self.stream.shutdown(Shutdown::Both);
        Ok(())
    }
}

pub struct Subscription {
    stream: TcpStream,
    messages: Receiver<Message>,
}

impl Subscription {
    pub fn messages(&self) -> &Receiver<Message> {
        &self.messages
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}
