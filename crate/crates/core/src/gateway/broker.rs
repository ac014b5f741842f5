//! Threaded MQTT-subset broker with exact-topic routing.
//!
//! Every connection gets a reader thread and a writer thread joined by a
//! bounded queue of encoded frames. A PUBLISH is fanned out with `try_send`,
//! so a subscriber whose queue is full loses that message instead of
//! stalling the publisher or growing memory.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{bounded, Sender, TrySendError};
use log::{debug, info, warn};

use super::mqtt::{encode_packet, read_packet, MqttError, Packet};

#[derive(Debug, Clone, Copy)]
pub struct BrokerConfig {
    /// Per-subscriber outbound queue depth, in messages.
    pub queue_depth: usize,
    pub max_packet_bytes: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            queue_depth: 1000,
            max_packet_bytes: 1 << 20,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    connections: AtomicU64,
    published: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
    protocol_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BrokerStats {
    pub connections: u64,
    pub published: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub protocol_errors: u64,
}

type Frame = Arc<Vec<u8>>;

struct Subscriber {
    conn_id: u64,
    queue: Sender<Frame>,
}

struct Shared {
    config: BrokerConfig,
    topics: Mutex<HashMap<String, Vec<Subscriber>>>,
    streams: Mutex<HashMap<u64, TcpStream>>,
    counters: Counters,
    stop: AtomicBool,
    next_conn: AtomicU64,
}

impl Shared {
    fn route(&self, topic: &str, frame: Frame) {
        self.counters.published.fetch_add(1, Ordering::Relaxed);
        let mut topics = self.topics.lock().expect("topic table poisoned");
        let Some(subs) = topics.get_mut(topic) else {
            return;
        };
        subs.retain(|s| match s.queue.try_send(Arc::clone(&frame)) {
            Ok(()) => {
                self.counters.delivered.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(TrySendError::Full(_)) => {
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
    }

    fn forget(&self, conn_id: u64) {
        let mut topics = self.topics.lock().expect("topic table poisoned");
        for subs in topics.values_mut() {
            subs.retain(|s| s.conn_id != conn_id);
        }
        topics.retain(|_, subs| !subs.is_empty());
        self.streams.lock().expect("stream table poisoned").remove(&conn_id);
    }
}

/// Running broker; dropping the handle does not stop it, call
/// [`BrokerHandle::shutdown`].
pub struct BrokerHandle {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> BrokerStats {
        let c = &self.shared.counters;
        BrokerStats {
            connections: c.connections.load(Ordering::Relaxed),
            published: c.published.load(Ordering::Relaxed),
            delivered: c.delivered.load(Ordering::Relaxed),
            dropped: c.dropped.load(Ordering::Relaxed),
            protocol_errors: c.protocol_errors.load(Ordering::Relaxed),
        }
    }

    pub fn shutdown(mut self) -> BrokerStats {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for (_, s) in self.shared.streams.lock().expect("stream table poisoned").drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        self.stats()
    }
}

pub fn broker_serve<A: ToSocketAddrs>(addr: A, config: BrokerConfig) -> io::Result<BrokerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local_addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        config,
        topics: Mutex::new(HashMap::new()),
        streams: Mutex::new(HashMap::new()),
        counters: Counters::default(),
        stop: AtomicBool::new(false),
        next_conn: AtomicU64::new(1),
    });
    info!("broker listening on {local_addr}");
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || accept_loop(listener, shared))?
    };
    Ok(BrokerHandle {
        local_addr,
        shared,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn_id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
                shared.counters.connections.fetch_add(1, Ordering::Relaxed);
                if let Err(e) = spawn_connection(conn_id, stream, Arc::clone(&shared)) {
                    warn!("connection {conn_id} from {peer} failed to start: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn spawn_connection(conn_id: u64, stream: TcpStream, shared: Arc<Shared>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    shared
        .streams
        .lock()
        .expect("stream table poisoned")
        .insert(conn_id, stream.try_clone()?);
    let (tx, rx) = bounded::<Frame>(shared.config.queue_depth.max(1));
    let write_half = stream.try_clone()?;
    thread::Builder::new()
        .name(format!("broker-w{conn_id}"))
        .spawn(move || {
            let mut w = BufWriter::new(write_half);
            while let Ok(frame) = rx.recv() {
                if w.write_all(&frame).is_err() {
                    break;
                }
                if rx.is_empty() && w.flush().is_err() {
                    break;
                }
            }
            let _ = w.flush();
        })?;
    thread::Builder::new()
        .name(format!("broker-r{conn_id}"))
        .spawn(move || {
            if let Err(e) = serve_connection(conn_id, &stream, &tx, &shared) {
                shared.counters.protocol_errors.fetch_add(1, Ordering::Relaxed);
                debug!("connection {conn_id} closed on error: {e}");
            }
            shared.forget(conn_id);
            drop(tx);
            let _ = stream.shutdown(Shutdown::Both);
        })?;
    Ok(())
}

fn serve_connection(
    conn_id: u64,
    stream: &TcpStream,
    tx: &Sender<Frame>,
    shared: &Shared,
) -> Result<(), MqttError> {
    let mut reader = BufReader::new(stream);
    let max = shared.config.max_packet_bytes;
    let reply = |p: Packet| {
        tx.send(Arc::new(encode_packet(&p)))
            .map_err(|_| MqttError::Io(io::ErrorKind::BrokenPipe.into()))
    };
    match read_packet(&mut reader, max)? {
        Some(Packet::Connect { client_id, .. }) => {
            debug!("connection {conn_id} identified as {client_id:?}");
            reply(Packet::ConnAck {
                session_present: false,
                return_code: 0,
            })?;
        }
        Some(other) => {
            return Err(MqttError::MalformedFrame(format!(
                "expected CONNECT, got {}",
                other.type_name()
            )))
        }
        None => return Ok(()),
    }
    while let Some(packet) = read_packet(&mut reader, max)? {
        match packet {
            Packet::Publish { ref topic, .. } => {
                shared.route(topic, Arc::new(encode_packet(&packet)));
            }
            Packet::Subscribe { packet_id, topics } => {
                // SUBACK is queued before registration so it precedes any
                // routed message on this connection.
                reply(Packet::SubAck {
                    packet_id,
                    return_codes: vec![0; topics.len()],
                })?;
                let mut table = shared.topics.lock().expect("topic table poisoned");
                for t in topics {
                    let subs = table.entry(t).or_default();
                    if !subs.iter().any(|s| s.conn_id == conn_id) {
                        subs.push(Subscriber {
                            conn_id,
                            queue: tx.clone(),
                        });
                    }
                }
            }
            Packet::PingReq => reply(Packet::PingResp)?,
            Packet::Disconnect => return Ok(()),
            other => {
                return Err(MqttError::MalformedFrame(format!(
                    "unexpected {} from client",
                    other.type_name()
                )))
            }
        }
    }
    Ok(())
}
