//! Producer and consumer ends of the file-drop link.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};
use thiserror::Error;

use super::batch::BatchRecord;
use super::filedrop::{client_dir_name, DropEntry, FileDrop, FileKind, Side};
use crate::enclave::ReportSet;
use crate::secure::{client_id_hash, EnvelopeError, Opener, SealedEnvelope, Sealer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("channel down: {0}")]
pub struct ChannelDown(pub String);

/// Where sealed batches are deposited. Implemented by the file drop and by
/// test doubles that inject faults.
pub trait Transport: Send {
    fn deposit(&mut self, sequence: u64, kind: FileKind, bytes: &[u8]) -> Result<(), ChannelDown>;
}

pub struct DropTransport {
    drop: FileDrop,
    client_dir: String,
}

impl DropTransport {
    pub fn new(drop: FileDrop, client_id: &str) -> Self {
        Self {
            drop,
            client_dir: client_dir_name(&client_id_hash(client_id)),
        }
    }
}

impl Transport for DropTransport {
    fn deposit(&mut self, sequence: u64, kind: FileKind, bytes: &[u8]) -> Result<(), ChannelDown> {
        self.drop
            .deposit(Side::Outbox, &self.client_dir, sequence, kind, bytes)
            .map(|_| ())
            .map_err(|e| ChannelDown(e.to_string()))
    }
}

/// Exponential retry delay: `base · 2^attempt`, at most `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }
}

pub enum Sealing {
    Secure(Sealer),
    Plain { last_sequence: u64 },
}

impl Sealing {
    pub fn plain() -> Self {
        Sealing::Plain { last_sequence: 0 }
    }

    fn kind(&self) -> FileKind {
        match self {
            Sealing::Secure(_) => FileKind::Envelope,
            Sealing::Plain { .. } => FileKind::Plain,
        }
    }

    fn wrap(&mut self, payload: &[u8]) -> Result<(u64, Vec<u8>), EnvelopeError> {
        match self {
            Sealing::Secure(s) => {
                let env = s.seal(payload)?;
                Ok((env.sequence, env.to_bytes()))
            }
            Sealing::Plain { last_sequence } => {
                *last_sequence = last_sequence.checked_add(1).ok_or(EnvelopeError::SequenceExhausted)?;
                Ok((*last_sequence, payload.to_vec()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProducerStats {
    pub batches: u64,
    pub wire_bytes: u64,
    pub retries: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProduceError {
    #[error(transparent)]
    Seal(#[from] EnvelopeError),
    #[error("stopped while the channel was down")]
    Stopped,
}

/// A deposited batch, as reported to observers.
#[derive(Debug, Clone, Copy)]
pub struct Deposited<'a> {
    pub sequence: u64,
    pub payload: &'a [u8],
    pub wire_bytes: usize,
}

pub struct Producer<T: Transport> {
    sealing: Sealing,
    transport: T,
    backoff: Backoff,
    stats: ProducerStats,
}

fn stopped(stop: Option<&AtomicBool>) -> bool {
    stop.is_some_and(|s| s.load(Ordering::Relaxed))
}

/// Sleeps up to `d`, returning early (with `false`) if `stop` is raised.
fn interruptible_sleep(d: Duration, stop: Option<&AtomicBool>) -> bool {
    let end = Instant::now() + d;
    loop {
        if stopped(stop) {
            return false;
        }
        let now = Instant::now();
        if now >= end {
            return true;
        }
        std::thread::sleep((end - now).min(Duration::from_millis(20)));
    }
}

impl<T: Transport> Producer<T> {
    pub fn new(sealing: Sealing, transport: T, backoff: Backoff) -> Self {
        Self {
            sealing,
            transport,
            backoff,
            stats: ProducerStats::default(),
        }
    }

    pub fn stats(&self) -> ProducerStats {
        self.stats
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Seals `record` once and deposits it, retrying with backoff while the
    /// channel is down. Returns the sequence used.
    pub fn produce(&mut self, record: &BatchRecord, stop: Option<&AtomicBool>) -> Result<u64, ProduceError> {
        self.produce_observed(record, stop, &mut |_| {})
    }

    fn produce_observed(
        &mut self,
        record: &BatchRecord,
        stop: Option<&AtomicBool>,
        observe: &mut dyn FnMut(Deposited<'_>),
    ) -> Result<u64, ProduceError> {
        let payload = record.encode_payload();
        let (sequence, bytes) = self.sealing.wrap(&payload)?;
        let kind = self.sealing.kind();
        let mut attempt = 0;
        loop {
            match self.transport.deposit(sequence, kind, &bytes) {
                Ok(()) => break,
                Err(e) => {
                    let wait = self.backoff.delay(attempt);
                    log::warn!("producer: {e}; retrying batch {sequence} in {wait:?}");
                    self.stats.retries += 1;
                    attempt = attempt.saturating_add(1);
                    if !interruptible_sleep(wait, stop) {
                        return Err(ProduceError::Stopped);
                    }
                }
            }
        }
        self.stats.batches += 1;
        self.stats.wire_bytes += bytes.len() as u64;
        observe(Deposited {
            sequence,
            payload: &payload,
            wire_bytes: bytes.len(),
        });
        Ok(sequence)
    }

    /// Drains `batches` until the sender hangs up or `stop` is raised.
    pub fn run(
        &mut self,
        batches: &Receiver<BatchRecord>,
        stop: Option<&AtomicBool>,
        mut observe: impl FnMut(Deposited<'_>),
    ) -> ProducerStats {
        loop {
            match batches.recv_timeout(Duration::from_millis(50)) {
                Ok(record) => match self.produce_observed(&record, stop, &mut observe) {
                    Ok(_) => {}
                    Err(ProduceError::Stopped) => break,
                    Err(e) => {
                        log::error!("producer: {e}");
                        break;
                    }
                },
                Err(RecvTimeoutError::Timeout) if stopped(stop) => break,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        self.stats
    }
}

pub enum Unsealing {
    Secure(Opener),
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConsumerEvent {
    Reports(ReportSet),
    Quarantined { sequence: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConsumerStats {
    pub sets: u64,
    pub reports: u64,
    pub quarantined: u64,
}

/// Polls one client's inbox and opens what arrives.
pub struct Consumer {
    drop: FileDrop,
    client_dir: String,
    unsealing: Unsealing,
    stats: ConsumerStats,
}

impl Consumer {
    pub fn new(drop: FileDrop, client_id: &str, unsealing: Unsealing) -> Self {
        Self {
            drop,
            client_dir: client_dir_name(&client_id_hash(client_id)),
            unsealing,
            stats: ConsumerStats::default(),
        }
    }

    pub fn stats(&self) -> ConsumerStats {
        self.stats
    }

    fn open(&mut self, entry: &DropEntry, bytes: &[u8]) -> Result<ReportSet, String> {
        let plain = match (&mut self.unsealing, entry.kind) {
            (Unsealing::Secure(opener), FileKind::Envelope) => {
                let env = SealedEnvelope::from_bytes(bytes).map_err(|e| e.to_string())?;
                opener.open(&env).map_err(|e| e.to_string())?
            }
            (Unsealing::Plain, FileKind::Plain) => bytes.to_vec(),
            _ => return Err("unexpected file kind".into()),
        };
        ReportSet::from_json(&plain).map_err(|e| format!("undecodable report set: {e}"))
    }

    /// Handles every visible inbox file in sequence order.
    pub fn poll(&mut self) -> std::io::Result<Vec<ConsumerEvent>> {
        let mut events = Vec::new();
        for entry in self.drop.list(Side::Inbox, &self.client_dir)? {
            let bytes = std::fs::read(&entry.path)?;
            match self.open(&entry, &bytes) {
                Ok(set) => {
                    self.drop.take(&entry)?;
                    self.stats.sets += 1;
                    self.stats.reports += set.reports.len() as u64;
                    events.push(ConsumerEvent::Reports(set));
                }
                Err(reason) => {
                    log::warn!("consumer: quarantining inbound {}: {reason}", entry.sequence);
                    self.drop.quarantine(&entry)?;
                    self.stats.quarantined += 1;
                    events.push(ConsumerEvent::Quarantined {
                        sequence: entry.sequence,
                        reason,
                    });
                }
            }
        }
        Ok(events)
    }
}
