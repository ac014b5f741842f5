//! One client package: sensor, subscriber, producer and consumer running as
//! threads around a shared broker and file drop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, RecvTimeoutError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::aggregate::{sample_topic, Aggregator, AggregatorConfig};
use super::batch::csv_line;
use super::client::MqttClient;
use super::filedrop::FileDrop;
use super::mqtt::MqttError;
use super::producer::{Backoff, Consumer, ConsumerEvent, DropTransport, Producer, Sealing, Unsealing};
use super::session::{establish_session, HandshakeError};
use crate::enclave::ReportSet;
use crate::secure::{client_id_hash, Direction, Measurement, Opener, RootPublicKey, Sealer};
use crate::sensor::{stream, SensorConfig, SensorError, SinkClosed};

/// Reference range for per-client outbound bytes per second.
pub const REFERENCE_WIRE_RATE: (f64, f64) = (230.0, 690.0);

pub enum PackageSecurity {
    Secure {
        expected_measurement: Measurement,
        root: RootPublicKey,
        handshake_timeout: Duration,
    },
    Plain,
}

pub struct PackageConfig {
    pub broker_addr: String,
    pub drop_root: PathBuf,
    pub sensor: SensorConfig,
    pub aggregator: AggregatorConfig,
    pub security: PackageSecurity,
    pub backoff: Backoff,
    pub queue_capacity: usize,
    pub inbox_poll: Duration,
    /// How long to keep collecting results once sensing has ended.
    pub drain_grace: Duration,
    /// Stop sensing after this long even if the sensor has more phases.
    pub duration: Option<Duration>,
    /// JSON-lines record of sent payloads and received report sets.
    pub journal: Option<PathBuf>,
    /// Keep consumed inbox files under the drop's `archive/`.
    pub archive: bool,
}

impl PackageConfig {
    pub fn new(broker_addr: impl Into<String>, drop_root: impl Into<PathBuf>, sensor: SensorConfig) -> Self {
        Self {
            broker_addr: broker_addr.into(),
            drop_root: drop_root.into(),
            sensor,
            aggregator: AggregatorConfig::default(),
            security: PackageSecurity::Plain,
            backoff: Backoff::default(),
            queue_capacity: 1024,
            inbox_poll: Duration::from_millis(100),
            drain_grace: Duration::from_secs(15),
            duration: None,
            journal: None,
            archive: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEntry {
    Sent { at_ms: u64, sequence: u64, payload_hex: String },
    Received { at_ms: u64, set: ReportSet },
    Quarantined { at_ms: u64, sequence: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PackageSummary {
    pub published: u64,
    pub malformed: u64,
    pub batches_sent: u64,
    pub wire_bytes: u64,
    pub sensing_s: f64,
    pub wire_bytes_per_s: f64,
    pub sets_received: u64,
    pub reports_received: u64,
    pub quarantined: u64,
}

impl PackageSummary {
    pub fn wire_rate_in_reference(&self) -> bool {
        (REFERENCE_WIRE_RATE.0..=REFERENCE_WIRE_RATE.1).contains(&self.wire_bytes_per_s)
    }
}

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("sensor: {0}")]
    Sensor(#[from] SensorError),
    #[error("broker: {0}")]
    Broker(#[from] MqttError),
    #[error("handshake: {0}")]
    Handshake(#[from] HandshakeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

type Journal = Option<Arc<Mutex<BufWriter<File>>>>;

fn record(journal: &Journal, entry: &JournalEntry) {
    if let Some(j) = journal {
        let mut j = j.lock().expect("journal lock");
        let line = serde_json::to_string(entry).expect("journal entries serialize");
        if writeln!(j, "{line}").and_then(|()| j.flush()).is_err() {
            log::warn!("client: journal write failed");
        }
    }
}

/// Runs the package until the sensor is exhausted, `duration` passes or
/// `stop` is raised, then drains outstanding results for up to
/// `drain_grace`.
pub fn run_client_package(cfg: PackageConfig, stop: &AtomicBool) -> Result<PackageSummary, PackageError> {
    cfg.sensor.validate()?;
    let client_id = cfg.sensor.client_id.clone();
    let file_drop = FileDrop::open(&cfg.drop_root)?.with_archive(cfg.archive);
    let journal: Journal = match &cfg.journal {
        Some(p) => Some(Arc::new(Mutex::new(BufWriter::new(File::create(p)?)))),
        None => None,
    };

    let (sealing, unsealing) = match &cfg.security {
        PackageSecurity::Secure {
            expected_measurement,
            root,
            handshake_timeout,
        } => {
            let key = establish_session(&file_drop, &client_id, expected_measurement, root, *handshake_timeout, Some(stop))?;
            log::info!("client: session {} established", hex::encode(key.key_id));
            let mut opener = Opener::new(Direction::Downlink);
            opener.insert_key(key.clone());
            (
                Sealing::Secure(Sealer::new(key, client_id_hash(&client_id), Direction::Uplink)),
                Unsealing::Secure(opener),
            )
        }
        PackageSecurity::Plain => (Sealing::plain(), Unsealing::Plain),
    };

    let topic = sample_topic(&client_id);
    let subscription = MqttClient::connect(&cfg.broker_addr, &format!("{client_id}/sub"))?.subscribe(&[&topic])?;
    let publisher = MqttClient::connect(&cfg.broker_addr, &format!("{client_id}/sensor"))?;

    let started = Instant::now();
    let sensing_done = AtomicBool::new(false);
    let subscriber_done = AtomicBool::new(false);
    let batches_sent = AtomicU64::new(0);
    let batches_queued = AtomicU64::new(0);
    let sets_received = AtomicU64::new(0);
    let (tx, rx) = bounded(cfg.queue_capacity);

    let (cfg, client_id, topic, sub, journal, file_drop) = (&cfg, &client_id, &topic, &subscription, &journal, &file_drop);
    let (sensing_done, subscriber_done, batches_sent, batches_queued, sets_received) =
        (&sensing_done, &subscriber_done, &batches_sent, &batches_queued, &sets_received);
    let mut summary = thread::scope(|s| -> Result<PackageSummary, PackageError> {
        // Sensor: publish each sample as a CSV line on the client's topic.
        let sensor = s.spawn(move || {
            let mut publisher = publisher;
            let sensor_stop = AtomicBool::new(false);
            let result = thread::scope(|inner| {
                inner.spawn(|| {
                    while !sensor_stop.load(Ordering::Relaxed) {
                        let expired = cfg.duration.is_some_and(|d| started.elapsed() >= d);
                        if stop.load(Ordering::Relaxed) || expired {
                            sensor_stop.store(true, Ordering::Relaxed);
                        }
                        thread::sleep(Duration::from_millis(10));
                    }
                });
                let mut sink = |sample: crate::hrv::RRSample| {
                    let line = csv_line(sample.r_timestamp_ms, sample.rr_interval_ms);
                    publisher.publish(topic, line.trim_end().as_bytes()).map_err(|_| SinkClosed)
                };
                let summary = stream(&cfg.sensor, &mut sink, Some(&sensor_stop));
                sensor_stop.store(true, Ordering::Relaxed);
                summary
            });
            let sensing_s = started.elapsed().as_secs_f64();
            sensing_done.store(true, Ordering::Relaxed);
            let _ = publisher.disconnect();
            (result, sensing_s)
        });

        // Subscriber: batch samples by age and size.
        let subscriber = s.spawn(move || {
            let queue = move |b| {
                if tx.send(b).is_ok() {
                    batches_queued.fetch_add(1, Ordering::Relaxed);
                }
            };
            let mut agg = Aggregator::new(cfg.aggregator);
            let mut quiet_since: Option<Instant> = None;
            loop {
                let now = started.elapsed().as_millis() as u64;
                match sub.messages().recv_timeout(Duration::from_millis(50)) {
                    Ok(m) => {
                        quiet_since = None;
                        if let Some(b) = agg.push(&m.topic, &m.payload, now) {
                            queue(b);
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                agg.poll(started.elapsed().as_millis() as u64).into_iter().for_each(&queue);
                if sensing_done.load(Ordering::Relaxed) {
                    let q = *quiet_since.get_or_insert_with(Instant::now);
                    if q.elapsed() >= Duration::from_millis(300) {
                        break;
                    }
                }
            }
            agg.flush_all(started.elapsed().as_millis() as u64).into_iter().for_each(&queue);
            drop(queue);
            subscriber_done.store(true, Ordering::Relaxed);
            agg.counts(client_id)
        });

        // Producer: seal and deposit.
        let producer = s.spawn(move || {
            let mut producer = Producer::new(sealing, DropTransport::new(file_drop.clone(), client_id), cfg.backoff);
            producer.run(&rx, None, |d| {
                batches_sent.fetch_add(1, Ordering::Relaxed);
                record(
                    journal,
                    &JournalEntry::Sent {
                        at_ms: crate::unix_time_ms(),
                        sequence: d.sequence,
                        payload_hex: hex::encode(d.payload),
                    },
                );
            })
        });

        // Consumer: open results until every batch is answered or the
        // grace period after sensing runs out.
        let consumer = s.spawn(move || {
            let mut consumer = Consumer::new(file_drop.clone(), client_id, unsealing);
            let mut drain_started: Option<Instant> = None;
            loop {
                match consumer.poll() {
                    Ok(events) => {
                        for ev in events {
                            let entry = match ev {
                                ConsumerEvent::Reports(set) => {
                                    sets_received.fetch_add(1, Ordering::Relaxed);
                                    log::debug!(
                                        "client: {} report(s) for batch {}",
                                        set.reports.len(),
                                        set.request_sequence
                                    );
                                    JournalEntry::Received { at_ms: crate::unix_time_ms(), set }
                                }
                                ConsumerEvent::Quarantined { sequence, reason } => JournalEntry::Quarantined {
                                    at_ms: crate::unix_time_ms(),
                                    sequence,
                                    reason,
                                },
                            };
                            record(journal, &entry);
                        }
                    }
                    Err(e) => log::warn!("client: inbox poll failed: {e}"),
                }
                if subscriber_done.load(Ordering::Relaxed) {
                    let d = *drain_started.get_or_insert_with(Instant::now);
                    let answered = sets_received.load(Ordering::Relaxed) + consumer.stats().quarantined
                        >= batches_queued.load(Ordering::Relaxed);
                    if answered || d.elapsed() >= cfg.drain_grace {
                        break;
                    }
                }
                thread::sleep(cfg.inbox_poll);
            }
            consumer.stats()
        });

        let (sensed, sensing_s) = sensor.join().expect("sensor thread");
        let sensed = sensed?;
        let counts = subscriber.join().expect("subscriber thread");
        let produced = producer.join().expect("producer thread");
        let consumed = consumer.join().expect("consumer thread");
        Ok(PackageSummary {
            published: sensed.delivered,
            malformed: counts.malformed,
            batches_sent: produced.batches,
            wire_bytes: produced.wire_bytes,
            sensing_s,
            wire_bytes_per_s: if sensing_s > 0.0 {
                produced.wire_bytes as f64 / sensing_s
            } else {
                0.0
            },
            sets_received: consumed.sets,
            reports_received: consumed.reports,
            quarantined: consumed.quarantined,
        })
    })?;
    subscription.close();
    summary.sensing_s = (summary.sensing_s * 1000.0).round() / 1000.0;
    Ok(summary)
}
