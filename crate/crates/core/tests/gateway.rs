use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use cardiogrid_core::enclave::{Pipeline, ReportSet};
use cardiogrid_core::engine::{run_engine, share, EngineConfig, PlainProcessor};
use cardiogrid_core::gateway::batch::csv_line;
use cardiogrid_core::gateway::filedrop::client_dir_name;
use cardiogrid_core::gateway::mqtt::{decode_packet, encode_packet, Packet};
use cardiogrid_core::gateway::producer::ChannelDown;
use cardiogrid_core::gateway::{
    broker_serve, run_client_package, sample_topic, Aggregator, AggregatorConfig, Backoff, BatchRecord, BrokerConfig,
    Consumer, ConsumerEvent, DropTransport, FileDrop, FileKind, JournalEntry, MqttClient, PackageConfig, Producer,
    Sealing, Side, Transport, Unsealing,
};
use cardiogrid_core::hrv::HrvConfig;
use cardiogrid_core::secure::{
    client_id_hash, AttestationRoot, Attestor, PendingAttestation, seal, Direction, Opener, SealedEnvelope, Sealer, SessionKey};
use cardiogrid_core::sensor::{ActivityPhase, Pacing, SensorConfig};
use cardiogrid_core::Mode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// A session key from an in-process handshake.
fn test_key(seed: u64) -> SessionKey {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let attestor = Attestor::new(AttestationRoot::generate(&mut rng), [7; 32]);
    let pending = PendingAttestation::new(&mut rng);
    attestor.attest(&pending.request(), &mut rng, 0).unwrap().1
}

fn recv_all(sub: &cardiogrid_core::gateway::client::Subscription, n: usize, within: Duration) -> Vec<(String, Vec<u8>)> {
    let deadline = Instant::now() + within;
    let mut got = Vec::new();
    while got.len() < n {
        let left = deadline.saturating_duration_since(Instant::now());
        match sub.messages().recv_timeout(left) {
            Ok(m) => got.push((m.topic, m.payload)),
            Err(_) => break,
        }
    }
    got
}

#[test]
fn single_flow_is_delivered_in_order() {
    let broker = broker_serve("127.0.0.1:0", BrokerConfig::default()).unwrap();
    let sub = MqttClient::connect(broker.local_addr(), "sub").unwrap().subscribe(&["sensors/c1/rr"]).unwrap();
    let mut publisher = MqttClient::connect(broker.local_addr(), "pub").unwrap();
    for i in 0..100 {
        publisher.publish("sensors/c1/rr", format!("{i}").as_bytes()).unwrap();
    }
    let got = recv_all(&sub, 100, Duration::from_secs(5));
    let expected: Vec<Vec<u8>> = (0..100).map(|i| format!("{i}").into_bytes()).collect();
    assert_eq!(got.into_iter().map(|(_, p)| p).collect::<Vec<_>>(), expected);
    assert_eq!(broker.shutdown().dropped, 0);
}

#[test]
fn routing_is_exact_match() {
    let broker = broker_serve("127.0.0.1:0", BrokerConfig::default()).unwrap();
    let sub = MqttClient::connect(broker.local_addr(), "sub").unwrap().subscribe(&["sensors/a/rr"]).unwrap();
    let mut publisher = MqttClient::connect(broker.local_addr(), "pub").unwrap();
    for _ in 0..20 {
        publisher.publish("sensors/b/rr", b"1000,800").unwrap();
    }
    publisher.ping().unwrap();
    assert!(sub.messages().recv_timeout(Duration::from_millis(500)).is_err());
    broker.shutdown();
}

#[test]
fn protocol_error_closes_only_the_offending_connection() {
    use std::io::Write;
    let broker = broker_serve("127.0.0.1:0", BrokerConfig::default()).unwrap();
    let sub = MqttClient::connect(broker.local_addr(), "sub").unwrap().subscribe(&["t/ok"]).unwrap();
    let mut raw = std::net::TcpStream::connect(broker.local_addr()).unwrap();
    raw.write_all(&[0x10, 0xff, 0xff, 0xff, 0xff, 0x7f]).unwrap();
    thread::sleep(Duration::from_millis(200));
    let mut publisher = MqttClient::connect(broker.local_addr(), "pub").unwrap();
    publisher.publish("t/ok", b"still here").unwrap();
    let got = recv_all(&sub, 1, Duration::from_secs(3));
    assert_eq!(got[0].1, b"still here");
    assert!(broker.shutdown().protocol_errors >= 1);
}

#[test]
fn hundred_ten_publishers_at_one_hertz_lose_nothing() {
    const CLIENTS: usize = 110;
    const ROUNDS: usize = 5;
    let broker = broker_serve("127.0.0.1:0", BrokerConfig { queue_depth: 1000, ..BrokerConfig::default() }).unwrap();
    let topics: Vec<String> = (0..CLIENTS).map(|i| sample_topic(&format!("c{i}"))).collect();
    let refs: Vec<&str> = topics.iter().map(String::as_str).collect();
    let sub = MqttClient::connect(broker.local_addr(), "sub").unwrap().subscribe(&refs).unwrap();
    let addr = broker.local_addr();
    let handles: Vec<_> = topics
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, topic)| {
            thread::spawn(move || {
                let mut c = MqttClient::connect(addr, &format!("p{i}")).unwrap();
                let start = Instant::now();
                for k in 0..ROUNDS {
                    let due = start + Duration::from_millis(1000 * k as u64 + (i as u64 * 7) % 1000);
                    thread::sleep(due.saturating_duration_since(Instant::now()));
                    c.publish(&topic, csv_line(1000 * k as u64, 800).trim_end().as_bytes()).unwrap();
                }
                c.disconnect().unwrap();
            })
        })
        .collect();
    handles.into_iter().for_each(|h| h.join().unwrap());
    let got = recv_all(&sub, CLIENTS * ROUNDS, Duration::from_secs(10));
    assert_eq!(got.len(), CLIENTS * ROUNDS);
    let mut per_topic: BTreeMap<String, Vec<Vec<u8>>> = BTreeMap::new();
    for (t, p) in got {
        per_topic.entry(t).or_default().push(p);
    }
    for payloads in per_topic.values() {
        let expected: Vec<Vec<u8>> = (0..ROUNDS).map(|k| format!("{},800", 1000 * k).into_bytes()).collect();
        assert_eq!(payloads, &expected);
    }
    assert_eq!(broker.shutdown().dropped, 0);
}

fn topic() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,12}(/[a-z0-9]{1,12}){0,3}"
}

fn packet() -> impl Strategy<Value = Packet> {
    prop_oneof![
        ("[A-Za-z0-9_-]{0,23}", any::<u16>(), any::<bool>()).prop_map(|(client_id, keep_alive, clean_session)| {
            Packet::Connect { client_id, keep_alive, clean_session }
        }),
        (any::<bool>(), 0u8..6).prop_map(|(session_present, return_code)| Packet::ConnAck { session_present, return_code }),
        (topic(), prop::collection::vec(any::<u8>(), 0..=64 * 1024))
            .prop_map(|(topic, payload)| Packet::Publish { topic, payload }),
        (any::<u16>(), prop::collection::vec(topic(), 1..6)).prop_map(|(packet_id, topics)| Packet::Subscribe { packet_id, topics }),
        (any::<u16>(), prop::collection::vec(prop_oneof![Just(0u8), Just(0x80u8)], 1..6))
            .prop_map(|(packet_id, return_codes)| Packet::SubAck { packet_id, return_codes }),
        Just(Packet::PingReq),
        Just(Packet::PingResp),
        Just(Packet::Disconnect),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn packets_round_trip(p in packet()) {
        let bytes = encode_packet(&p);
        let (back, used) = decode_packet(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, p);
    }

    #[test]
    fn truncated_frames_never_decode(p in packet(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_packet(&p);
        let n = cut.index(bytes.len());
        prop_assert!(decode_packet(&bytes[..n]).is_err());
    }

    #[test]
    fn aggregation_conserves_samples(
        lines in prop::collection::vec((any::<bool>(), 0u64..400, 0u8..3), 0..500),
        max_lines in 1usize..80,
    ) {
        let mut agg = Aggregator::new(AggregatorConfig { flush_interval_ms: 5_000, max_lines });
        let mut flushed: BTreeMap<String, u64> = BTreeMap::new();
        let mut now = 0;
        for (i, (good, dt, client)) in lines.iter().enumerate() {
            now += dt;
            let id = format!("c{client}");
            let payload = if *good { format!("{},{}", 1000 + i, 800) } else { "junk".to_string() };
            let mut out: Vec<BatchRecord> = agg.push(&sample_topic(&id), payload.as_bytes(), now).into_iter().collect();
            out.extend(agg.poll(now));
            for b in out {
                prop_assert!(!b.is_empty() && b.len() <= max_lines);
                *flushed.entry(b.client_id.clone()).or_default() += b.len() as u64;
            }
        }
        for b in agg.flush_all(now) {
            *flushed.entry(b.client_id.clone()).or_default() += b.len() as u64;
        }
        for c in 0..3u8 {
            let id = format!("c{c}");
            let published = lines.iter().filter(|l| l.2 == c).count() as u64;
            let counts = agg.counts(&id);
            prop_assert_eq!(counts.received, published);
            prop_assert_eq!(published, flushed.get(&id).copied().unwrap_or(0) + counts.malformed);
        }
    }
}

/// Refuses every deposit until `up_after` has passed, recording what lands.
struct FlakyTransport {
    up_after: Instant,
    landed: Arc<Mutex<Vec<(u64, Vec<u8>)>>>,
}

impl Transport for FlakyTransport {
    fn deposit(&mut self, sequence: u64, _: FileKind, bytes: &[u8]) -> Result<(), ChannelDown> {
        if Instant::now() < self.up_after {
            return Err(ChannelDown("server offline".into()));
        }
        self.landed.lock().unwrap().push((sequence, bytes.to_vec()));
        Ok(())
    }
}

#[test]
fn outage_loses_no_queued_batches() {
    const BATCHES: u64 = 150;
    let landed = Arc::new(Mutex::new(Vec::new()));
    let transport = FlakyTransport { up_after: Instant::now() + Duration::from_millis(400), landed: Arc::clone(&landed) };
    let backoff = Backoff { base: Duration::from_millis(5), cap: Duration::from_millis(40) };
    let key = test_key(1);
    let mut producer = Producer::new(
        Sealing::Secure(Sealer::new(key.clone(), client_id_hash("w"), Direction::Uplink)),
        transport,
        backoff,
    );
    let (tx, rx) = crossbeam_channel::bounded(1024);
    let mut payloads = Vec::new();
    for i in 0..BATCHES {
        let mut b = BatchRecord::new("w", i);
        b.lines = vec![(1000 * (i + 1), 800)];
        payloads.push(b.encode_payload());
        tx.send(b).unwrap();
    }
    drop(tx);
    let stats = producer.run(&rx, None, |_| {});
    assert_eq!(stats.batches, BATCHES);
    assert!(stats.retries > 0);

    let mut opener = Opener::new(Direction::Uplink);
    opener.insert_key(key);
    let landed = landed.lock().unwrap();
    assert_eq!(landed.len() as u64, BATCHES);
    for ((seq, bytes), (i, payload)) in landed.iter().zip(payloads.iter().enumerate()) {
        assert_eq!(*seq, i as u64 + 1);
        assert_eq!(&opener.open(&SealedEnvelope::from_bytes(bytes).unwrap()).unwrap(), payload);
    }
}

#[test]
fn outbox_holds_only_envelopes() {
    const SENTINEL: &str = "SENTINEL-0c4e8b2a";
    let dir = tempfile::tempdir().unwrap();
    let drop = FileDrop::open(dir.path()).unwrap();
    let client = format!("id-{SENTINEL}");
    let mut producer = Producer::new(
        Sealing::Secure(Sealer::new(test_key(2), client_id_hash(&client), Direction::Uplink)),
        DropTransport::new(drop.clone(), &client),
        Backoff::default(),
    );
    for i in 0..20 {
        let mut b = BatchRecord::new(client.clone(), i);
        b.lines = (1..=30).map(|k| (k * 800 + i, 800)).collect();
        producer.produce(&b, None).unwrap();
    }
    let entries = drop.list_all(Side::Outbox).unwrap();
    assert_eq!(entries.len(), 20);
    for e in entries {
        assert_eq!(e.kind, FileKind::Envelope);
        assert!(!e.path.to_string_lossy().contains(SENTINEL));
        let bytes = std::fs::read(&e.path).unwrap();
        SealedEnvelope::from_bytes(&bytes).unwrap();
        assert!(!bytes.windows(SENTINEL.len()).any(|w| w == SENTINEL.as_bytes()));
        assert!(!bytes.windows(4).any(|w| w == b",800"));
    }
}

#[test]
fn tampered_result_is_quarantined_and_consumer_continues() {
    let dir = tempfile::tempdir().unwrap();
    let drop = FileDrop::open(dir.path()).unwrap();
    let key = test_key(3);
    let hash = client_id_hash("q");
    let cdir = client_dir_name(&hash);
    let reply = |seq: u64| seal(&ReportSet::failed(seq, "x").to_json(), &key, hash, seq, Direction::Downlink).to_bytes();
    let mut bad = reply(1);
    bad[80] ^= 0x20;
    drop.deposit(Side::Inbox, &cdir, 1, FileKind::Envelope, &bad).unwrap();
    drop.deposit(Side::Inbox, &cdir, 2, FileKind::Envelope, &reply(2)).unwrap();

    let mut opener = Opener::new(Direction::Downlink);
    opener.insert_key(key);
    let mut consumer = Consumer::new(drop.clone(), "q", Unsealing::Secure(opener));
    let events = consumer.poll().unwrap();
    assert!(matches!(events[0], ConsumerEvent::Quarantined { sequence: 1, .. }));
    assert!(matches!(&events[1], ConsumerEvent::Reports(set) if set.request_sequence == 2));
    assert_eq!(drop.quarantined(&cdir).unwrap().len(), 1);
    assert!(drop.list(Side::Inbox, &cdir).unwrap().is_empty());
}

#[test]
fn plain_package_round_trips_through_the_engine() {
    let dir = tempfile::tempdir().unwrap();
    let broker = broker_serve("127.0.0.1:0", BrokerConfig::default()).unwrap();
    let drop = FileDrop::open(dir.path()).unwrap();
    let stop = AtomicBool::new(false);
    let sensor = SensorConfig {
        client_id: "p1".into(),
        seed: 9,
        phases: vec![ActivityPhase::new("walk", 300.0, 90.0, 20.0)],
        pacing: Pacing::Accelerated,
    };
    let mut cfg = PackageConfig::new(broker.local_addr().to_string(), dir.path(), sensor);
    cfg.drain_grace = Duration::from_secs(10);
    cfg.journal = Some(dir.path().join("journal.jsonl"));
    let engine_cfg = EngineConfig {
        interval: Duration::from_millis(250),
        mode: Mode::Plain,
        ..EngineConfig::default()
    };
    let pipeline = Pipeline::new(HrvConfig::default()).unwrap();
    let summary = thread::scope(|s| {
        let engine = s.spawn(|| run_engine(&engine_cfg, &drop, vec![share(PlainProcessor::new(pipeline))], None, &stop));
        let summary = run_client_package(cfg, &AtomicBool::new(false)).unwrap();
        stop.store(true, Ordering::Relaxed);
        let run = engine.join().unwrap().unwrap();
        assert_eq!(run.counters.received, run.counters.processed + run.counters.rejected);
        summary
    });
    broker.shutdown();
    assert!(summary.published > 300);
    assert_eq!(summary.malformed, 0);
    assert_eq!(summary.sets_received, summary.batches_sent);
    assert!(summary.reports_received >= summary.batches_sent);

    let journal = std::fs::read_to_string(dir.path().join("journal.jsonl")).unwrap();
    let entries: Vec<JournalEntry> = journal.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let received: Vec<&ReportSet> = entries
        .iter()
        .filter_map(|e| match e {
            JournalEntry::Received { set, .. } => Some(set),
            _ => None,
        })
        .collect();
    assert!(received.iter().all(|s| s.error.is_none() && s.reports.iter().all(|r| r.client_id == "p1")));
}
