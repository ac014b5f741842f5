mod support;

use std::time::Instant;

use cardiogrid_core::enclave::{
    plain_process_batch, EnclaveError, EnclaveHost, OverheadModel, Pipeline, ProcessReply, ReportSet,
    PROCESSING_FAILED,
};
use cardiogrid_core::hrv::{Band, HrvConfig};
use cardiogrid_core::secure::{
    client_id_hash, AttestError, Direction, Opener, PendingAttestation, SealedEnvelope, Sealer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use support::fixtures::{attest, batch, launcher, root_key, spec};

fn open_reply(opener: &mut Opener, reply: ProcessReply) -> ReportSet {
    let ProcessReply::Sealed(bytes) = reply else {
        panic!("expected a sealed reply");
    };
    let plain = opener.open(&SealedEnvelope::from_bytes(&bytes).unwrap()).unwrap();
    ReportSet::from_json(&plain).unwrap()
}

#[test]
fn attest_reports_configured_measurement_and_shutdown_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 1);
    let spec = spec(&key_file, OverheadModel::NONE);
    let mut host = EnclaveHost::spawn(&launcher(), &spec).unwrap();
    let pending = PendingAttestation::new(&mut ChaCha20Rng::seed_from_u64(2));
    let quote = host.attest(&pending.request()).unwrap();
    assert_eq!(quote.measurement, spec.measurement().unwrap());
    assert!(pending.verify(&quote, &quote.measurement, &root, 0).is_ok());
    assert!(host.shutdown().unwrap().success());
}

#[test]
fn secure_and_plain_reports_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 3);
    let spec = spec(&key_file, OverheadModel::NONE);
    let pipeline = Pipeline::new(spec.hrv).unwrap();
    let mut host = EnclaveHost::spawn(&launcher(), &spec).unwrap();
    let key = attest(&mut host, &spec, &root, 4);
    let mut sealer = Sealer::new(key.clone(), client_id_hash("alice"), Direction::Uplink);
    let mut opener = Opener::new(Direction::Downlink);
    opener.insert_key(key);

    let payloads: Vec<Vec<u8>> = (0..30).map(|i| batch("alice", 4 + i % 61, i as u64).encode_payload()).collect();
    let envs: Vec<Vec<u8>> = payloads.iter().map(|p| sealer.seal(p).unwrap().to_bytes()).collect();
    let replies = host.process_many(&envs).unwrap();
    assert_eq!(replies.len(), payloads.len());
    for (i, (reply, payload)) in replies.into_iter().zip(&payloads).enumerate() {
        let secure = open_reply(&mut opener, reply);
        let plain = plain_process_batch(&pipeline, i as u64 + 1, payload).unwrap();
        assert_eq!(secure, plain, "batch {i}");
    }
}

#[test]
fn constant_batch_gives_zero_sdnn_through_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 5);
    let spec = spec(&key_file, OverheadModel::NONE);
    let mut host = EnclaveHost::spawn(&launcher(), &spec).unwrap();
    let key = attest(&mut host, &spec, &root, 6);
    let mut b = batch("bob", 0, 0);
    b.lines = (1..=10).map(|i| (i * 800, 800)).collect();
    let env = cardiogrid_core::secure::seal(&b.encode_payload(), &key, client_id_hash("bob"), 1, Direction::Uplink);
    let mut opener = Opener::new(Direction::Downlink);
    opener.insert_key(key);
    let set = open_reply(&mut opener, host.process(&env.to_bytes()).unwrap());
    assert_eq!(set.reports[0].sdnn_ms, Some(0.0));
}

#[test]
fn failures_are_opaque_to_the_host() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 7);
    let spec = spec(&key_file, OverheadModel::NONE);
    let mut host = EnclaveHost::spawn(&launcher(), &spec).unwrap();
    let key = attest(&mut host, &spec, &root, 8);

    // A key the boundary never agreed to: no reply at all.
    let other_dir = tempfile::tempdir().unwrap();
    let (other_file, other_root) = root_key(other_dir.path(), 9);
    let other_spec = support::fixtures::spec(&other_file, OverheadModel::NONE);
    let mut other = EnclaveHost::spawn(&launcher(), &other_spec).unwrap();
    let stray = attest(&mut other, &other_spec, &other_root, 10);
    let env = cardiogrid_core::secure::seal(b"x", &stray, client_id_hash("eve"), 1, Direction::Uplink);
    assert_eq!(host.process(&env.to_bytes()).unwrap(), ProcessReply::Failed);

    // Tampered and replayed envelopes under a held key: sealed, uniform
    // error reports.
    let mut sealer = Sealer::new(key.clone(), client_id_hash("carol"), Direction::Uplink);
    let good = sealer.seal(&batch("carol", 8, 1).encode_payload()).unwrap().to_bytes();
    let mut tampered = sealer.seal(&batch("carol", 8, 2).encode_payload()).unwrap().to_bytes();
    let last = tampered.len() - 1;
    tampered[last] ^= 1;
    let replies = host.process_many(&[good.clone(), tampered, good]).unwrap();
    let mut opener = Opener::new(Direction::Downlink);
    opener.insert_key(key);
    let sets: Vec<ReportSet> = replies.into_iter().map(|r| open_reply(&mut opener, r)).collect();
    assert!(sets[0].error.is_none());
    assert_eq!(sets[1].error.as_deref(), Some(PROCESSING_FAILED));
    assert_eq!(sets[2].error.as_deref(), Some(PROCESSING_FAILED));
}

#[test]
fn changed_analytics_change_measurement_and_fail_old_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 11);
    let base = spec(&key_file, OverheadModel::NONE);
    let tweaks: Vec<Box<dyn Fn(&mut HrvConfig)>> = vec![
        Box::new(|c| c.bands.lf = Band::new(0.04, 0.14)),
        Box::new(|c| c.bands.vlf = Band::new(0.004, 0.04)),
        Box::new(|c| c.grid.step_hz = 0.0025),
        Box::new(|c| c.grid.end_hz = 0.45),
    ];
    for tweak in tweaks {
        let mut changed = base.clone();
        tweak(&mut changed.hrv);
        assert_ne!(changed.measurement().unwrap(), base.measurement().unwrap());
        let mut host = EnclaveHost::spawn(&launcher(), &changed).unwrap();
        let pending = PendingAttestation::new(&mut ChaCha20Rng::seed_from_u64(12));
        let quote = host.attest(&pending.request()).unwrap();
        assert!(matches!(
            pending.verify(&quote, &base.measurement().unwrap(), &root, 0),
            Err(AttestError::MeasurementMismatch { .. })
        ));
    }
}

#[test]
fn more_overhead_per_kb_never_speeds_batches_up() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 13);
    let payloads: Vec<Vec<u8>> = (0..24).map(|i| batch("dave", 64, i).encode_payload()).collect();
    let mut means = Vec::new();
    for per_kb in [0.0, 0.5, 2.0] {
        let spec = spec(&key_file, OverheadModel::new(0.0, per_kb).unwrap());
        let mut host = EnclaveHost::spawn(&launcher(), &spec).unwrap();
        let key = attest(&mut host, &spec, &root, 14);
        let mut sealer = Sealer::new(key, client_id_hash("dave"), Direction::Uplink);
        let mut total = 0.0;
        for p in &payloads {
            let env = sealer.seal(p).unwrap().to_bytes();
            let t = Instant::now();
            host.process(&env).unwrap();
            total += t.elapsed().as_secs_f64();
        }
        means.push(total / payloads.len() as f64);
    }
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}

#[test]
fn killed_boundary_is_reported_as_death() {
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 15);
    let spec = spec(&key_file, OverheadModel::NONE);
    let mut host = EnclaveHost::spawn(&launcher(), &spec).unwrap();
    let key = attest(&mut host, &spec, &root, 16);
    host.kill();
    let env = cardiogrid_core::secure::seal(b"x", &key, client_id_hash("f"), 1, Direction::Uplink);
    assert!(matches!(host.process(&env.to_bytes()), Err(EnclaveError::Died(_))));
    assert!(!host.is_alive());
}

#[test]
fn captured_channel_never_carries_plaintext() {
    const SENTINEL: &str = "SENTINEL-7f3a9c1e";
    let dir = tempfile::tempdir().unwrap();
    let (key_file, root) = root_key(dir.path(), 17);
    let spec = spec(&key_file, OverheadModel::NONE);
    let capture = dir.path().join("channel.bin");
    let mut host = EnclaveHost::spawn_with_capture(&launcher(), &spec, &capture).unwrap();
    let key = attest(&mut host, &spec, &root, 18);
    let client = format!("patient-{SENTINEL}");
    let mut sealer = Sealer::new(key, client_id_hash(&client), Direction::Uplink);
    let envs: Vec<Vec<u8>> = (0..5).map(|i| sealer.seal(&batch(&client, 20, i).encode_payload()).unwrap().to_bytes()).collect();
    host.process_many(&envs).unwrap();
    host.shutdown().unwrap();
    let bytes = std::fs::read(&capture).unwrap();
    assert!(bytes.len() > 5 * 200);
    assert!(!bytes.windows(SENTINEL.len()).any(|w| w == SENTINEL.as_bytes()));
}

#[test]
fn unknown_arguments_make_the_boundary_exit_nonzero() {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_cardiogrid-enclave"))
        .arg("--nope")
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
