//! Deterministic inputs shared by the criterion benches.

use cardiogrid_core::enclave::{Boundary, OverheadModel, Pipeline};
use cardiogrid_core::gateway::BatchRecord;
use cardiogrid_core::hrv::{RRSample, RRWindow};
use cardiogrid_core::secure::{
    client_id_hash, AttestationQuote, AttestationRoot, Direction, PendingAttestation, Sealer, SessionKey,
};
use cardiogrid_core::sensor::{ActivityPhase, Pacing, RrGenerator, SensorConfig};
use cardiogrid_core::HrvConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn sensor(client_id: &str, seed: u64) -> RrGenerator {
    RrGenerator::new(&SensorConfig {
        client_id: client_id.into(),
        seed,
        phases: vec![ActivityPhase::new("rest", 1e6, 72.0, 30.0)],
        pacing: Pacing::Accelerated,
    })
    .expect("valid sensor")
}

/// `n` consecutive intervals from the simulated sensor.
pub fn rr_window(n: usize, seed: u64) -> RRWindow {
    let mut g = sensor("bench", seed);
    let samples: Vec<RRSample> = (0..n).map(|_| g.next_sample().expect("sample")).collect();
    RRWindow::spanning("bench", samples).expect("valid window")
}

/// One gateway batch of `lines` samples.
pub fn batch(client_id: &str, lines: usize, seed: u64) -> BatchRecord {
    let mut g = sensor(client_id, seed);
    let mut b = BatchRecord::new(client_id, 0);
    b.lines = (0..lines)
        .map(|_| {
            let s = g.next_sample().expect("sample");
            (s.r_timestamp_ms, s.rr_interval_ms)
        })
        .collect();
    b
}

/// An in-process boundary holding one attested session, with a client-side
/// sealer for it.
pub struct SecurePair {
    pub boundary: Boundary,
    pub sealer: Sealer,
    pub key: SessionKey,
}

pub fn secure_pair(client_id: &str, overhead: OverheadModel) -> SecurePair {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let root = AttestationRoot::generate(&mut rng);
    let public = root.public_key();
    let pipeline = Pipeline::new(HrvConfig::default()).expect("default pipeline");
    let mut boundary = Boundary::new(pipeline, root, overhead);
    let pending = PendingAttestation::new(&mut rng);
    let quote = AttestationQuote::from_bytes(&boundary.handle_attest(&pending.request().to_bytes())).expect("quote");
    let key = pending
        .verify(&quote, &boundary.measurement(), &public, 0)
        .expect("fresh quote verifies");
    let sealer = Sealer::new(key.clone(), client_id_hash(client_id), Direction::Uplink);
    SecurePair { boundary, sealer, key }
}
