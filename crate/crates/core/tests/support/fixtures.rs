//! Shared setup for tests that start a real boundary process.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cardiogrid_core::enclave::{write_root_key, EnclaveHost, EnclaveLauncher, EnclaveSpec, OverheadModel};
use cardiogrid_core::gateway::BatchRecord;
use cardiogrid_core::hrv::HrvConfig;
use cardiogrid_core::secure::{AttestationRoot, PendingAttestation, RootPublicKey, SessionKey};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn launcher() -> EnclaveLauncher {
    EnclaveLauncher::new(env!("CARGO_BIN_EXE_cardiogrid-enclave"))
}

/// Writes a fresh root key under `dir` and returns its public half.
pub fn root_key(dir: &Path, seed: u64) -> (PathBuf, RootPublicKey) {
    let root = AttestationRoot::generate(&mut ChaCha20Rng::seed_from_u64(seed));
    let path = dir.join("root.key");
    write_root_key(&path, &root).unwrap();
    (path, root.public_key())
}

pub fn spec(key_file: &Path, overhead: OverheadModel) -> EnclaveSpec {
    EnclaveSpec::new(key_file, HrvConfig::default(), overhead)
}

/// Runs the handshake against `host` and returns the client's session key.
pub fn attest(host: &mut EnclaveHost, spec: &EnclaveSpec, root: &RootPublicKey, seed: u64) -> SessionKey {
    let pending = PendingAttestation::new(&mut ChaCha20Rng::seed_from_u64(seed));
    let quote = host.attest(&pending.request()).unwrap();
    pending.verify(&quote, &spec.measurement().unwrap(), root, 0).unwrap()
}

/// A batch of `n` lines with RR values drifting around 800 ms.
pub fn batch(client_id: &str, n: usize, salt: u64) -> BatchRecord {
    let mut b = BatchRecord::new(client_id, salt);
    let mut t = 1_000 * salt;
    for i in 0..n as u64 {
        let rr = 760 + ((i * 53 + salt * 17) % 90) as u32;
        t += u64::from(rr);
        b.lines.push((t, rr));
    }
    b
}
