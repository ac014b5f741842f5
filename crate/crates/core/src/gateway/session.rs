//! Client half of the attestation handshake, carried over the file drop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use thiserror::Error;

use super::filedrop::{client_dir_name, FileDrop, Side, ATTEST_QUOTE_FILE, ATTEST_REQUEST_FILE};
use crate::secure::{client_id_hash, AttestError, AttestationQuote, Measurement, PendingAttestation, RootPublicKey, SessionKey};

#[derive(Debug, Error)]
pub enum HandshakeError {
    #[error("attestation rejected: {0}")]
    Rejected(#[from] AttestError),
    #[error("no attestation quote within {0:?}")]
    Timeout(Duration),
    #[error("stopped before the handshake completed")]
    Stopped,
    #[error("file drop: {0}")]
    Io(#[from] std::io::Error),
}

/// Posts a fresh challenge for `client_id` and waits for the server to
/// relay the boundary's quote; returns the session key on a verified quote.
pub fn establish_session(
    drop: &FileDrop,
    client_id: &str,
    expected: &Measurement,
    root: &RootPublicKey,
    timeout: Duration,
    stop: Option<&AtomicBool>,
) -> Result<SessionKey, HandshakeError> {
    let dir = client_dir_name(&client_id_hash(client_id));
    // A quote left over from an earlier attempt answers a stale challenge.
    drop.take_named(Side::Inbox, &dir, ATTEST_QUOTE_FILE)?;
    let pending = PendingAttestation::new(&mut OsRng);
    drop.deposit_named(Side::Outbox, &dir, ATTEST_REQUEST_FILE, &pending.request().to_bytes())?;
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(bytes) = drop.take_named(Side::Inbox, &dir, ATTEST_QUOTE_FILE)? {
            let quote = AttestationQuote::from_bytes(&bytes)?;
            match pending.verify(&quote, expected, root, crate::unix_time_ms()) {
                Err(AttestError::StaleNonce) => log::warn!("handshake: ignoring quote for an older challenge"),
                other => return Ok(other?),
            }
        }
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            return Err(HandshakeError::Stopped);
        }
        if Instant::now() >= deadline {
            return Err(HandshakeError::Timeout(timeout));
        }
        std::thread::sleep(Duration::from_millis(25));
    }
}
