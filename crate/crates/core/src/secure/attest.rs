//! Simulated remote attestation and session-key agreement.
//!
//! The verifier sends a fresh 16-byte challenge plus its ephemeral X25519
//! public key. The boundary answers with a quote binding its code
//! measurement, the challenge and its own ephemeral public key, signed by the
//! attestation root (Ed25519). Both sides then derive the session key with
//! HKDF-SHA256 over the X25519 shared secret, bound to the measurement and
//! both public keys.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use super::envelope::{KeyId, SessionKey, KEY_ID_LEN};

pub type Measurement = [u8; 32];
pub type Challenge = [u8; 16];

pub const QUOTE_LEN: usize = 32 + 16 + 32 + 64;
const KDF_INFO: &[u8] = b"cardiogrid/session/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestError {
    #[error("quote signature does not verify under the attestation root")]
    BadSignature,
    #[error("measurement {got} differs from expected {expected}")]
    MeasurementMismatch { expected: String, got: String },
    #[error("quote answers a challenge that was not issued")]
    StaleNonce,
    #[error("key agreement produced a non-contributory secret")]
    KeyAgreement,
    #[error("malformed {0}")]
    Malformed(&'static str),
}

/// Signing half of the stand-in attestation service.
pub struct AttestationRoot {
    signing: SigningKey,
}

impl AttestationRoot {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self {
            signing: SigningKey::generate(rng),
        }
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(bytes),
        }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> RootPublicKey {
        RootPublicKey(self.signing.verifying_key())
    }
}

/// Published verification key of the attestation root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RootPublicKey(VerifyingKey);

impl RootPublicKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, AttestError> {
        VerifyingKey::from_bytes(bytes)
            .map(Self)
            .map_err(|_| AttestError::Malformed("root public key"))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationQuote {
    pub measurement: Measurement,
    pub challenge_nonce: Challenge,
    pub enclave_pubkey: [u8; 32],
    pub signature: [u8; 64],
}

impl AttestationQuote {
    fn signed_message(measurement: &Measurement, nonce: &Challenge, pubkey: &[u8; 32]) -> [u8; 80] {
        let mut m = [0u8; 80];
        m[..32].copy_from_slice(measurement);
        m[32..48].copy_from_slice(nonce);
        m[48..].copy_from_slice(pubkey);
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(QUOTE_LEN);
        out.extend_from_slice(&self.measurement);
        out.extend_from_slice(&self.challenge_nonce);
        out.extend_from_slice(&self.enclave_pubkey);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, AttestError> {
        if b.len() != QUOTE_LEN {
            return Err(AttestError::Malformed("quote"));
        }
        Ok(Self {
            measurement: b[..32].try_into().expect("32"),
            challenge_nonce: b[32..48].try_into().expect("16"),
            enclave_pubkey: b[48..80].try_into().expect("32"),
            signature: b[80..].try_into().expect("64"),
        })
    }
}

/// What the verifier sends to the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestationRequest {
    pub challenge: Challenge,
    pub verifier_pubkey: [u8; 32],
}

pub const REQUEST_LEN: usize = 16 + 32;

impl AttestationRequest {
    pub fn to_bytes(&self) -> [u8; REQUEST_LEN] {
        let mut out = [0u8; REQUEST_LEN];
        out[..16].copy_from_slice(&self.challenge);
        out[16..].copy_from_slice(&self.verifier_pubkey);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, AttestError> {
        if b.len() != REQUEST_LEN {
            return Err(AttestError::Malformed("attestation request"));
        }
        Ok(Self {
            challenge: b[..16].try_into().expect("16"),
            verifier_pubkey: b[16..].try_into().expect("32"),
        })
    }
}

/// Verifier state between issuing a challenge and checking the quote.
pub struct PendingAttestation {
    secret: StaticSecret,
    request: AttestationRequest,
}

impl PendingAttestation {
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let mut challenge = [0u8; 16];
        rng.fill_bytes(&mut challenge);
        let request = AttestationRequest {
            challenge,
            verifier_pubkey: PublicKey::from(&secret).to_bytes(),
        };
        Self { secret, request }
    }

    pub fn request(&self) -> AttestationRequest {
        self.request
    }

    /// Checks the quote against the challenge this verifier issued.
    pub fn verify(
        &self,
        quote: &AttestationQuote,
        expected: &Measurement,
        root: &RootPublicKey,
        now_ms: u64,
    ) -> Result<SessionKey, AttestError> {
        verify_quote(quote, expected, &self.request.challenge, root, &self.secret, now_ms)
    }
}

/// Verifies signature, challenge freshness and measurement, in that order,
/// then completes key agreement.
pub fn verify_quote(
    quote: &AttestationQuote,
    expected: &Measurement,
    issued_nonce: &Challenge,
    root: &RootPublicKey,
    verifier_secret: &StaticSecret,
    now_ms: u64,
) -> Result<SessionKey, AttestError> {
    let msg = AttestationQuote::signed_message(&quote.measurement, &quote.challenge_nonce, &quote.enclave_pubkey);
    root.0
        .verify(&msg, &Signature::from_bytes(&quote.signature))
        .map_err(|_| AttestError::BadSignature)?;
    if &quote.challenge_nonce != issued_nonce {
        return Err(AttestError::StaleNonce);
    }
    if &quote.measurement != expected {
        return Err(AttestError::MeasurementMismatch {
            expected: hex::encode(expected),
            got: hex::encode(quote.measurement),
        });
    }
    let verifier_pub = PublicKey::from(verifier_secret).to_bytes();
    let shared = verifier_secret.diffie_hellman(&PublicKey::from(quote.enclave_pubkey));
    if !shared.was_contributory() {
        return Err(AttestError::KeyAgreement);
    }
    Ok(derive_session(
        shared.as_bytes(),
        &quote.measurement,
        &quote.enclave_pubkey,
        &verifier_pub,
        now_ms,
    ))
}

fn derive_session(
    shared: &[u8; 32],
    measurement: &Measurement,
    enclave_pub: &[u8; 32],
    verifier_pub: &[u8; 32],
    now_ms: u64,
) -> SessionKey {
    let hk = Hkdf::<Sha256>::new(Some(measurement), shared);
    let mut info = Vec::with_capacity(KDF_INFO.len() + 96);
    info.extend_from_slice(KDF_INFO);
    info.extend_from_slice(measurement);
    info.extend_from_slice(enclave_pub);
    info.extend_from_slice(verifier_pub);
    let mut okm = [0u8; 32 + KEY_ID_LEN];
    hk.expand(&info, &mut okm).expect("48 bytes is a valid HKDF length");
    let key: [u8; 32] = okm[..32].try_into().expect("32");
    let key_id: KeyId = okm[32..].try_into().expect("16");
    SessionKey::from_parts(key, key_id, now_ms, *measurement)
}

/// Boundary side: answers challenges for a fixed measurement.
pub struct Attestor {
    root: AttestationRoot,
    measurement: Measurement,
}

impl Attestor {
    pub fn new(root: AttestationRoot, measurement: Measurement) -> Self {
        Self { root, measurement }
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    /// Produces a quote over a fresh ephemeral key and the session key the
    /// verifier will derive if it accepts the quote.
    pub fn attest<R: RngCore + CryptoRng>(
        &self,
        request: &AttestationRequest,
        rng: &mut R,
        now_ms: u64,
    ) -> Result<(AttestationQuote, SessionKey), AttestError> {
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let enclave_pubkey = PublicKey::from(&secret).to_bytes();
        let msg = AttestationQuote::signed_message(&self.measurement, &request.challenge, &enclave_pubkey);
        let quote = AttestationQuote {
            measurement: self.measurement,
            challenge_nonce: request.challenge,
            enclave_pubkey,
            signature: self.root.signing.sign(&msg).to_bytes(),
        };
        let shared = secret.diffie_hellman(&PublicKey::from(request.verifier_pubkey));
        if !shared.was_contributory() {
            return Err(AttestError::KeyAgreement);
        }
        let key = derive_session(
            shared.as_bytes(),
            &self.measurement,
            &enclave_pubkey,
            &request.verifier_pubkey,
            now_ms,
        );
        Ok((quote, key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (ChaCha20Rng, AttestationRoot, Attestor) {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let root = AttestationRoot::generate(&mut rng);
        let attestor = Attestor::new(AttestationRoot::from_secret_bytes(&root.secret_bytes()), [9; 32]);
        (rng, root, attestor)
    }

    #[test]
    fn happy_path_agrees_on_key() {
        let (mut rng, root, attestor) = setup();
        let pending = PendingAttestation::new(&mut rng);
        let (quote, enclave_key) = attestor.attest(&pending.request(), &mut rng, 5).unwrap();
        let client_key = pending.verify(&quote, &[9; 32], &root.public_key(), 6).unwrap();
        assert_eq!(client_key.key_id, enclave_key.key_id);
        let env = super::super::seal(b"x", &client_key, [0; 32], 1, super::super::Direction::Uplink);
        let mut opener = super::super::Opener::new(super::super::Direction::Uplink);
        opener.insert_key(enclave_key);
        assert_eq!(opener.open(&env).unwrap(), b"x");
    }

    #[test]
    fn nonce_binding() {
        let (mut rng, _, attestor) = setup();
        let a = PendingAttestation::new(&mut rng);
        let b = PendingAttestation::new(&mut rng);
        let (qa, _) = attestor.attest(&a.request(), &mut rng, 0).unwrap();
        let (qb, _) = attestor.attest(&b.request(), &mut rng, 0).unwrap();
        assert_ne!(qa.signature, qb.signature);
        assert_eq!(qa.measurement, qb.measurement);
    }

    #[test]
    fn rejections_are_distinguishable() {
        let (mut rng, root, attestor) = setup();
        let pending = PendingAttestation::new(&mut rng);
        let (quote, _) = attestor.attest(&pending.request(), &mut rng, 0).unwrap();

        let mut expected = [9u8; 32];
        expected[31] ^= 1;
        assert!(matches!(
            pending.verify(&quote, &expected, &root.public_key(), 0),
            Err(AttestError::MeasurementMismatch { .. })
        ));

        let other_root = AttestationRoot::generate(&mut rng);
        assert_eq!(
            pending.verify(&quote, &[9; 32], &other_root.public_key(), 0).unwrap_err(),
            AttestError::BadSignature
        );

        let later = PendingAttestation::new(&mut rng);
        assert_eq!(
            later.verify(&quote, &[9; 32], &root.public_key(), 0).unwrap_err(),
            AttestError::StaleNonce
        );
    }

    #[test]
    fn quote_bytes_round_trip() {
        let (mut rng, _, attestor) = setup();
        let pending = PendingAttestation::new(&mut rng);
        let (quote, _) = attestor.attest(&pending.request(), &mut rng, 0).unwrap();
        let bytes = quote.to_bytes();
        assert_eq!(bytes.len(), QUOTE_LEN);
        assert_eq!(AttestationQuote::from_bytes(&bytes).unwrap(), quote);
        assert!(AttestationQuote::from_bytes(&bytes[1..]).is_err());
        let req = pending.request();
        assert_eq!(AttestationRequest::from_bytes(&req.to_bytes()).unwrap(), req);
    }
}
