use std::collections::HashMap;
use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENVELOPE_VERSION: u8 = 1;
pub const KEY_ID_LEN: usize = 16;
pub const CLIENT_HASH_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// version ‖ key_id ‖ client_id_hash ‖ sequence ‖ nonce
pub const HEADER_LEN: usize = 1 + KEY_ID_LEN + CLIENT_HASH_LEN + 8 + NONCE_LEN;

pub type KeyId = [u8; KEY_ID_LEN];
pub type ClientIdHash = [u8; CLIENT_HASH_LEN];

pub fn client_id_hash(client_id: &str) -> ClientIdHash {
    Sha256::digest(client_id.as_bytes()).into()
}

/// Which way an envelope travels; occupies the first four nonce bytes so the
/// two directions of one session never share a nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Client to trusted boundary.
    Uplink,
    /// Trusted boundary to client.
    Downlink,
}

impl Direction {
    fn tag(self) -> [u8; 4] {
        match self {
            Direction::Uplink => 1u32.to_be_bytes(),
            Direction::Downlink => 2u32.to_be_bytes(),
        }
    }

    pub fn nonce(self, sequence: u64) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        n[..4].copy_from_slice(&self.tag());
        n[4..].copy_from_slice(&sequence.to_be_bytes());
        n
    }
}

/// 256-bit session key shared by exactly one client and the boundary.
#[derive(Clone)]
pub struct SessionKey {
    key: [u8; 32],
    pub key_id: KeyId,
    pub established_at_ms: u64,
    pub peer_measurement: [u8; 32],
}

impl SessionKey {
    pub(crate) fn from_parts(key: [u8; 32], key_id: KeyId, established_at_ms: u64, peer_measurement: [u8; 32]) -> Self {
        Self {
            key,
            key_id,
            established_at_ms,
            peer_measurement,
        }
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new_from_slice(&self.key).expect("32-byte key")
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKey")
            .field("key_id", &hex::encode(self.key_id))
            .field("established_at_ms", &self.established_at_ms)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedEnvelope {
    pub version: u8,
    pub key_id: KeyId,
    pub client_id_hash: ClientIdHash,
    pub sequence: u64,
    pub nonce: [u8; NONCE_LEN],
    /// AEAD ciphertext with the 16-byte tag appended.
    pub ciphertext: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("envelope shorter than header and tag ({0} bytes)")]
    Truncated(usize),
    #[error("sequence space exhausted")]
    SequenceExhausted,
    #[error("sequence {got} not above last used {last}")]
    SequenceReused { last: u64, got: u64 },
    #[error("authentication failed")]
    AuthFailure,
    #[error("replayed sequence {got}, last accepted {last}")]
    ReplayDetected { last: u64, got: u64 },
    #[error("unknown key id {0}")]
    UnknownKeyId(String),
}

impl SealedEnvelope {
    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.version;
        h[1..17].copy_from_slice(&self.key_id);
        h[17..49].copy_from_slice(&self.client_id_hash);
        h[49..57].copy_from_slice(&self.sequence.to_be_bytes());
        h[57..69].copy_from_slice(&self.nonce);
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(EnvelopeError::Truncated(bytes.len()));
        }
        Ok(Self {
            version: bytes[0],
            key_id: bytes[1..17].try_into().expect("16 bytes"),
            client_id_hash: bytes[17..49].try_into().expect("32 bytes"),
            sequence: u64::from_be_bytes(bytes[49..57].try_into().expect("8 bytes")),
            nonce: bytes[57..69].try_into().expect("12 bytes"),
            ciphertext: bytes[HEADER_LEN..].to_vec(),
        })
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.ciphertext.len()
    }
}

/// Encrypts `payload` under `key` with the full header as associated data.
/// Deterministic for fixed (key, direction, sequence, payload).
pub fn seal(
    payload: &[u8],
    key: &SessionKey,
    client_id_hash: ClientIdHash,
    sequence: u64,
    direction: Direction,
) -> SealedEnvelope {
    let mut env = SealedEnvelope {
        version: ENVELOPE_VERSION,
        key_id: key.key_id,
        client_id_hash,
        sequence,
        nonce: direction.nonce(sequence),
        ciphertext: Vec::new(),
    };
    let aad = env.header_bytes();
    env.ciphertext = key
        .cipher()
        .encrypt(Nonce::from_slice(&env.nonce), Payload { msg: payload, aad: &aad })
        .expect("AES-GCM encryption is infallible for in-range inputs");
    env
}

/// Sealing context for one (session, direction) stream; owns the sequence
/// register so sequences strictly increase.
#[derive(Debug)]
pub struct Sealer {
    key: SessionKey,
    client_id_hash: ClientIdHash,
    direction: Direction,
    last_sequence: u64,
}

impl Sealer {
    pub fn new(key: SessionKey, client_id_hash: ClientIdHash, direction: Direction) -> Self {
        Self {
            key,
            client_id_hash,
            direction,
            last_sequence: 0,
        }
    }

    pub fn key_id(&self) -> KeyId {
        self.key.key_id
    }

    pub fn last_sequence(&self) -> u64 {
        self.last_sequence
    }

    pub fn seal(&mut self, payload: &[u8]) -> Result<SealedEnvelope, EnvelopeError> {
        let next = self
            .last_sequence
            .checked_add(1)
            .ok_or(EnvelopeError::SequenceExhausted)?;
        self.seal_at(payload, next)
    }

    /// Seals at an explicit sequence, which must exceed the last one used.
    pub fn seal_at(&mut self, payload: &[u8], sequence: u64) -> Result<SealedEnvelope, EnvelopeError> {
        if sequence <= self.last_sequence {
            return Err(EnvelopeError::SequenceReused {
                last: self.last_sequence,
                got: sequence,
            });
        }
        self.last_sequence = sequence;
        Ok(seal(payload, &self.key, self.client_id_hash, sequence, self.direction))
    }
}

/// Holds session keys and the replay register for one inbound direction.
#[derive(Debug)]
pub struct Opener {
    direction: Direction,
    keys: HashMap<KeyId, SessionKey>,
    last_seen: HashMap<KeyId, u64>,
}

impl Opener {
    pub fn new(direction: Direction) -> Self {
        Self {
            direction,
            keys: HashMap::new(),
            last_seen: HashMap::new(),
        }
    }

    pub fn insert_key(&mut self, key: SessionKey) {
        self.keys.insert(key.key_id, key);
    }

    pub fn key(&self, key_id: &KeyId) -> Option<&SessionKey> {
        self.keys.get(key_id)
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    /// Returns the plaintext iff the key is held, the tag verifies and the
    /// sequence is above every previously accepted one for that key.
    pub fn open(&mut self, env: &SealedEnvelope) -> Result<Vec<u8>, EnvelopeError> {
        let key = self
            .keys
            .get(&env.key_id)
            .ok_or_else(|| EnvelopeError::UnknownKeyId(hex::encode(env.key_id)))?;
        if env.version != ENVELOPE_VERSION || env.nonce != self.direction.nonce(env.sequence) {
            return Err(EnvelopeError::AuthFailure);
        }
        let aad = env.header_bytes();
        let plain = key
            .cipher()
            .decrypt(
                Nonce::from_slice(&env.nonce),
                Payload {
                    msg: &env.ciphertext,
                    aad: &aad,
                },
            )
            .map_err(|_| EnvelopeError::AuthFailure)?;
        let last = self.last_seen.get(&env.key_id).copied().unwrap_or(0);
        if env.sequence <= last {
            return Err(EnvelopeError::ReplayDetected {
                last,
                got: env.sequence,
            });
        }
        self.last_seen.insert(env.key_id, env.sequence);
        Ok(plain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(byte: u8) -> SessionKey {
        SessionKey::from_parts([byte; 32], [byte; 16], 0, [0; 32])
    }

    #[test]
    fn layout_and_round_trip() {
        let k = key(7);
        let env = seal(b"hello", &k, client_id_hash("c1"), 3, Direction::Uplink);
        let bytes = env.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 5 + TAG_LEN);
        assert_eq!(bytes[0], ENVELOPE_VERSION);
        assert_eq!(&bytes[49..57], &3u64.to_be_bytes());
        assert_eq!(&bytes[57..61], &[0, 0, 0, 1]);
        assert_eq!(&bytes[61..69], &3u64.to_be_bytes());
        let parsed = SealedEnvelope::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, env);
        let mut opener = Opener::new(Direction::Uplink);
        opener.insert_key(k);
        assert_eq!(opener.open(&parsed).unwrap(), b"hello");
    }

    #[test]
    fn replay_and_unknown_key() {
        let k = key(1);
        let mut sealer = Sealer::new(k.clone(), client_id_hash("c"), Direction::Uplink);
        let e1 = sealer.seal(b"a").unwrap();
        let e2 = sealer.seal(b"b").unwrap();
        let mut opener = Opener::new(Direction::Uplink);
        assert!(matches!(opener.open(&e1), Err(EnvelopeError::UnknownKeyId(_))));
        opener.insert_key(k);
        assert_eq!(opener.open(&e2).unwrap(), b"b");
        assert!(matches!(opener.open(&e1), Err(EnvelopeError::ReplayDetected { last: 2, got: 1 })));
        assert!(matches!(opener.open(&e2), Err(EnvelopeError::ReplayDetected { .. })));
    }

    #[test]
    fn wrong_direction_rejected() {
        let k = key(2);
        let env = seal(b"x", &k, [0; 32], 1, Direction::Downlink);
        let mut opener = Opener::new(Direction::Uplink);
        opener.insert_key(k);
        assert_eq!(opener.open(&env), Err(EnvelopeError::AuthFailure));
    }

    #[test]
    fn sealer_refuses_reuse_and_overflow() {
        let mut s = Sealer::new(key(3), [0; 32], Direction::Uplink);
        s.seal_at(b"", 10).unwrap();
        assert!(matches!(s.seal_at(b"", 10), Err(EnvelopeError::SequenceReused { .. })));
        s.seal_at(b"", u64::MAX).unwrap();
        assert_eq!(s.seal(b"").unwrap_err(), EnvelopeError::SequenceExhausted);
    }

    #[test]
    fn debug_hides_key_material() {
        let text = format!("{:?}", key(0xAB));
        assert!(!text.contains("171"), "{text}");
    }

    #[test]
    fn short_input_is_truncated() {
        assert_eq!(SealedEnvelope::from_bytes(&[1; 20]), Err(EnvelopeError::Truncated(20)));
    }
}
