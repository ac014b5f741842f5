//! Sealed envelopes and the attestation handshake that provisions their keys.

mod attest;
mod envelope;

pub use attest::{
    verify_quote, AttestError, AttestationQuote, AttestationRequest, AttestationRoot, Attestor, Challenge,
    Measurement, PendingAttestation, RootPublicKey, QUOTE_LEN, REQUEST_LEN,
};
pub use envelope::{
    client_id_hash, seal, ClientIdHash, Direction, EnvelopeError, KeyId, Opener, SealedEnvelope, Sealer,
    SessionKey, CLIENT_HASH_LEN, ENVELOPE_VERSION, HEADER_LEN, KEY_ID_LEN, NONCE_LEN, TAG_LEN,
};
