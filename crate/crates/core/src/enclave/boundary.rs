//! What runs inside the boundary process.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Read, Write};

use rand::rngs::OsRng;

use super::overhead::{precise_delay, OverheadModel};
use super::pipeline::{Pipeline, ReportSet};
use super::protocol::{
    read_frame, write_frame, OP_ATTEST, OP_ATTEST_REPLY, OP_PROCESS, OP_PROCESS_REPLY, OP_SHUTDOWN, STATUS_FAILED,
    STATUS_OK,
};
use crate::secure::{
    AttestationRequest, AttestationRoot, Attestor, Direction, EnvelopeError, KeyId, Opener, SealedEnvelope, Sealer,
};

/// Reason text sealed into error replies. Deliberately uniform.
pub const PROCESSING_FAILED: &str = "processing failed";

/// Attestation identity, held session keys and the analytics pipeline.
pub struct Boundary {
    pipeline: Pipeline,
    attestor: Attestor,
    opener: Opener,
    sealers: HashMap<KeyId, Sealer>,
    overhead: OverheadModel,
}

impl Boundary {
    pub fn new(pipeline: Pipeline, root: AttestationRoot, overhead: OverheadModel) -> Self {
        let attestor = Attestor::new(root, pipeline.measurement());
        Self {
            pipeline,
            attestor,
            opener: Opener::new(Direction::Uplink),
            sealers: HashMap::new(),
            overhead,
        }
    }

    pub fn measurement(&self) -> [u8; 32] {
        self.attestor.measurement()
    }

    pub fn session_count(&self) -> usize {
        self.opener.key_count()
    }

    /// Answers a challenge; an empty reply means the request was unusable.
    pub fn handle_attest(&mut self, body: &[u8]) -> Vec<u8> {
        let Ok(request) = AttestationRequest::from_bytes(body) else {
            log::warn!("attest: malformed request");
            return Vec::new();
        };
        match self.attestor.attest(&request, &mut OsRng, crate::unix_time_ms()) {
            Ok((quote, key)) => {
                log::debug!("attest: session {} established", hex::encode(key.key_id));
                self.opener.insert_key(key);
                quote.to_bytes()
            }
            Err(e) => {
                log::warn!("attest: {e}");
                Vec::new()
            }
        }
    }

    /// Opens, analyses and reseals one batch. The reply is `status ‖
    /// envelope`; every failure under a held key becomes a sealed error
    /// report, so the host sees only that a reply exists.
    pub fn handle_process(&mut self, body: &[u8]) -> Vec<u8> {
        let reply = self.process_inner(body);
        let mut out = Vec::with_capacity(1 + reply.as_ref().map_or(0, Vec::len));
        match reply {
            Some(env) => {
                out.push(STATUS_OK);
                out.extend_from_slice(&env);
            }
            None => out.push(STATUS_FAILED),
        }
        precise_delay(self.overhead.cost(body.len()));
        out
    }

    fn process_inner(&mut self, body: &[u8]) -> Option<Vec<u8>> {
        let env = match SealedEnvelope::from_bytes(body) {
            Ok(env) => env,
            Err(_) => {
                log::warn!("process: unparseable envelope");
                return None;
            }
        };
        let set = match self.opener.open(&env) {
            Ok(plain) => self
                .pipeline
                .process_payload(env.sequence, &plain)
                .unwrap_or_else(|_| ReportSet::failed(env.sequence, PROCESSING_FAILED)),
            Err(EnvelopeError::UnknownKeyId(_)) => {
                log::warn!("process: envelope under a key this boundary does not hold");
                return None;
            }
            Err(e) => {
                log::warn!("process: rejected envelope seq {}: {}", env.sequence, kind_of(&e));
                ReportSet::failed(env.sequence, PROCESSING_FAILED)
            }
        };
        let key = self.opener.key(&env.key_id)?.clone();
        let sealer = self
            .sealers
            .entry(env.key_id)
            .or_insert_with(|| Sealer::new(key, env.client_id_hash, Direction::Downlink));
        match sealer.seal(&set.to_json()) {
            Ok(reply) => Some(reply.to_bytes()),
            Err(e) => {
                log::error!("process: cannot seal reply: {e}");
                None
            }
        }
    }
}

fn kind_of(e: &EnvelopeError) -> &'static str {
    match e {
        EnvelopeError::AuthFailure => "auth failure",
        EnvelopeError::ReplayDetected { .. } => "replay",
        EnvelopeError::UnknownKeyId(_) => "unknown key",
        _ => "malformed",
    }
}

/// Serves frames until SHUTDOWN or end of input. Replies leave in request
/// order.
pub fn serve<R: Read, W: Write>(boundary: &mut Boundary, input: R, output: W) -> io::Result<()> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    while let Some(frame) = read_frame(&mut input)? {
        match frame.opcode {
            OP_ATTEST => {
                let reply = boundary.handle_attest(&frame.body);
                write_frame(&mut output, OP_ATTEST_REPLY, &reply)?;
            }
            OP_PROCESS => {
                let reply = boundary.handle_process(&frame.body);
                write_frame(&mut output, OP_PROCESS_REPLY, &reply)?;
            }
            OP_SHUTDOWN => {
                output.flush()?;
                log::info!("shutdown requested");
                return Ok(());
            }
            other => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("unknown opcode {other:#04x}"),
                ))
            }
        }
        // Flush only when no further request is already buffered, so
        // pipelined requests share writes.
        if input.buffer().is_empty() {
            output.flush()?;
        }
    }
    output.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::batch::BatchRecord;
    use crate::hrv::HrvConfig;
    use crate::secure::{client_id_hash, PendingAttestation, QUOTE_LEN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn boundary() -> (Boundary, AttestationRoot) {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let root = AttestationRoot::generate(&mut rng);
        let b = Boundary::new(
            Pipeline::new(HrvConfig::default()).unwrap(),
            AttestationRoot::from_secret_bytes(&root.secret_bytes()),
            OverheadModel::NONE,
        );
        (b, root)
    }

    fn batch() -> Vec<u8> {
        let mut b = BatchRecord::new("patient-7", 0);
        b.lines = (1..=6).map(|i| (i * 800, 800)).collect();
        b.encode_payload()
    }

    #[test]
    fn attest_then_process() {
        let (mut b, root) = boundary();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let pending = PendingAttestation::new(&mut rng);
        let quote_bytes = b.handle_attest(&pending.request().to_bytes());
        assert_eq!(quote_bytes.len(), QUOTE_LEN);
        let quote = crate::secure::AttestationQuote::from_bytes(&quote_bytes).unwrap();
        let key = pending.verify(&quote, &b.measurement(), &root.public_key(), 0).unwrap();

        let mut sealer = Sealer::new(key.clone(), client_id_hash("patient-7"), Direction::Uplink);
        let env = sealer.seal(&batch()).unwrap();
        let reply = b.handle_process(&env.to_bytes());
        assert_eq!(reply[0], STATUS_OK);
        let mut opener = Opener::new(Direction::Downlink);
        opener.insert_key(key);
        let set = ReportSet::from_json(&opener.open(&SealedEnvelope::from_bytes(&reply[1..]).unwrap()).unwrap()).unwrap();
        assert_eq!(set.request_sequence, 1);
        assert_eq!(set.reports[0].sdnn_ms, Some(0.0));

        // Replaying the same request yields a sealed, uniform error.
        let reply = b.handle_process(&env.to_bytes());
        assert_eq!(reply[0], STATUS_OK);
        let set = ReportSet::from_json(&opener.open(&SealedEnvelope::from_bytes(&reply[1..]).unwrap()).unwrap()).unwrap();
        assert_eq!(set.error.as_deref(), Some(PROCESSING_FAILED));
    }

    #[test]
    fn unknown_key_is_opaque() {
        let (mut b, root) = boundary();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pending = PendingAttestation::new(&mut rng);
        let other = Attestor::new(AttestationRoot::from_secret_bytes(&root.secret_bytes()), b.measurement());
        let (_, stray_key) = other.attest(&pending.request(), &mut rng, 0).unwrap();
        let env = crate::secure::seal(&batch(), &stray_key, client_id_hash("x"), 1, Direction::Uplink);
        assert_eq!(b.handle_process(&env.to_bytes()), vec![STATUS_FAILED]);
        assert_eq!(b.handle_process(b"junk"), vec![STATUS_FAILED]);
    }

    #[test]
    fn serve_stops_on_shutdown() {
        let (mut b, _) = boundary();
        let mut input = super::super::protocol::encode_frame(OP_ATTEST, b"short");
        input.extend(super::super::protocol::encode_frame(OP_SHUTDOWN, &[]));
        input.extend(super::super::protocol::encode_frame(OP_ATTEST, b"never read"));
        let mut out = Vec::new();
        serve(&mut b, &input[..], &mut out).unwrap();
        let mut r = &out[..];
        let f = read_frame(&mut r).unwrap().unwrap();
        assert_eq!((f.opcode, f.body.len()), (OP_ATTEST_REPLY, 0));
        assert!(read_frame(&mut r).unwrap().is_none());
    }
}
