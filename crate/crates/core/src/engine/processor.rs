use crate::enclave::{plain_process_batch, EnclaveError, EnclaveHost, Pipeline, ProcessReply, ReportSet};
use crate::gateway::filedrop::{client_dir_name, FileKind};
use crate::secure::SealedEnvelope;

use super::{EngineError, Mode};

/// One inbound file as picked up from the outbox.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundItem {
    pub client_dir: String,
    pub sequence: u64,
    pub kind: FileKind,
    pub bytes: Vec<u8>,
}

/// One result destined for a client inbox.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundItem {
    pub client_dir: String,
    pub sequence: u64,
    pub kind: FileKind,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowOutcome {
    pub outputs: Vec<OutboundItem>,
    /// Inputs that produced no result.
    pub rejected: usize,
}

/// Turns the inputs of one window into results.
pub trait BatchProcessor: Send {
    fn mode(&self) -> Mode;

    fn process(&mut self, items: &[InboundItem]) -> Result<WindowOutcome, EngineError>;

    /// Relays an attestation request; `None` when this processor does not
    /// take part in attestation.
    fn attest(&mut self, _request: &[u8]) -> Result<Option<Vec<u8>>, EngineError> {
        Ok(None)
    }

    /// Errors once the processor can no longer serve requests.
    fn check_health(&mut self) -> Result<(), EngineError> {
        Ok(())
    }
}

/// Baseline: analytics in-process, results as bare JSON.
pub struct PlainProcessor {
    pipeline: Pipeline,
}

impl PlainProcessor {
    pub fn new(pipeline: Pipeline) -> Self {
        Self { pipeline }
    }
}

impl BatchProcessor for PlainProcessor {
    fn mode(&self) -> Mode {
        Mode::Plain
    }

    fn process(&mut self, items: &[InboundItem]) -> Result<WindowOutcome, EngineError> {
        let mut out = WindowOutcome::default();
        for item in items {
            if item.kind != FileKind::Plain {
                out.rejected += 1;
                continue;
            }
            let set = plain_process_batch(&self.pipeline, item.sequence, &item.bytes)
                .unwrap_or_else(|e| ReportSet::failed(item.sequence, e.to_string()));
            out.outputs.push(OutboundItem {
                client_dir: item.client_dir.clone(),
                sequence: item.sequence,
                kind: FileKind::Plain,
                bytes: set.to_json(),
            });
        }
        Ok(out)
    }
}

/// Forwards sealed envelopes to the boundary process and routes the sealed
/// replies by their header.
pub struct SecureProcessor {
    host: EnclaveHost,
}

impl SecureProcessor {
    pub fn new(host: EnclaveHost) -> Self {
        Self { host }
    }

    pub fn into_host(self) -> EnclaveHost {
        self.host
    }
}

fn fatal(e: EnclaveError) -> EngineError {
    match e {
        EnclaveError::Died(why) => EngineError::BoundaryDied(why),
        other => EngineError::BoundaryDied(other.to_string()),
    }
}

impl BatchProcessor for SecureProcessor {
    fn mode(&self) -> Mode {
        Mode::Secure
    }

    fn process(&mut self, items: &[InboundItem]) -> Result<WindowOutcome, EngineError> {
        let mut out = WindowOutcome::default();
        let sealed: Vec<&[u8]> = items
            .iter()
            .filter(|i| i.kind == FileKind::Envelope)
            .map(|i| i.bytes.as_slice())
            .collect();
        out.rejected += items.len() - sealed.len();
        for reply in self.host.process_many(&sealed).map_err(fatal)? {
            let env = match reply {
                ProcessReply::Sealed(bytes) => SealedEnvelope::from_bytes(&bytes).map(|e| (e, bytes)),
                ProcessReply::Failed => {
                    out.rejected += 1;
                    continue;
                }
            };
            match env {
                Ok((env, bytes)) => out.outputs.push(OutboundItem {
                    client_dir: client_dir_name(&env.client_id_hash),
                    sequence: env.sequence,
                    kind: FileKind::Envelope,
                    bytes,
                }),
                Err(_) => return Err(EngineError::BoundaryDied("boundary returned a malformed envelope".into())),
            }
        }
        Ok(out)
    }

    fn attest(&mut self, request: &[u8]) -> Result<Option<Vec<u8>>, EngineError> {
        let request = match crate::secure::AttestationRequest::from_bytes(request) {
            Ok(r) => r,
            Err(_) => return Ok(None),
        };
        match self.host.attest(&request) {
            Ok(q) => Ok(Some(q.to_bytes())),
            Err(EnclaveError::AttestRefused) => Ok(None),
            Err(e) => Err(fatal(e)),
        }
    }

    fn check_health(&mut self) -> Result<(), EngineError> {
        if self.host.is_alive() {
            Ok(())
        } else {
            Err(EngineError::BoundaryDied("boundary process exited".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BatchRecord;
    use crate::hrv::HrvConfig;

    #[test]
    fn plain_answers_each_item() {
        let mut p = PlainProcessor::new(Pipeline::new(HrvConfig::default()).unwrap());
        let mut b = BatchRecord::new("x", 0);
        b.lines = (1..=5).map(|i| (i * 900, 900)).collect();
        let items = vec![
            InboundItem {
                client_dir: "aa".into(),
                sequence: 4,
                kind: FileKind::Plain,
                bytes: b.encode_payload(),
            },
            InboundItem {
                client_dir: "aa".into(),
                sequence: 5,
                kind: FileKind::Envelope,
                bytes: vec![1, 2, 3],
            },
        ];
        let out = p.process(&items).unwrap();
        assert_eq!(out.rejected, 1);
        assert_eq!(out.outputs.len(), 1);
        let set = ReportSet::from_json(&out.outputs[0].bytes).unwrap();
        assert_eq!((set.request_sequence, set.reports.len()), (4, 1));
    }
}
