use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hrv::{HrvError, RRSample, RRWindow, SampleValidator};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("batch payload truncated")]
    Truncated,
    #[error("client id is not UTF-8")]
    BadClientId,
    #[error("batch body is not UTF-8")]
    BadBody,
}

/// Samples one client's subscriber accumulated between two flushes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub client_id: String,
    /// `(r_timestamp_ms, rr_interval_ms)` in timestamp order.
    pub lines: Vec<(u64, u32)>,
    pub created_at_ms: u64,
}

/// One CSV line: `<r_timestamp_ms>,<rr_interval_ms>\n`.
pub fn csv_line(r_timestamp_ms: u64, rr_interval_ms: u32) -> String {
    format!("{r_timestamp_ms},{rr_interval_ms}\n")
}

/// Parses `"<t>,<rr>"` with optional trailing newline; the format both of
/// sensor publishes and of batch lines.
pub fn parse_line(line: &str) -> Option<(u64, u32)> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let (t, rr) = line.split_once(',')?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(t) || !digits(rr) {
        return None;
    }
    Some((t.parse().ok()?, rr.parse().ok()?))
}

impl BatchRecord {
    pub fn new(client_id: impl Into<String>, created_at_ms: u64) -> Self {
        Self {
            client_id: client_id.into(),
            lines: Vec::new(),
            created_at_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn to_csv(&self) -> String {
        self.lines.iter().map(|&(t, rr)| csv_line(t, rr)).collect()
    }

    /// Parses CSV text, returning the good lines and how many were skipped.
    pub fn parse_csv(text: &str) -> (Vec<(u64, u32)>, usize) {
        let mut skipped = 0;
        let lines = text
            .lines()
            .filter(|l| !l.is_empty())
            .filter_map(|l| {
                let parsed = parse_line(l);
                skipped += usize::from(parsed.is_none());
                parsed
            })
            .collect();
        (lines, skipped)
    }

    /// Serialized form carried inside envelopes:
    /// `u16 id length ‖ client id ‖ u64 created_at ‖ CSV body`, big-endian.
    pub fn encode_payload(&self) -> Vec<u8> {
        let id = self.client_id.as_bytes();
        let csv = self.to_csv();
        let mut out = Vec::with_capacity(2 + id.len() + 8 + csv.len());
        out.extend_from_slice(&(id.len() as u16).to_be_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.created_at_ms.to_be_bytes());
        out.extend_from_slice(csv.as_bytes());
        out
    }

    /// Inverse of [`encode_payload`](Self::encode_payload). Malformed CSV
    /// lines are skipped and counted rather than failing the batch.
    pub fn decode_payload(bytes: &[u8]) -> Result<(Self, usize), ParseError> {
        if bytes.len() < 2 {
            return Err(ParseError::Truncated);
        }
        let id_len = usize::from(u16::from_be_bytes([bytes[0], bytes[1]]));
        let rest = &bytes[2..];
        if rest.len() < id_len + 8 {
            return Err(ParseError::Truncated);
        }
        let client_id = std::str::from_utf8(&rest[..id_len])
            .map_err(|_| ParseError::BadClientId)?
            .to_owned();
        let created_at_ms = u64::from_be_bytes(rest[id_len..id_len + 8].try_into().expect("8 bytes"));
        let body = std::str::from_utf8(&rest[id_len + 8..]).map_err(|_| ParseError::BadBody)?;
        let (lines, skipped) = Self::parse_csv(body);
        Ok((
            Self {
                client_id,
                lines,
                created_at_ms,
            },
            skipped,
        ))
    }

    /// Validated samples of this batch as an analysis window, plus the number
    /// of lines validation rejected.
    pub fn to_window(&self) -> Result<(RRWindow, usize), HrvError> {
        let mut validator = SampleValidator::new();
        let samples: Vec<RRSample> = self
            .lines
            .iter()
            .filter_map(|&(t, rr)| validator.validate(RRSample::new(self.client_id.clone(), t, rr)).ok())
            .collect();
        let rejected = self.lines.len() - samples.len();
        Ok((RRWindow::spanning(self.client_id.clone(), samples)?, rejected))
    }
}
