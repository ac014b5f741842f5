//! Subscriber-side batching of published samples.

use std::collections::BTreeMap;

use super::batch::{parse_line, BatchRecord};

pub const TOPIC_PREFIX: &str = "sensors/";
pub const TOPIC_SUFFIX: &str = "/rr";

pub fn sample_topic(client_id: &str) -> String {
    format!("{TOPIC_PREFIX}{client_id}{TOPIC_SUFFIX}")
}

pub fn client_of_topic(topic: &str) -> Option<&str> {
    topic
        .strip_prefix(TOPIC_PREFIX)?
        .strip_suffix(TOPIC_SUFFIX)
        .filter(|id| !id.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregatorConfig {
    pub flush_interval_ms: u64,
    pub max_lines: usize,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            flush_interval_ms: 5_000,
            max_lines: 64,
        }
    }
}

/// Per-client sample accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClientCounts {
    pub received: u64,
    pub flushed_lines: u64,
    pub malformed: u64,
}

#[derive(Debug)]
struct Pending {
    record: BatchRecord,
    opened_ms: u64,
}

/// Accumulates samples per client and cuts a [`BatchRecord`] when the batch
/// is `flush_interval_ms` old or holds `max_lines`, whichever comes first.
/// Time is supplied by the caller in milliseconds so the same logic runs
/// against the wall clock or a simulated one.
#[derive(Debug)]
pub struct Aggregator {
    config: AggregatorConfig,
    pending: BTreeMap<String, Pending>,
    counts: BTreeMap<String, ClientCounts>,
    unroutable: u64,
}

impl Aggregator {
    pub fn new(config: AggregatorConfig) -> Self {
        assert!(config.max_lines > 0, "max_lines must be positive");
        Self {
            config,
            pending: BTreeMap::new(),
            counts: BTreeMap::new(),
            unroutable: 0,
        }
    }

    /// Handles one published message; returns a batch if it filled up.
    pub fn push(&mut self, topic: &str, payload: &[u8], now_ms: u64) -> Option<BatchRecord> {
        let Some(client_id) = client_of_topic(topic) else {
            self.unroutable += 1;
            return None;
        };
        let counts = self.counts.entry(client_id.to_owned()).or_default();
        counts.received += 1;
        let Some(line) = std::str::from_utf8(payload).ok().and_then(parse_line) else {
            counts.malformed += 1;
            return None;
        };
        self.push_line(client_id, line, now_ms)
    }

    /// Adds an already-parsed sample line for `client_id`.
    pub fn push_line(&mut self, client_id: &str, line: (u64, u32), now_ms: u64) -> Option<BatchRecord> {
        let pending = self
            .pending
            .entry(client_id.to_owned())
            .or_insert_with(|| Pending {
                record: BatchRecord::new(client_id, now_ms),
                opened_ms: now_ms,
            });
        pending.record.lines.push(line);
        if pending.record.len() >= self.config.max_lines {
            let p = self.pending.remove(client_id).expect("entry present");
            return Some(self.finish(p.record, now_ms));
        }
        None
    }

    fn finish(&mut self, mut record: BatchRecord, now_ms: u64) -> BatchRecord {
        record.created_at_ms = now_ms;
        let counts = self.counts.entry(record.client_id.clone()).or_default();
        counts.flushed_lines += record.len() as u64;
        record
    }

    /// Cuts every batch whose age reached the flush interval.
    pub fn poll(&mut self, now_ms: u64) -> Vec<BatchRecord> {
        let due: Vec<String> = self
            .pending
            .iter()
            .filter(|(_, p)| now_ms.saturating_sub(p.opened_ms) >= self.config.flush_interval_ms)
            .map(|(k, _)| k.clone())
            .collect();
        let mut out = Vec::with_capacity(due.len());
        for k in due {
            if let Some(p) = self.pending.remove(&k) {
                out.push(self.finish(p.record, now_ms));
            }
        }
        out
    }

    /// Cuts everything still pending, regardless of age.
    pub fn flush_all(&mut self, now_ms: u64) -> Vec<BatchRecord> {
        let pending = std::mem::take(&mut self.pending);
        pending.into_values().map(|p| self.finish(p.record, now_ms)).collect()
    }

    /// Earliest time at which [`poll`](Self::poll) would cut something.
    pub fn next_deadline_ms(&self) -> Option<u64> {
        self.pending
            .values()
            .map(|p| p.opened_ms + self.config.flush_interval_ms)
            .min()
    }

    pub fn counts(&self, client_id: &str) -> ClientCounts {
        self.counts.get(client_id).copied().unwrap_or_default()
    }

    pub fn pending_lines(&self, client_id: &str) -> usize {
        self.pending.get(client_id).map_or(0, |p| p.record.len())
    }

    pub fn unroutable(&self) -> u64 {
        self.unroutable
    }
}
