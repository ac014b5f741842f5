//! Wall-clock micro-batch scheduler over the file drop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;

use super::metrics::{resident_set_kb, BatchMetrics, MetricsWriter, StabilityReport};
use super::processor::{BatchProcessor, InboundItem};
use super::{EngineError, Mode};
use crate::gateway::filedrop::{FileDrop, FileKind, Side, ATTEST_QUOTE_FILE, ATTEST_REQUEST_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub interval: Duration,
    pub mode: Mode,
    pub workers: usize,
    /// How often the outbox is scanned.
    pub poll: Duration,
    pub warmup_intervals: usize,
    /// Stop after this many windows; `None` runs until stopped.
    pub max_intervals: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            interval: Duration::from_secs(10),
            mode: Mode::Secure,
            workers: 1,
            poll: Duration::from_millis(50),
            warmup_intervals: 2,
            max_intervals: None,
        }
    }
}

/// Per-run accounting: every received input is processed or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineCounters {
    pub received: u64,
    pub processed: u64,
    pub rejected: u64,
    pub outputs: u64,
    pub handshakes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineRun {
    pub started_unix_ms: u64,
    pub metrics: Vec<BatchMetrics>,
    pub counters: EngineCounters,
    /// `None` when the run was too short to judge.
    pub stability: Option<StabilityReport>,
}

pub type SharedProcessor = Arc<Mutex<Box<dyn BatchProcessor>>>;

pub fn share(p: impl BatchProcessor + 'static) -> SharedProcessor {
    Arc::new(Mutex::new(Box::new(p)))
}

struct ClosedWindow {
    index: u64,
    items: Vec<InboundItem>,
    closed_at: Instant,
    queue_depth: usize,
}

struct WindowDone {
    index: u64,
    record_count: usize,
    input_bytes: u64,
    processing: Duration,
    queue_depth: usize,
    processed: u64,
    rejected: u64,
    outputs: u64,
}

/// Handles pending attestation requests; returns how many were answered.
fn relay_handshakes(drop: &FileDrop, processor: &SharedProcessor) -> Result<u64, EngineError> {
    let mut answered = 0;
    for dir in drop.client_dirs(Side::Outbox)? {
        let Some(request) = drop.take_named(Side::Outbox, &dir, ATTEST_REQUEST_FILE)? else {
            continue;
        };
        let quote = processor.lock().expect("processor lock").attest(&request)?;
        match quote {
            Some(q) => {
                drop.deposit_named(Side::Inbox, &dir, ATTEST_QUOTE_FILE, &q)?;
                answered += 1;
            }
            None => log::warn!("engine: attestation request from {dir} not answered"),
        }
    }
    Ok(answered)
}

fn collect(drop: &FileDrop, kind: FileKind, into: &mut Vec<InboundItem>) -> Result<(), EngineError> {
    for entry in drop.list_all(Side::Outbox)? {
        if entry.kind != kind {
            continue;
        }
        let bytes = drop.take(&entry)?;
        into.push(InboundItem {
            client_dir: entry.client_dir,
            sequence: entry.sequence,
            kind: entry.kind,
            bytes,
        });
    }
    Ok(())
}

/// Runs the engine until `stop` is raised or `max_intervals` windows have
/// closed, then drains every closed window.
pub fn run_engine(
    config: &EngineConfig,
    drop: &FileDrop,
    processors: Vec<SharedProcessor>,
    mut metrics_out: Option<MetricsWriter>,
    stop: &AtomicBool,
) -> Result<EngineRun, EngineError> {
    if processors.is_empty() || processors.len() != config.workers.max(1) {
        return Err(EngineError::Config(format!(
            "{} processors for {} workers",
            processors.len(),
            config.workers
        )));
    }
    if config.mode == Mode::Secure && processors.len() > 1 {
        return Err(EngineError::Config(
            "secure mode runs one boundary, so exactly one worker".into(),
        ));
    }
    let kind = match config.mode {
        Mode::Secure => FileKind::Envelope,
        Mode::Plain => FileKind::Plain,
    };
    let fatal = AtomicBool::new(false);
    let first_error: Mutex<Option<EngineError>> = Mutex::new(None);
    let (window_tx, window_rx) = unbounded::<ClosedWindow>();
    let (done_tx, done_rx) = unbounded::<WindowDone>();
    let started = Instant::now();
    let started_unix_ms = crate::unix_time_ms();
    log::info!("engine: started at unix_ms={started_unix_ms} mode={} interval={:?}", config.mode, config.interval);

    let mut counters = EngineCounters::default();
    let mut metrics = Vec::new();

    thread::scope(|s| -> Result<(), EngineError> {
        for (w, proc_) in processors.iter().enumerate() {
            let window_rx = window_rx.clone();
            let done_tx = done_tx.clone();
            let (fatal, first_error) = (&fatal, &first_error);
            let proc_ = Arc::clone(proc_);
            s.spawn(move || {
                for win in window_rx.iter() {
                    if fatal.load(Ordering::Relaxed) {
                        continue;
                    }
                    let result = proc_.lock().expect("processor lock").process(&win.items);
                    match result.and_then(|outcome| {
                        for o in &outcome.outputs {
                            drop.deposit(Side::Inbox, &o.client_dir, o.sequence, o.kind, &o.bytes)?;
                        }
                        Ok(outcome)
                    }) {
                        Ok(outcome) => {
                            let processed = (win.items.len() - outcome.rejected) as u64;
                            let _ = done_tx.send(WindowDone {
                                index: win.index,
                                record_count: win.items.len(),
                                input_bytes: win.items.iter().map(|i| i.bytes.len() as u64).sum(),
                                processing: win.closed_at.elapsed(),
                                queue_depth: win.queue_depth,
                                processed,
                                rejected: outcome.rejected as u64,
                                outputs: outcome.outputs.len() as u64,
                            });
                        }
                        Err(e) => {
                            log::error!("engine: worker {w}: {e}");
                            fatal.store(true, Ordering::Relaxed);
                            first_error.lock().expect("error lock").get_or_insert(e);
                        }
                    }
                }
            });
        }
        drop_sender(done_tx);

        let mut record_done = |d: WindowDone, counters: &mut EngineCounters, metrics: &mut Vec<BatchMetrics>| {
            counters.processed += d.processed;
            counters.rejected += d.rejected;
            counters.outputs += d.outputs;
            let m = BatchMetrics {
                interval_index: d.index,
                record_count: d.record_count,
                input_bytes: d.input_bytes,
                processing_ms: d.processing.as_secs_f64() * 1000.0,
                queue_depth: d.queue_depth,
                rss_kb: resident_set_kb(),
            };
            if let Some(w) = &mut metrics_out {
                if let Err(e) = w.record(&m) {
                    log::warn!("engine: metrics write failed: {e}");
                }
            }
            metrics.push(m);
        };

        let mut index = 0u64;
        let mut in_flight = 0usize;
        let mut current = Vec::new();
        let scheduler_result = (|| -> Result<(), EngineError> {
            loop {
                let close_at = started + config.interval * (index as u32 + 1);
                let mut stopping = false;
                loop {
                    if fatal.load(Ordering::Relaxed) {
                        return Ok(());
                    }
                    counters.handshakes += relay_handshakes(drop, &processors[0])?;
                    collect(drop, kind, &mut current)?;
                    if let Ok(mut p) = processors[0].try_lock() {
                        p.check_health()?;
                    }
                    while let Ok(d) = done_rx.try_recv() {
                        in_flight -= 1;
                        record_done(d, &mut counters, &mut metrics);
                    }
                    let now = Instant::now();
                    if now >= close_at {
                        break;
                    }
                    if stop.load(Ordering::Relaxed) {
                        stopping = true;
                        break;
                    }
                    thread::sleep(config.poll.min(close_at - now));
                }
                counters.received += current.len() as u64;
                let win = ClosedWindow {
                    index,
                    items: std::mem::take(&mut current),
                    closed_at: Instant::now(),
                    queue_depth: in_flight,
                };
                log::debug!("engine: window {index} closed with {} input(s)", win.items.len());
                in_flight += 1;
                let _ = window_tx.send(win);
                index += 1;
                if stopping || config.max_intervals.is_some_and(|m| index >= m) {
                    return Ok(());
                }
            }
        })();
        drop_sender(window_tx);
        for d in done_rx.iter() {
            record_done(d, &mut counters, &mut metrics);
        }
        scheduler_result
    })
    .inspect_err(|_| fatal.store(true, Ordering::Relaxed))?;

    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }
    metrics.sort_by_key(|m| m.interval_index);
    let stability = StabilityReport::from_metrics(
        config.mode,
        config.interval.as_secs_f64(),
        config.warmup_intervals,
        metrics.clone(),
    )
    .ok();
    log::info!(
        "engine: {} window(s), received {} processed {} rejected {}",
        metrics.len(),
        counters.received,
        counters.processed,
        counters.rejected
    );
    Ok(EngineRun {
        started_unix_ms,
        metrics,
        counters,
        stability,
    })
}

fn drop_sender<T>(tx: crossbeam_channel::Sender<T>) {
    std::mem::drop(tx);
}
