//! The role behind each subcommand.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cardiogrid_core::enclave::{
    parse_bands, parse_grid, read_root_key, run_boundary, write_root_key, EnclaveError, EnclaveHost, EnclaveLauncher,
    EnclaveSpec, OverheadModel,
};
use cardiogrid_core::engine::{run_engine, share, EngineConfig, EngineError, MetricsWriter, PlainProcessor, SecureProcessor};
use cardiogrid_core::gateway::{
    broker_serve, run_client_package, AggregatorConfig, Backoff, BrokerConfig, FileDrop, PackageConfig,
    PackageSecurity, REFERENCE_WIRE_RATE,
};
use cardiogrid_core::secure::{client_id_hash, AttestationRoot, Measurement, PendingAttestation, RootPublicKey};
use cardiogrid_core::sensor::{ActivityPhase, Pacing, SensorConfig};
use cardiogrid_core::sweep::{
    calibrate, emit_report, summary_table, sweep, Calibration, CalibrationConfig, EngineOracle, Experiment,
    SweepConfig, Tolerance,
};
use cardiogrid_core::{HrvConfig, Mode};
use rand::rngs::OsRng;
use thiserror::Error;

use crate::config::{Config, ConfigError};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn enclave_failure(e: EnclaveError) -> Failure {
    match e {
        EnclaveError::Config(m) => Failure::Config(m),
        other => runtime(other),
    }
}

fn log_config(cfg: &Config) {
    log_config_at(cfg, log::Level::Info);
}

fn log_config_at(cfg: &Config, level: log::Level) {
    log::log!(level, "resolved configuration:");
    for line in cfg.to_string().lines() {
        log::log!(level, "  {line}");
    }
}

/// Raised on SIGINT or SIGTERM.
fn stop_flag() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || s.store(true, Ordering::Relaxed)) {
        log::warn!("cannot install signal handler: {e}");
    }
    stop
}

fn seconds(cfg: &Config, key: &str) -> Result<Option<Duration>, Failure> {
    let s: u64 = cfg.get(key)?;
    Ok((s > 0).then(|| Duration::from_secs(s)))
}

fn hrv_config(cfg: &Config) -> Result<HrvConfig, Failure> {
    Ok(HrvConfig {
        bands: parse_bands(cfg.str("analytics.bands")).map_err(|e| cfg.invalid("analytics.bands", e))?,
        grid: parse_grid(cfg.str("analytics.grid")).map_err(|e| cfg.invalid("analytics.grid", e))?,
    })
}

fn overhead(cfg: &Config) -> Result<OverheadModel, Failure> {
    OverheadModel::new(cfg.get("enclave.per_call_ms")?, cfg.get("enclave.per_kb_ms")?)
        .map_err(|e| cfg.invalid("enclave.per_kb_ms", e).into())
}

fn enclave_spec(cfg: &Config) -> Result<EnclaveSpec, Failure> {
    Ok(EnclaveSpec::new(cfg.path("general.root_key"), hrv_config(cfg)?, overhead(cfg)?))
}

fn launcher() -> Result<EnclaveLauncher, Failure> {
    let exe = std::env::current_exe().map_err(runtime)?;
    Ok(EnclaveLauncher::new(exe).with_prefix_args(&["enclave"]))
}

/// `enclave.measurement` when set, otherwise the measurement of the locally
/// configured pipeline.
fn expected_measurement(cfg: &Config) -> Result<Measurement, Failure> {
    let text = cfg.str("enclave.measurement");
    if text.is_empty() {
        return enclave_spec(cfg)?.measurement().map_err(enclave_failure);
    }
    let bytes = hex::decode(text).map_err(|e| cfg.invalid("enclave.measurement", e))?;
    bytes
        .try_into()
        .map_err(|_| cfg.invalid("enclave.measurement", "expected 32 bytes of hex").into())
}

fn root_secret(cfg: &Config) -> Result<AttestationRoot, Failure> {
    let p = cfg.path("general.root_key");
    read_root_key(&p).map_err(|e| Failure::Config(format!("root key {}: {e}", p.display())))
}

fn root_public(cfg: &Config) -> Result<RootPublicKey, Failure> {
    let p = cfg.path("general.root_pub");
    let bad = |why: String| Failure::Config(format!("root public key {}: {why}", p.display()));
    let text = std::fs::read_to_string(&p).map_err(|e| bad(e.to_string()))?;
    let bytes: [u8; 32] = hex::decode(text.trim())
        .map_err(|e| bad(e.to_string()))?
        .try_into()
        .map_err(|_| bad("expected 32 bytes of hex".into()))?;
    RootPublicKey::from_bytes(&bytes).map_err(|e| bad(e.to_string()))
}

/// Challenges a running boundary and checks its quote against `expected`.
fn self_attest(host: &mut EnclaveHost, expected: &Measurement, root: &RootPublicKey) -> Result<(), Failure> {
    let pending = PendingAttestation::new(&mut OsRng);
    let quote = host.attest(&pending.request()).map_err(runtime)?;
    pending
        .verify(&quote, expected, root, cardiogrid_core::unix_time_ms())
        .map_err(|e| Failure::Runtime(format!("boundary attestation failed: {e}")))?;
    Ok(())
}

/// `label:duration_s:bpm:jitter_ms` phases separated by `;`.
pub fn parse_phases(text: &str) -> Result<Vec<ActivityPhase>, String> {
    text.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let f: Vec<&str> = p.split(':').map(str::trim).collect();
            let [label, duration, bpm, jitter] = f[..] else {
                return Err(format!("phase {p:?}: expected label:duration_s:bpm:jitter_ms"));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("phase {p:?}: {s:?}: {e}"));
            Ok(ActivityPhase::new(label, num(duration)?, num(bpm)?, num(jitter)?))
        })
        .collect()
}

pub fn broker(cfg: &Config) -> Result<(), Failure> {
    log_config(cfg);
    let config = BrokerConfig {
        queue_depth: cfg.get("broker.queue_depth")?,
        max_packet_bytes: cfg.get("broker.max_packet_bytes")?,
    };
    let duration = seconds(cfg, "broker.duration_s")?;
    let stop = stop_flag();
    let handle = broker_serve(cfg.str("broker.listen"), config).map_err(runtime)?;
    let started = Instant::now();
    while !stop.load(Ordering::Relaxed) && duration.is_none_or(|d| started.elapsed() < d) {
        std::thread::sleep(Duration::from_millis(100));
    }
    let stats = handle.shutdown();
    log::info!(
        "broker: stopped; connections {} published {} delivered {} dropped {} protocol errors {}",
        stats.connections,
        stats.published,
        stats.delivered,
        stats.dropped,
        stats.protocol_errors
    );
    Ok(())
}

pub fn client(cfg: &Config) -> Result<(), Failure> {
    log_config(cfg);
    let id = cfg.str("client.id").to_owned();
    if id.is_empty() {
        return Err(cfg.invalid("client.id", "must not be empty").into());
    }
    let seed: u64 = cfg.get("general.seed")?;
    let hash = client_id_hash(&id);
    let sensor = SensorConfig {
        client_id: id.clone(),
        seed: seed ^ u64::from_be_bytes(hash[..8].try_into().expect("8 bytes")),
        phases: parse_phases(cfg.str("client.phases")).map_err(|e| cfg.invalid("client.phases", e))?,
        pacing: cfg.get::<Pacing>("client.pacing")?,
    };
    let mut pc = PackageConfig::new(cfg.str("client.broker"), cfg.path("general.drop_root"), sensor);
    pc.aggregator = AggregatorConfig {
        flush_interval_ms: cfg.get("client.flush_interval_ms")?,
        max_lines: cfg.get("client.max_lines")?,
    };
    pc.backoff = Backoff {
        base: Duration::from_millis(cfg.get("client.backoff_base_ms")?),
        cap: Duration::from_millis(cfg.get("client.backoff_cap_ms")?),
    };
    pc.queue_capacity = cfg.get("client.queue_capacity")?;
    pc.inbox_poll = Duration::from_millis(cfg.get("client.inbox_poll_ms")?);
    pc.drain_grace = Duration::from_secs(cfg.get("client.drain_grace_s")?);
    pc.duration = seconds(cfg, "client.duration_s")?;
    pc.journal = cfg.optional_path("client.journal");
    pc.archive = cfg.get("client.archive")?;
    pc.security = match cfg.get::<Mode>("client.mode")? {
        Mode::Secure => PackageSecurity::Secure {
            expected_measurement: expected_measurement(cfg)?,
            root: root_public(cfg)?,
            handshake_timeout: Duration::from_secs(cfg.get("client.handshake_timeout_s")?),
        },
        Mode::Plain => PackageSecurity::Plain,
    };
    let stop = stop_flag();
    let summary = run_client_package(pc, &stop).map_err(runtime)?;
    log::info!(
        "client: published {} samples, sent {} batches ({} bytes), received {} report sets ({} reports), quarantined {}",
        summary.published,
        summary.batches_sent,
        summary.wire_bytes,
        summary.sets_received,
        summary.reports_received,
        summary.quarantined
    );
    let (lo, hi) = REFERENCE_WIRE_RATE;
    log::info!("client: outbound wire rate {:.1} bytes/s", summary.wire_bytes_per_s);
    if !summary.wire_rate_in_reference() {
        log::warn!(
            "client: outbound wire rate {:.1} bytes/s is outside the {lo}-{hi} bytes/s reference",
            summary.wire_bytes_per_s
        );
    }
    Ok(())
}

pub fn server(cfg: &Config) -> Result<(), Failure> {
    log_config(cfg);
    let mode: Mode = cfg.get("server.mode")?;
    let interval_s: u64 = cfg.get("server.interval_s")?;
    if interval_s == 0 {
        return Err(cfg.invalid("server.interval_s", "must be positive").into());
    }
    let duration = seconds(cfg, "server.duration_s")?;
    let config = EngineConfig {
        interval: Duration::from_secs(interval_s),
        mode,
        workers: cfg.get("server.workers")?,
        poll: Duration::from_millis(cfg.get("server.poll_ms")?),
        warmup_intervals: cfg.get("server.warmup_intervals")?,
        max_intervals: duration.map(|d| d.as_secs().div_ceil(interval_s)),
    };
    let drop = FileDrop::open(cfg.path("general.drop_root"))
        .map_err(runtime)?
        .with_archive(cfg.get("server.archive")?);
    let spec = enclave_spec(cfg)?;
    let processors = match mode {
        Mode::Secure => {
            let root = root_secret(cfg)?.public_key();
            let expected = expected_measurement(cfg)?;
            let launcher = launcher()?;
            let mut host = match cfg.optional_path("server.capture") {
                Some(p) => EnclaveHost::spawn_with_capture(&launcher, &spec, &p),
                None => EnclaveHost::spawn(&launcher, &spec),
            }
            .map_err(enclave_failure)?;
            self_attest(&mut host, &expected, &root)?;
            log::info!("server: boundary pid {} attested, measurement {}", host.pid(), hex::encode(expected));
            vec![share(SecureProcessor::new(host))]
        }
        Mode::Plain => {
            let workers = config.workers.max(1);
            (0..workers)
                .map(|_| spec.pipeline().map(|p| share(PlainProcessor::new(p))))
                .collect::<Result<_, _>>()
                .map_err(enclave_failure)?
        }
    };
    let metrics = MetricsWriter::new(cfg.optional_path("server.metrics").as_deref(), false).map_err(runtime)?;
    let stop = stop_flag();
    let run = run_engine(&config, &drop, processors, Some(metrics), &stop).map_err(|e| match e {
        EngineError::Config(m) => Failure::Config(m),
        other => runtime(other),
    })?;
    let c = run.counters;
    log::info!(
        "server: received {} processed {} rejected {} outputs {} handshakes {}",
        c.received,
        c.processed,
        c.rejected,
        c.outputs,
        c.handshakes
    );
    match &run.stability {
        Some(s) => log::info!(
            "server: mean processing {:.1} ms per window after {} warmup window(s); {}",
            s.mean_processing_ms,
            s.warmup_intervals,
            if s.unstable { "UNSTABLE" } else { "stable" }
        ),
        None => log::info!("server: run too short to judge stability"),
    }
    Ok(())
}

pub fn enclave(cfg: &Config) -> Result<(), Failure> {
    log_config_at(cfg, log::Level::Debug);
    run_boundary(&enclave_spec(cfg)?).map_err(enclave_failure)
}

pub fn attest_check(cfg: &Config) -> Result<(), Failure> {
    log_config(cfg);
    let spec = enclave_spec(cfg)?;
    let root = root_secret(cfg)?.public_key();
    let expected = expected_measurement(cfg)?;
    let mut host = EnclaveHost::spawn(&launcher()?, &spec).map_err(enclave_failure)?;
    let checked = self_attest(&mut host, &expected, &root);
    host.shutdown().map_err(runtime)?;
    checked?;
    println!("{}", hex::encode(expected));
    Ok(())
}

pub fn keygen(cfg: &Config, force: bool) -> Result<(), Failure> {
    let (secret, public) = (cfg.path("general.root_key"), cfg.path("general.root_pub"));
    for p in [&secret, &public] {
        if p.exists() && !force {
            return Err(Failure::Config(format!("{} exists; pass --force to replace it", p.display())));
        }
    }
    let root = AttestationRoot::generate(&mut OsRng);
    write_root_key(&secret, &root).map_err(runtime)?;
    std::fs::write(&public, hex::encode(root.public_key().to_bytes()) + "\n").map_err(runtime)?;
    log::info!("keygen: wrote {} and {}", secret.display(), public.display());
    Ok(())
}

fn calibration_config(cfg: &Config) -> Result<CalibrationConfig, Failure> {
    Ok(CalibrationConfig {
        target_ratio: cfg.get("bench.target_ratio")?,
        rounds: cfg.get("bench.calibration_rounds")?,
        batches_per_round: cfg.get("bench.calibration_batches")?,
        seed: cfg.get("general.seed")?,
        interval_s: cfg.get("bench.interval_s")?,
        clients_target: cfg.get("bench.clients_target")?,
        load_target_bps: cfg.get("bench.load_target_bps")?,
        ..CalibrationConfig::default()
    })
}

fn run_calibration(cfg: &Config) -> Result<Calibration, Failure> {
    let spec = enclave_spec(cfg)?;
    let root = root_secret(cfg)?.public_key();
    let started = Instant::now();
    let c = calibrate(&launcher()?, &spec, &root, &calibration_config(cfg)?).map_err(|e| match e {
        cardiogrid_core::sweep::SweepError::Config(m) => Failure::Config(m),
        other => runtime(other),
    })?;
    log::info!(
        "calibration: {} in {:.1} s; secure/plain cost {:.2} and {:.2}",
        c.overhead.disclosure(),
        started.elapsed().as_secs_f64(),
        c.achieved_ratio[0],
        c.achieved_ratio[1]
    );
    Ok(c)
}

pub fn calibrate_overhead(cfg: &Config, out: Option<&Path>) -> Result<(), Failure> {
    log_config(cfg);
    let c = run_calibration(cfg)?;
    let fragment = format!(
        "enclave.per_call_ms = {}\nenclave.per_kb_ms = {}\n",
        c.overhead.per_call_ms, c.overhead.per_kb_ms
    );
    println!("{}", serde_json::to_string_pretty(&c).map_err(runtime)?);
    print!("{fragment}");
    if let Some(p) = out {
        std::fs::write(p, fragment).map_err(runtime)?;
        log::info!("calibrate: wrote {}", p.display());
    }
    Ok(())
}

fn sweep_config(cfg: &Config, experiment: Experiment) -> Result<SweepConfig, Failure> {
    let seed = cfg.get("general.seed")?;
    let mut sc = match experiment {
        Experiment::Clients => SweepConfig::clients(seed),
        Experiment::Load => SweepConfig::load(seed),
    };
    sc.run_duration_s = cfg.get("bench.duration_s")?;
    sc.interval_s = cfg.get("bench.interval_s")?;
    sc.warmup_intervals = cfg.get("bench.warmup_intervals")?;
    sc.modes = cfg
        .str("bench.modes")
        .split(',')
        .map(|m| m.trim().parse::<Mode>())
        .collect::<Result<_, _>>()
        .map_err(|e| cfg.invalid("bench.modes", e))?;
    match experiment {
        Experiment::Clients => {
            sc.lower = cfg.get("bench.clients_lower")?;
            sc.upper = cfg.get("bench.clients_upper")?;
            sc.tolerance = Tolerance::Absolute(cfg.get("bench.clients_tolerance")?);
        }
        Experiment::Load => {
            sc.lower = cfg.get("bench.load_lower")?;
            sc.upper = cfg.get("bench.load_upper")?;
            sc.tolerance = Tolerance::Relative(cfg.get("bench.load_tolerance")?);
        }
    }
    sc.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(sc)
}

pub fn bench(cfg: &Config, experiment: Experiment) -> Result<(), Failure> {
    log_config(cfg);
    let sc = sweep_config(cfg, experiment)?;
    let out_dir: PathBuf = cfg.path("bench.out_dir");
    let mut spec = enclave_spec(cfg)?;
    let (overhead, time_scale) = if cfg.get::<bool>("bench.calibrate")? {
        let c = run_calibration(cfg)?;
        std::fs::create_dir_all(&out_dir).map_err(runtime)?;
        std::fs::write(
            out_dir.join("calibration.json"),
            serde_json::to_vec_pretty(&c).map_err(runtime)?,
        )
        .map_err(runtime)?;
        let scale = match experiment {
            Experiment::Clients => c.clients_time_scale,
            Experiment::Load => c.load_time_scale,
        };
        (c.overhead, scale)
    } else {
        let scale: f64 = cfg.get("bench.time_scale")?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(cfg
                .invalid("bench.time_scale", "must be positive when calibration is off")
                .into());
        }
        (spec.overhead, scale)
    };
    spec.overhead = overhead;
    let mut oracle = EngineOracle {
        launcher: launcher()?,
        spec,
        root: root_secret(cfg)?.public_key(),
        time_scale,
    };
    let started = Instant::now();
    let result = sweep(&mut oracle, &sc, overhead, time_scale).map_err(runtime)?;
    log::info!("bench: {experiment} sweep finished in {:.1} s", started.elapsed().as_secs_f64());
    let results = [result];
    let files = emit_report(&results, &out_dir).map_err(runtime)?;
    print!("{}", summary_table(&results));
    log::info!(
        "bench: wrote {}, {} and {}",
        files.csv.display(),
        files.summary.display(),
        files.json.display()
    );
    Ok(())
}
