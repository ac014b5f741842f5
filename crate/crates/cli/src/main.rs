//! `cardiogrid`: every role of the pipeline behind one executable.

mod config;
mod roles;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use roles::Failure;

#[derive(Debug, Parser)]
#[command(name = "cardiogrid", version, about = "Privacy-preserving heart-rate-variability stream processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand accepts.
#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Config file of `section.key = value` lines (default: $CARDIOGRID_CONFIG).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (general.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the MQTT-subset broker.
    Broker {
        #[command(flatten)]
        common: Common,
        /// Listen address (broker.listen).
        #[arg(long)]
        listen: Option<String>,
        /// Stop after this many seconds; 0 runs until interrupted (broker.duration_s).
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Run one client package: sensor, subscriber, producer and consumer.
    Client {
        #[command(flatten)]
        common: Common,
        /// Client identifier (client.id).
        #[arg(long)]
        id: Option<String>,
        /// Broker address (client.broker).
        #[arg(long)]
        broker: Option<String>,
        /// secure or plain (client.mode).
        #[arg(long)]
        mode: Option<String>,
        /// File-drop root (general.drop_root).
        #[arg(long)]
        drop_root: Option<PathBuf>,
        /// Stop sensing after this many seconds; 0 runs the configured phases (client.duration_s).
        #[arg(long)]
        duration: Option<u64>,
        /// JSON-lines journal of sent payloads and received reports (client.journal).
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Run the micro-batch engine, spawning the trusted boundary in secure mode.
    Server {
        #[command(flatten)]
        common: Common,
        /// secure or plain (server.mode).
        #[arg(long)]
        mode: Option<String>,
        /// File-drop root (general.drop_root).
        #[arg(long)]
        drop_root: Option<PathBuf>,
        /// Batch interval in seconds (server.interval_s).
        #[arg(long)]
        interval: Option<u64>,
        /// Stop after this many seconds; 0 runs until interrupted (server.duration_s).
        #[arg(long)]
        duration: Option<u64>,
        /// Per-batch metrics file (server.metrics).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the trusted boundary on stdin/stdout (normally started by `server`).
    Enclave {
        #[command(flatten)]
        common: Common,
        /// Attestation root secret (general.root_key).
        #[arg(long)]
        root_key_file: Option<PathBuf>,
        /// Emulated cost per call in ms (enclave.per_call_ms).
        #[arg(long)]
        per_call_ms: Option<f64>,
        /// Emulated cost per KiB of sealed input in ms (enclave.per_kb_ms).
        #[arg(long)]
        per_kb_ms: Option<f64>,
        /// Six comma-separated band edges in Hz (analytics.bands).
        #[arg(long)]
        bands: Option<String>,
        /// start,end,step of the frequency grid in Hz (analytics.grid).
        #[arg(long)]
        grid: Option<String>,
    },
    /// Stability sweeps comparing secure and plain processing.
    Bench {
        #[command(subcommand)]
        experiment: BenchCommand,
    },
    /// Fit the emulated boundary overhead to a target secure/plain cost ratio.
    CalibrateOverhead {
        #[command(flatten)]
        common: Common,
        /// Write the fitted `enclave.*` keys to this config fragment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attest a freshly started boundary and print its measurement.
    AttestCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Generate the attestation root key pair (general.root_key, general.root_pub).
    Keygen {
        #[command(flatten)]
        common: Common,
        /// Replace existing key files.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Args, Clone)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Seconds of stream processing per point (bench.duration_s).
    #[arg(long)]
    duration: Option<u64>,
    /// Report directory (bench.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Largest number of ~1 Hz clients each mode sustains.
    Clients(BenchArgs),
    /// Largest single-client input load in bytes/s each mode sustains.
    Load(BenchArgs),
}

fn init_logging(role: &'static str) {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(move |buf, record| writeln!(buf, "[{role}] {} {}", record.level(), record.args()))
        .init();
}

fn resolve(common: &Common, flags: impl FnOnce(&mut Config) -> Result<(), config::ConfigError>) -> Result<Config, Failure> {
    let mut cfg = Config::load(common.config.as_deref(), &common.set)?;
    flags(&mut cfg)?;
    cfg.flag("general.seed", common.seed)?;
    Ok(cfg)
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Broker { common, listen, duration } => {
            init_logging("broker");
            let cfg = resolve(&common, |c| {
                c.flag("broker.listen", listen)?;
                c.flag("broker.duration_s", duration)
            })?;
            roles::broker(&cfg)
        }
        Command::Client {
            common,
            id,
            broker,
            mode,
            drop_root,
            duration,
            journal,
        } => {
            init_logging("client");
            let cfg = resolve(&common, |c| {
                c.flag("client.id", id)?;
                c.flag("client.broker", broker)?;
                c.flag("client.mode", mode)?;
                c.flag("general.drop_root", path_flag(&drop_root))?;
                c.flag("client.duration_s", duration)?;
                c.flag("client.journal", path_flag(&journal))
            })?;
            roles::client(&cfg)
        }
        Command::Server {
            common,
            mode,
            drop_root,
            interval,
            duration,
            metrics,
        } => {
            init_logging("server");
            let cfg = resolve(&common, |c| {
                c.flag("server.mode", mode)?;
                c.flag("general.drop_root", path_flag(&drop_root))?;
                c.flag("server.interval_s", interval)?;
                c.flag("server.duration_s", duration)?;
                c.flag("server.metrics", path_flag(&metrics))
            })?;
            roles::server(&cfg)
        }
        Command::Enclave {
            common,
            root_key_file,
            per_call_ms,
            per_kb_ms,
            bands,
            grid,
        } => {
            init_logging("enclave");
            let cfg = resolve(&common, |c| {
                c.flag("general.root_key", path_flag(&root_key_file))?;
                c.flag("enclave.per_call_ms", per_call_ms)?;
                c.flag("enclave.per_kb_ms", per_kb_ms)?;
                c.flag("analytics.bands", bands)?;
                c.flag("analytics.grid", grid)
            })?;
            roles::enclave(&cfg)
        }
        Command::Bench { experiment } => {
            init_logging("bench");
            let (experiment, args) = match experiment {
                BenchCommand::Clients(a) => (cardiogrid_core::sweep::Experiment::Clients, a),
                BenchCommand::Load(a) => (cardiogrid_core::sweep::Experiment::Load, a),
            };
            let cfg = resolve(&args.common, |c| {
                c.flag("bench.duration_s", args.duration)?;
                c.flag("bench.out_dir", path_flag(&args.out))
            })?;
            roles::bench(&cfg, experiment)
        }
        Command::CalibrateOverhead { common, out } => {
            init_logging("calibrate");
            let cfg = resolve(&common, |_| Ok(()))?;
            roles::calibrate_overhead(&cfg, out.as_deref())
        }
        Command::AttestCheck { common } => {
            init_logging("attest");
            let cfg = resolve(&common, |_| Ok(()))?;
            roles::attest_check(&cfg)
        }
        Command::Keygen { common, force } => {
            init_logging("keygen");
            let cfg = resolve(&common, |_| Ok(()))?;
            roles::keygen(&cfg, force)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{f}");
            ExitCode::from(f.exit_code())
        }
    }
}
