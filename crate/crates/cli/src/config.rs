//! Flat `section.key = value` configuration with defaults, file, `--set`
//! and flag layers, later layers winning.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CARDIOGRID_CONFIG";

/// Every accepted key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("general.seed", "1"),
    ("general.drop_root", "cardiogrid-drop"),
    ("general.root_key", "root.key"),
    ("general.root_pub", "root.pub"),
    ("analytics.bands", "0.0033,0.04,0.04,0.15,0.15,0.4"),
    ("analytics.grid", "0.0033,0.4,0.002"),
    ("enclave.per_call_ms", "0"),
    ("enclave.per_kb_ms", "0"),
    ("enclave.measurement", ""),
    ("broker.listen", "127.0.0.1:1883"),
    ("broker.queue_depth", "1000"),
    ("broker.max_packet_bytes", "1048576"),
    ("broker.duration_s", "0"),
    ("client.id", "client-1"),
    ("client.broker", "127.0.0.1:1883"),
    ("client.mode", "secure"),
    ("client.pacing", "realtime"),
    ("client.phases", "rest:300:70:30;walk:300:105:20;rest:600:72:30"),
    ("client.duration_s", "0"),
    ("client.flush_interval_ms", "5000"),
    ("client.max_lines", "64"),
    ("client.queue_capacity", "1024"),
    ("client.handshake_timeout_s", "60"),
    ("client.backoff_base_ms", "1000"),
    ("client.backoff_cap_ms", "30000"),
    ("client.inbox_poll_ms", "100"),
    ("client.drain_grace_s", "15"),
    ("client.journal", ""),
    ("client.archive", "false"),
    ("server.mode", "secure"),
    ("server.interval_s", "10"),
    ("server.workers", "1"),
    ("server.warmup_intervals", "2"),
    ("server.poll_ms", "50"),
    ("server.duration_s", "0"),
    ("server.metrics", ""),
    ("server.capture", ""),
    ("server.archive", "false"),
    ("bench.duration_s", "120"),
    ("bench.interval_s", "10"),
    ("bench.warmup_intervals", "2"),
    ("bench.modes", "secure,plain"),
    ("bench.out_dir", "bench-report"),
    ("bench.clients_lower", "1"),
    ("bench.clients_upper", "4096"),
    ("bench.clients_tolerance", "4"),
    ("bench.load_lower", "64"),
    ("bench.load_upper", "16777216"),
    ("bench.load_tolerance", "0.10"),
    ("bench.calibrate", "true"),
    ("bench.time_scale", "0"),
    ("bench.target_ratio", "2"),
    ("bench.clients_target", "225"),
    ("bench.load_target_bps", "32000"),
    ("bench.calibration_rounds", "7"),
    ("bench.calibration_batches", "200"),
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `section.key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("{key}: invalid value {value:?}: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("--set expects key=value, got {0:?}")]
    BadOverride(String),
}

/// Resolved configuration. Values stay textual until a role asks for them
/// typed.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect(),
        }
    }
}

impl Config {
    /// Defaults, then `path` (or the file named by the environment), then
    /// `--set` pairs.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        if let Some(p) = path {
            let text = std::fs::read_to_string(&p).map_err(|e| ConfigError::Read {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?;
            cfg.merge_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Merges `section.key = value` lines. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_owned(),
                line: n + 1,
            })?;
            let k = k.trim();
            if k.split('.').count() != 2 || k.split('.').any(str::is_empty) {
                return Err(ConfigError::Syntax {
                    path: origin.to_owned(),
                    line: n + 1,
                });
            }
            self.set(k, v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_owned())),
        }
    }

    /// Applies a flag value when the flag was given.
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), ConfigError> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map_or_else(|| panic!("unregistered key {key}"), String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self.str(key);
        v.parse().map_err(|e: T::Err| self.invalid(key, e))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    /// `None` for an empty value.
    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        Some(self.str(key)).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn invalid(&self, key: &str, reason: impl fmt::Display) -> ConfigError {
        ConfigError::Invalid {
            key: key.to_owned(),
            value: self.str(key).to_owned(),
            reason: reason.to_string(),
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
