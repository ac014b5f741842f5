//! Untrusted-host side of the boundary: spawning the process and talking to
//! it over its stdin/stdout.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::overhead::OverheadModel;
use super::pipeline::Pipeline;
use super::protocol::{
    read_frame, write_frame, OP_ATTEST, OP_ATTEST_REPLY, OP_PROCESS, OP_PROCESS_REPLY, OP_SHUTDOWN, STATUS_OK,
};
use crate::hrv::{Band, FrequencyBands, GridSpec, HrvConfig};
use crate::secure::{AttestationQuote, AttestationRequest, AttestationRoot, Measurement};

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error("cannot start boundary process: {0}")]
    SpawnFailure(io::Error),
    #[error("boundary process died: {0}")]
    Died(String),
    #[error("boundary protocol violation: {0}")]
    Protocol(String),
    #[error("boundary refused the attestation request")]
    AttestRefused,
    #[error("invalid boundary configuration: {0}")]
    Config(String),
}

/// Everything the boundary process is started with.
#[derive(Debug, Clone, PartialEq)]
pub struct EnclaveSpec {
    pub root_key_file: PathBuf,
    pub hrv: HrvConfig,
    pub overhead: OverheadModel,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N], EnclaveError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| EnclaveError::Config(format!("{what}: {e}")))?;
    v.try_into()
        .map_err(|_| EnclaveError::Config(format!("{what}: expected {N} comma-separated numbers")))
}

pub fn parse_bands(s: &str) -> Result<FrequencyBands, EnclaveError> {
    let [a, b, c, d, e, f] = floats::<6>(s, "bands")?;
    FrequencyBands::new(Band::new(a, b), Band::new(c, d), Band::new(e, f)).map_err(|e| EnclaveError::Config(e.to_string()))
}

pub fn parse_grid(s: &str) -> Result<GridSpec, EnclaveError> {
    let [start_hz, end_hz, step_hz] = floats::<3>(s, "grid")?;
    let g = GridSpec {
        start_hz,
        end_hz,
        step_hz,
    };
    g.frequencies().map_err(|e| EnclaveError::Config(e.to_string()))?;
    Ok(g)
}

pub fn format_bands(b: &FrequencyBands) -> String {
    join(&[b.vlf.low_hz, b.vlf.high_hz, b.lf.low_hz, b.lf.high_hz, b.hf.low_hz, b.hf.high_hz])
}

pub fn format_grid(g: &GridSpec) -> String {
    join(&[g.start_hz, g.end_hz, g.step_hz])
}

impl EnclaveSpec {
    pub fn new(root_key_file: impl Into<PathBuf>, hrv: HrvConfig, overhead: OverheadModel) -> Self {
        Self {
            root_key_file: root_key_file.into(),
            hrv,
            overhead,
        }
    }

    /// Command-line form understood by [`EnclaveSpec::from_args`].
    pub fn to_args(&self) -> Vec<String> {
        vec![
            "--root-key-file".into(),
            self.root_key_file.display().to_string(),
            "--per-call-ms".into(),
            self.overhead.per_call_ms.to_string(),
            "--per-kb-ms".into(),
            self.overhead.per_kb_ms.to_string(),
            "--bands".into(),
            format_bands(&self.hrv.bands),
            "--grid".into(),
            format_grid(&self.hrv.grid),
        ]
    }

    pub fn from_args<I: IntoIterator<Item = String>>(args: I) -> Result<Self, EnclaveError> {
        let mut root_key_file = None;
        let mut hrv = HrvConfig::default();
        let (mut per_call, mut per_kb) = (0.0, 0.0);
        let mut it = args.into_iter();
        while let Some(flag) = it.next() {
            let mut value = || it.next().ok_or_else(|| EnclaveError::Config(format!("{flag} needs a value")));
            let num = |v: String| v.parse::<f64>().map_err(|e| EnclaveError::Config(format!("{v}: {e}")));
            match flag.as_str() {
                "--root-key-file" => root_key_file = Some(PathBuf::from(value()?)),
                "--per-call-ms" => per_call = num(value()?)?,
                "--per-kb-ms" => per_kb = num(value()?)?,
                "--bands" => hrv.bands = parse_bands(&value()?)?,
                "--grid" => hrv.grid = parse_grid(&value()?)?,
                other => return Err(EnclaveError::Config(format!("unknown argument {other}"))),
            }
        }
        Ok(Self {
            root_key_file: root_key_file.ok_or_else(|| EnclaveError::Config("--root-key-file is required".into()))?,
            hrv,
            overhead: OverheadModel::new(per_call, per_kb).map_err(EnclaveError::Config)?,
        })
    }

    pub fn pipeline(&self) -> Result<Pipeline, EnclaveError> {
        Pipeline::new(self.hrv).map_err(|e| EnclaveError::Config(e.to_string()))
    }

    /// Measurement the boundary started from this spec will report.
    pub fn measurement(&self) -> Result<Measurement, EnclaveError> {
        Ok(self.pipeline()?.measurement())
    }
}

/// Reads a hex-encoded 32-byte attestation-root secret.
pub fn read_root_key(path: &Path) -> io::Result<AttestationRoot> {
    let text = std::fs::read_to_string(path)?;
    let bytes: [u8; 32] = hex::decode(text.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "root key must be 32 hex-encoded bytes"))?;
    Ok(AttestationRoot::from_secret_bytes(&bytes))
}

pub fn write_root_key(path: &Path, root: &AttestationRoot) -> io::Result<()> {
    std::fs::write(path, hex::encode(root.secret_bytes()) + "\n")
}

/// Which executable to start, and with what leading arguments, to get a
/// boundary process (the `cardiogrid-enclave` binary, or `cardiogrid enclave`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveLauncher {
    pub program: PathBuf,
    pub prefix_args: Vec<String>,
}

impl EnclaveLauncher {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            prefix_args: Vec::new(),
        }
    }

    pub fn with_prefix_args(mut self, args: &[&str]) -> Self {
        self.prefix_args = args.iter().map(|s| (*s).to_owned()).collect();
        self
    }
}

/// Result of one PROCESS call as the host sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcessReply {
    Sealed(Vec<u8>),
    Failed,
}

type Capture = Arc<Mutex<BufWriter<File>>>;

struct Tee<T> {
    inner: T,
    capture: Option<Capture>,
}

impl<T: Write> Write for Tee<T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        if let Some(c) = &self.capture {
            c.lock().expect("capture lock").write_all(&buf[..n])?;
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<T: Read> Read for Tee<T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        if let Some(c) = &self.capture {
            c.lock().expect("capture lock").write_all(&buf[..n])?;
        }
        Ok(n)
    }
}

pub struct EnclaveHost {
    child: Child,
    input: BufWriter<Tee<ChildStdin>>,
    output: BufReader<Tee<ChildStdout>>,
    capture: Option<Capture>,
}

impl EnclaveHost {
    pub fn spawn(launcher: &EnclaveLauncher, spec: &EnclaveSpec) -> Result<Self, EnclaveError> {
        Self::spawn_inner(launcher, spec, None)
    }

    /// Like [`spawn`](Self::spawn), additionally copying every byte crossing
    /// the channel, both directions, to `capture_path`.
    pub fn spawn_with_capture(
        launcher: &EnclaveLauncher,
        spec: &EnclaveSpec,
        capture_path: &Path,
    ) -> Result<Self, EnclaveError> {
        let file = File::create(capture_path).map_err(EnclaveError::SpawnFailure)?;
        Self::spawn_inner(launcher, spec, Some(Arc::new(Mutex::new(BufWriter::new(file)))))
    }

    fn spawn_inner(launcher: &EnclaveLauncher, spec: &EnclaveSpec, capture: Option<Capture>) -> Result<Self, EnclaveError> {
        let mut child = Command::new(&launcher.program)
            .args(&launcher.prefix_args)
            .args(spec.to_args())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(EnclaveError::SpawnFailure)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            input: BufWriter::with_capacity(
                1 << 16,
                Tee {
                    inner: stdin,
                    capture: capture.clone(),
                },
            ),
            output: BufReader::with_capacity(
                1 << 16,
                Tee {
                    inner: stdout,
                    capture: capture.clone(),
                },
            ),
            capture,
        })
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    fn died(&mut self, context: &str, e: Option<io::Error>) -> EnclaveError {
        let status = self.child.try_wait().ok().flatten();
        EnclaveError::Died(match (status, e) {
            (Some(s), _) => format!("{context}: exited with {s}"),
            (None, Some(e)) => format!("{context}: {e}"),
            (None, None) => format!("{context}: channel closed"),
        })
    }

    fn expect_reply(&mut self, opcode: u8) -> Result<Vec<u8>, EnclaveError> {
        match read_frame(&mut self.output) {
            Ok(Some(f)) if f.opcode == opcode => Ok(f.body),
            Ok(Some(f)) => Err(EnclaveError::Protocol(format!(
                "expected opcode {opcode:#04x}, got {:#04x}",
                f.opcode
            ))),
            Ok(None) => Err(self.died("reading reply", None)),
            Err(e) => Err(self.died("reading reply", Some(e))),
        }
    }

    pub fn attest(&mut self, request: &AttestationRequest) -> Result<AttestationQuote, EnclaveError> {
        let sent = write_frame(&mut self.input, OP_ATTEST, &request.to_bytes()).and_then(|()| self.input.flush());
        if let Err(e) = sent {
            return Err(self.died("sending ATTEST", Some(e)));
        }
        let body = self.expect_reply(OP_ATTEST_REPLY)?;
        if body.is_empty() {
            return Err(EnclaveError::AttestRefused);
        }
        AttestationQuote::from_bytes(&body).map_err(|e| EnclaveError::Protocol(e.to_string()))
    }

    pub fn process(&mut self, envelope: &[u8]) -> Result<ProcessReply, EnclaveError> {
        Ok(self.process_many(&[envelope])?.pop().expect("one reply"))
    }

    /// Sends every request before collecting replies, which come back in
    /// request order. A separate writer thread keeps both pipes draining.
    pub fn process_many<B: AsRef<[u8]> + Sync>(&mut self, envelopes: &[B]) -> Result<Vec<ProcessReply>, EnclaveError> {
        if envelopes.is_empty() {
            return Ok(Vec::new());
        }
        let input = &mut self.input;
        let (sent, replies) = std::thread::scope(|s| {
            let writer = s.spawn(move || -> io::Result<()> {
                for env in envelopes {
                    write_frame(input, OP_PROCESS, env.as_ref())?;
                }
                input.flush()
            });
            let mut replies = Vec::with_capacity(envelopes.len());
            let mut read_error = None;
            for _ in envelopes {
                match read_frame(&mut self.output) {
                    Ok(Some(f)) if f.opcode == OP_PROCESS_REPLY => replies.push(f.body),
                    Ok(Some(f)) => {
                        read_error = Some(Err(format!("unexpected opcode {:#04x}", f.opcode)));
                        break;
                    }
                    Ok(None) => {
                        read_error = Some(Ok(None));
                        break;
                    }
                    Err(e) => {
                        read_error = Some(Ok(Some(e)));
                        break;
                    }
                }
            }
            let sent = writer.join().expect("writer thread");
            (sent, read_error.map_or(Ok(replies), Err))
        });
        let bodies = match replies {
            Ok(b) => b,
            Err(Err(protocol)) => return Err(EnclaveError::Protocol(protocol)),
            Err(Ok(io)) => return Err(self.died("reading PROCESS reply", io)),
        };
        if let Err(e) = sent {
            return Err(self.died("sending PROCESS", Some(e)));
        }
        bodies
            .into_iter()
            .map(|b| match b.split_first() {
                Some((&STATUS_OK, env)) if !env.is_empty() => Ok(ProcessReply::Sealed(env.to_vec())),
                Some(_) => Ok(ProcessReply::Failed),
                None => Err(EnclaveError::Protocol("empty PROCESS reply".into())),
            })
            .collect()
    }

    /// Checks whether the process is still running.
    pub fn is_alive(&mut self) -> bool {
        matches!(self.child.try_wait(), Ok(None))
    }

    pub fn shutdown(mut self) -> Result<ExitStatus, EnclaveError> {
        let _ = write_frame(&mut self.input, OP_SHUTDOWN, &[]).and_then(|()| self.input.flush());
        let status = self.child.wait().map_err(|e| EnclaveError::Died(e.to_string()))?;
        if let Some(c) = &self.capture {
            let _ = c.lock().expect("capture lock").flush();
        }
        Ok(status)
    }

    /// Terminates the process without the SHUTDOWN handshake.
    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for EnclaveHost {
    fn drop(&mut self) {
        if let Some(c) = &self.capture {
            let _ = c.lock().map(|mut c| c.flush());
        }
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = write_frame(&mut self.input, OP_SHUTDOWN, &[]).and_then(|()| self.input.flush());
            let _ = self.child.wait();
        }
    }
}
