//! Directory-based exchange between the client package and the server.
//!
//! Layout under the root:
//!
//! ```text
//! outbox/<client>/<seq>.env      client -> server
//! inbox/<client>/<seq>.env       server -> client
//! outbox/<client>/attest.req     attestation challenge
//! inbox/<client>/attest.quote    attestation answer
//! quarantine/<client>/...        inbound files that failed to open
//! archive/...                    consumed files, when archiving is on
//! ```
//!
//! `<client>` is the hex SHA-256 of the client id, so directory names carry
//! no more than envelope headers already do. Files become visible only
//! through an atomic rename from a `.tmp` name.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::secure::ClientIdHash;

pub const ATTEST_REQUEST_FILE: &str = "attest.req";
pub const ATTEST_QUOTE_FILE: &str = "attest.quote";
const TMP_EXT: &str = "tmp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Outbox,
    Inbox,
}

impl Side {
    fn dir(self) -> &'static str {
        match self {
            Side::Outbox => "outbox",
            Side::Inbox => "inbox",
        }
    }
}

/// Sealed envelopes in secure mode; bare payloads in the plain baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FileKind {
    Envelope,
    Plain,
}

impl FileKind {
    pub fn extension(self) -> &'static str {
        match self {
            FileKind::Envelope => "env",
            FileKind::Plain => "plain",
        }
    }
}

/// A sequence-numbered data file found in a drop directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropEntry {
    pub client_dir: String,
    pub sequence: u64,
    pub kind: FileKind,
    pub path: PathBuf,
}

pub fn client_dir_name(hash: &ClientIdHash) -> String {
    hex::encode(hash)
}

fn file_name(sequence: u64, kind: FileKind) -> String {
    format!("{sequence:020}.{}", kind.extension())
}

fn parse_file_name(name: &str) -> Option<(u64, FileKind)> {
    let (stem, ext) = name.rsplit_once('.')?;
    let kind = match ext {
        "env" => FileKind::Envelope,
        "plain" => FileKind::Plain,
        _ => return None,
    };
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((stem.parse().ok()?, kind))
}

#[derive(Debug, Clone)]
pub struct FileDrop {
    root: PathBuf,
    archive: bool,
}

impl FileDrop {
    /// Opens (creating if needed) a drop rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for d in ["outbox", "inbox", "quarantine"] {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Self { root, archive: false })
    }

    /// Keeps consumed files under `archive/` instead of deleting them.
    pub fn with_archive(mut self, archive: bool) -> Self {
        self.archive = archive;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn client_path(&self, side: Side, client_dir: &str) -> PathBuf {
        self.root.join(side.dir()).join(client_dir)
    }

    fn write_atomic(&self, dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let final_path = dir.join(name);
        let tmp = dir.join(format!("{name}.{TMP_EXT}"));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &final_path)?;
        Ok(final_path)
    }

    pub fn deposit(
        &self,
        side: Side,
        client_dir: &str,
        sequence: u64,
        kind: FileKind,
        bytes: &[u8],
    ) -> io::Result<PathBuf> {
        self.write_atomic(&self.client_path(side, client_dir), &file_name(sequence, kind), bytes)
    }

    /// Writes a handshake file such as [`ATTEST_REQUEST_FILE`].
    pub fn deposit_named(&self, side: Side, client_dir: &str, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        self.write_atomic(&self.client_path(side, client_dir), name, bytes)
    }

    /// Reads and consumes a handshake file if present.
    pub fn take_named(&self, side: Side, client_dir: &str, name: &str) -> io::Result<Option<Vec<u8>>> {
        let path = self.client_path(side, client_dir).join(name);
        match fs::read(&path) {
            Ok(bytes) => {
                self.consume(&path)?;
                Ok(Some(bytes))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Client directories currently present on one side.
    pub fn client_dirs(&self, side: Side) -> io::Result<Vec<String>> {
        let mut dirs: Vec<String> = fs::read_dir(self.root.join(side.dir()))?
            .filter_map(Result::ok)
            .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        dirs.sort();
        Ok(dirs)
    }

    /// Visible data files for one client, in sequence order.
    pub fn list(&self, side: Side, client_dir: &str) -> io::Result<Vec<DropEntry>> {
        let dir = self.client_path(side, client_dir);
        let rd = match fs::read_dir(&dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out: Vec<DropEntry> = rd
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let (sequence, kind) = parse_file_name(&name)?;
                Some(DropEntry {
                    client_dir: client_dir.to_owned(),
                    sequence,
                    kind,
                    path: e.path(),
                })
            })
            .collect();
        out.sort_by_key(|e| e.sequence);
        Ok(out)
    }

    /// Every visible data file on one side, grouped by client and ordered
    /// by sequence within a client.
    pub fn list_all(&self, side: Side) -> io::Result<Vec<DropEntry>> {
        let mut all = Vec::new();
        for dir in self.client_dirs(side)? {
            all.extend(self.list(side, &dir)?);
        }
        Ok(all)
    }

    /// Reads a listed file and removes it from view.
    pub fn take(&self, entry: &DropEntry) -> io::Result<Vec<u8>> {
        let bytes = fs::read(&entry.path)?;
        self.consume(&entry.path)?;
        Ok(bytes)
    }

    fn consume(&self, path: &Path) -> io::Result<()> {
        if !self.archive {
            return fs::remove_file(path);
        }
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        let dest = self.root.join("archive").join(rel);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::rename(path, dest)
    }

    /// Moves a file that failed to open out of the inbox.
    pub fn quarantine(&self, entry: &DropEntry) -> io::Result<PathBuf> {
        let dir = self.root.join("quarantine").join(&entry.client_dir);
        fs::create_dir_all(&dir)?;
        let dest = dir.join(entry.path.file_name().unwrap_or_default());
        fs::rename(&entry.path, &dest)?;
        Ok(dest)
    }

    pub fn quarantined(&self, client_dir: &str) -> io::Result<Vec<PathBuf>> {
        match fs::read_dir(self.root.join("quarantine").join(client_dir)) {
            Ok(rd) => Ok(rd.filter_map(Result::ok).map(|e| e.path()).collect()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }
}
