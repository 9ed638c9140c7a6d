//! Output directory: every file goes through [`Artifacts::write`], which
//! records its hash for the manifest.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

pub struct Artifacts {
    dir: PathBuf,
    written: Vec<OutputEntry>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_owned(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        let entry = OutputEntry {
            file: name.to_owned(),
            sha256: sha256_hex(bytes),
        };
        match self.written.iter_mut().find(|e| e.file == name) {
            Some(e) => *e = entry,
            None => self.written.push(entry),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut s = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        s.push(b'\n');
        self.write(name, &s)
    }

    pub fn outputs(&self) -> &[OutputEntry] {
        &self.written
    }
}

/// Versions of the tool and the library, recorded with every output.
#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    #[serde(rename = "frac-heat-lab")]
    pub cli: &'static str,
    #[serde(rename = "fracheat-core")]
    pub core: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            cli: env!("CARGO_PKG_VERSION"),
            core: fracheat_core::VERSION,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub mode: &'a str,
    pub config: ConfigRef,
    pub versions: Versions,
    /// kernel tables read from or written to `FRACHEAT_CACHE`
    pub kernel_cache: Vec<String>,
    pub outputs: &'a [OutputEntry],
}
