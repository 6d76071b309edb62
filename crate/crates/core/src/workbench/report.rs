//! Run directories and self-describing artifacts.
//!
//! Every run lands in `<out_dir>/<config hash>/<command>/run-<k>` with the
//! first unused `k`, so repeating a config never overwrites earlier output.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CifmError, Result};
use crate::workbench::config::ExperimentConfig;

pub const CODE_VERSION: &str = concat!("cifm ", env!("CARGO_PKG_VERSION"));

/// SHA-256 over the canonical JSON of the resolved config, first 16 hex digits.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    // where results go does not change what is computed
    c.out_dir = PathBuf::new();
    let json = serde_json::to_vec(&c).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

/// Common header of every JSON artifact.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub config_hash: &'a str,
    pub code_version: &'a str,
    pub command: &'a str,
    pub seeds: &'a [u64],
    #[serde(flatten)]
    pub body: &'a T,
}

pub struct RunDir {
    pub path: PathBuf,
    pub config_hash: String,
    pub command: String,
    log: BufWriter<File>,
}

impl RunDir {
    pub fn create(cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        let hash = config_hash(cfg);
        let root = cfg.out_dir.join(&hash);
        fs::create_dir_all(root.join(command))?;
        let resolved = root.join("config.toml");
        if !resolved.exists() {
            fs::write(&resolved, cfg.to_toml())?;
        }
        let mut k = 1;
        let path = loop {
            let p = root.join(command).join(format!("run-{k}"));
            match fs::create_dir(&p) {
                Ok(()) => break p,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
                Err(e) => return Err(e.into()),
            }
        };
        let log = BufWriter::new(OpenOptions::new().create_new(true).write(true).open(path.join("log.jsonl"))?);
        Ok(RunDir { path, config_hash: hash, command: command.into(), log })
    }

    fn envelope<'a, T: Serialize>(&'a self, seeds: &'a [u64], body: &'a T) -> Envelope<'a, T> {
        Envelope { config_hash: &self.config_hash, code_version: CODE_VERSION, command: &self.command, seeds, body }
    }

    /// One line of the structured log.
    pub fn log<T: Serialize>(&mut self, seed: u64, body: &T) -> Result<()> {
        let seeds = [seed];
        let line = serde_json::to_string(&self.envelope(&seeds, body))?;
        writeln!(self.log, "{line}")?;
        self.log.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, seeds: &[u64], body: &T) -> Result<PathBuf> {
        let p = self.file(name)?;
        fs::write(&p, serde_json::to_string_pretty(&self.envelope(seeds, body))?)?;
        Ok(p)
    }

    /// Plain text or CSV; the caller includes any header lines.
    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.file(name)?;
        fs::write(&p, text)?;
        Ok(p)
    }

    pub fn file(&self, name: &str) -> Result<PathBuf> {
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(CifmError::Usage(format!("bad artifact name '{name}'")));
        }
        Ok(self.path.join(name))
    }
}

/// The directory a run with this config and command would use next.
pub fn command_dir(cfg: &ExperimentConfig, command: &str) -> PathBuf {
    cfg.out_dir.join(config_hash(cfg)).join(command)
}

pub fn is_run_dir(p: &Path) -> bool {
    p.join("log.jsonl").is_file()
}
