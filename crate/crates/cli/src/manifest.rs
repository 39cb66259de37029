//! Artifact bookkeeping and run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::fail::{CliResult, Failure, Kind};

pub const MANIFEST_SCHEMA: &str = "coldlab.manifest";
pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    fn of(path: String, bytes: &[u8]) -> Self {
        Self {
            path,
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

/// Writes files under an output directory and remembers their digests.
pub struct Artifacts {
    root: PathBuf,
    written: Vec<FileDigest>,
    inputs: Vec<FileDigest>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            inputs: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn put(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Failure::internal(e).context(format!("creating {}", dir.display())))?;
        }
        std::fs::write(&p, bytes).map_err(|e| Failure::internal(e).context(format!("writing {}", p.display())))
    }

    /// A tracked artifact: hashed into the manifest.
    pub fn bytes(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        self.put(rel, bytes)?;
        self.written.retain(|d| d.path != rel);
        self.written.push(FileDigest::of(rel.to_string(), bytes));
        Ok(())
    }

    pub fn text(&mut self, rel: &str, text: &str) -> CliResult<()> {
        self.bytes(rel, text.as_bytes())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(rel, &s)
    }

    /// A file already written by other code, now tracked.
    pub fn adopt(&mut self, rel: &str) -> CliResult<()> {
        let bytes = std::fs::read(self.path(rel))?;
        self.written.retain(|d| d.path != rel);
        self.written.push(FileDigest::of(rel.to_string(), &bytes));
        Ok(())
    }

    /// Not hashed: wall-clock timings and other run-to-run noise.
    pub fn untracked_json<T: Serialize>(&self, rel: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.put(rel, s.as_bytes())
    }

    /// Reads a file the command consumes and records its digest.
    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Failure::new(Kind::Data, e).context(format!("reading {}", path.display())))?;
        let key = path.display().to_string();
        if !self.inputs.iter().any(|d| d.path == key) {
            self.inputs.push(FileDigest::of(key, &bytes));
        }
        Ok(bytes)
    }

    pub fn finish(&self, command: &str, cfg: &RunConfig, extra: &Extra) -> Manifest {
        let mut artifacts = self.written.clone();
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let mut inputs = self.inputs.clone();
        inputs.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            coldlab_version: env!("CARGO_PKG_VERSION").into(),
            core_version: coldlab_core::VERSION.into(),
            seed: cfg.seed,
            config_sha256: config_hash(cfg),
            config: cfg.clone(),
            checkpoints: extra.checkpoints.clone(),
            inputs,
            artifacts,
        }
    }
}

/// Arguments beyond the config that a command needs to re-run.
#[derive(Debug, Clone, Default)]
pub struct Extra {
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub command: String,
    pub coldlab_version: String,
    pub core_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    /// Directory of trained fits read by evaluate and simulate.
    pub checkpoints: Option<PathBuf>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Kind::Config, e).context(format!("reading {}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Failure::new(Kind::Config, e).context(format!("parsing {}", path.display())))?;
        if m.schema != MANIFEST_SCHEMA || m.version != MANIFEST_VERSION {
            return Err(Failure::msg(Kind::Config, format!("{}: not a version {MANIFEST_VERSION} manifest", path.display())));
        }
        if config_hash(&m.config) != m.config_sha256 {
            return Err(Failure::msg(Kind::Config, format!("{}: config hash does not match its config", path.display())));
        }
        Ok(m)
    }
}

/// Digest of the config's canonical JSON (keys sorted).
pub fn config_hash(cfg: &RunConfig) -> String {
    let v = serde_json::to_value(cfg).expect("config serializes");
    sha256_hex(serde_json::to_string(&v).expect("value serializes").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trips_and_checks_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path());
        a.text("x/y.txt", "hello\n").unwrap();
        let cfg = RunConfig::preset(Profile::Tiny);
        let m = a.finish("synth", &cfg, &Extra::default());
        let p = dir.path().join("m.json");
        std::fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
        let mut bad = m.clone();
        bad.config.seed += 1;
        std::fs::write(&p, serde_json::to_string(&bad).unwrap()).unwrap();
        assert_eq!(Manifest::read(&p).unwrap_err().kind, Kind::Config);
    }
}
