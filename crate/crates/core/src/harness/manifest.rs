use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    /// Hex SHA-256 of the file contents.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub refine: u32,
    pub stages: Vec<StageTiming>,
    /// Error budget and headline numbers.
    pub budget: BTreeMap<String, f64>,
    /// Run parameters the plot emitter needs (`n`, `s`).
    pub params: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_NAME);
        if !p.is_file() {
            return Err(Error::Listing(format!("no {MANIFEST_NAME} in {}", dir.display())));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    pub fn digest_of(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == path).map(|f| f.digest.as_str())
    }

    /// Recomputes every listed digest; returns the paths that differ.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let p = dir.join(&f.path);
            if !p.is_file() {
                return Err(Error::Listing(format!("listed file {} is missing", f.path)));
            }
            if digest_bytes(&std::fs::read(p)?) != f.digest {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Single writer for one run directory: every file goes through it and is
/// digested as it is written.
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    stages: Vec<StageTiming>,
    budget: BTreeMap<String, f64>,
    params: BTreeMap<String, f64>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            stages: Vec::new(),
            budget: BTreeMap::new(),
            params: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` from an in-memory buffer filled by `fill`.
    pub fn file(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let mut f = std::fs::File::create(self.dir.join(name))?;
        f.write_all(&buf)?;
        self.files.retain(|e| e.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            digest: digest_bytes(&buf),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.file(name, |b| {
            serde_json::to_writer_pretty(&mut *b, value)?;
            b.push(b'\n');
            Ok(())
        })
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self)?;
        self.stages.push(StageTiming {
            name: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn budget(&mut self, key: &str, value: f64) {
        self.budget.insert(key.to_string(), value);
    }

    pub fn param(&mut self, key: &str, value: f64) {
        self.params.insert(key.to_string(), value);
    }

    pub fn finish(self, config_hash: String, kind: &str, seed: u64, refine: u32) -> Result<RunManifest> {
        let m = RunManifest {
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            seed,
            refine,
            stages: self.stages,
            budget: self.budget,
            params: self.params,
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(self.dir.join(MANIFEST_NAME), text + "\n")?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_are_digested_and_verified() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path()).unwrap();
        w.file("a.csv", |b| {
            b.extend_from_slice(b"x,y\n1,2\n");
            Ok(())
        })
        .unwrap();
        w.budget("tail_h", 1e-3);
        let m = w.finish("abc".into(), "tails", 1, 0).unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.digest_of("a.csv").unwrap(), digest_bytes(b"x,y\n1,2\n"));
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.csv"), "tampered").unwrap();
        assert_eq!(back.verify(dir.path()).unwrap(), vec!["a.csv".to_string()]);
    }

    #[test]
    fn empty_dir_is_a_listing_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(RunManifest::read(dir.path()), Err(Error::Listing(_))));
    }
}
