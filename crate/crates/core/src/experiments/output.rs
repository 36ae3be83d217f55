//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub purpose: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub pipeline: String,
    pub config_sha256: String,
    pub seeds: Vec<SeedEntry>,
    pub threads: usize,
    /// Seconds since the Unix epoch. The only field that changes between
    /// identical runs.
    pub created_unix: u64,
    pub files: Vec<FileRecord>,
    pub checks: Vec<Check>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))
    }

    /// Files listed but missing or altered, and files present but unlisted.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        for f in &self.files {
            match fs::read(dir.join(&f.path)) {
                Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
                Ok(_) => problems.push(format!("{}: checksum mismatch", f.path)),
                Err(_) => problems.push(format!("{}: missing", f.path)),
            }
        }
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                    continue;
                }
                let rel = relative(dir, &p);
                if rel != MANIFEST_NAME && !self.files.iter().any(|f| f.path == rel) {
                    problems.push(format!("{rel}: not in the manifest"));
                }
            }
        }
        problems.sort();
        Ok(problems)
    }
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes files into one directory and remembers their checksums.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name == MANIFEST_NAME || self.files.iter().any(|f| f.path == name) {
            return Err(Error::Config(format!("artifact '{name}' written twice")));
        }
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::File::create(&path)?.write_all(bytes)?;
        self.files.push(FileRecord {
            path: name.to_owned(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes the manifest listing every artifact and returns its path.
    pub fn finish(self, mut manifest: Manifest) -> Result<(PathBuf, Manifest)> {
        manifest.files = self.files;
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numerical(e.to_string()))?;
        let path = self.dir.join(MANIFEST_NAME);
        fs::write(&path, text + "\n")?;
        Ok((path, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest {
            tool: "slowfast".into(),
            version: "0".into(),
            pipeline: "simulate".into(),
            config_sha256: sha256_hex(b""),
            seeds: vec![],
            threads: 1,
            created_unix: 0,
            files: vec![],
            checks: vec![],
        }
    }

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_exactly_the_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(tmp.path()).unwrap();
        a.write("a.csv", b"x\n1\n").unwrap();
        a.write("sub/b.csv", b"y\n").unwrap();
        assert!(a.write("a.csv", b"").is_err());
        let (_, m) = a.finish(manifest()).unwrap();
        let back = Manifest::read(tmp.path()).unwrap();
        assert_eq!(back, m);
        assert!(m.verify(tmp.path()).unwrap().is_empty());
        fs::write(tmp.path().join("stray.csv"), "").unwrap();
        fs::write(tmp.path().join("a.csv"), "changed").unwrap();
        assert_eq!(m.verify(tmp.path()).unwrap().len(), 2);
    }
}
