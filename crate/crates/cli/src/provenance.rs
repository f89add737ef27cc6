//! Provenance headers: every file the CLI writes starts with `#` lines
//! holding the command, its configuration as JSON and the sha256 of each
//! input file. Nothing time- or host-dependent goes in, so reruns on
//! unchanged inputs reproduce the same bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use safe_l2o::{Error, Result};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Provenance {
    command: &'static str,
    config: Value,
    inputs: Vec<(PathBuf, String)>,
}

impl Provenance {
    pub fn new(command: &'static str, config: Value) -> Self {
        Provenance { command, config, inputs: Vec::new() }
    }

    /// Hash `path` now, before anything reads it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    pub fn write_header<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# safe-l2o {}", self.command)?;
        writeln!(w, "# config {}", self.config)?;
        for (path, digest) in &self.inputs {
            writeln!(w, "# input {} sha256:{digest}", path.display())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn header_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("in.txt");
        fs::write(&f, b"abc").unwrap();
        let mut p = Provenance::new("run", json!({"b": 1, "a": [1.5, "x"]}));
        p.input(&f).unwrap();
        let mut out = Vec::new();
        p.write_header(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        // sha256("abc")
        assert!(text.contains("sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
        assert!(text.lines().all(|l| l.starts_with('#')));
        assert_eq!(text.lines().count(), 3);
    }
}
