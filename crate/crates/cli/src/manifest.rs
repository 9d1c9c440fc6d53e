//! Run manifests: enough to reproduce any output the tool writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tvseg::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub master_seed: Option<u64>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch; the only field that varies between reruns.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &'static str, config: impl Serialize, master_seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            tool: "tvseg",
            version: env!("CARGO_PKG_VERSION"),
            command,
            master_seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    /// Digests a file, or every regular file directly inside a directory.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files = Vec::new();
            for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
                let p = entry.map_err(|e| Error::io(path, e))?.path();
                if p.is_file() {
                    files.push(p);
                }
            }
            files.sort();
            for f in files {
                self.add_input(&f)?;
            }
            return Ok(());
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn directory_inputs_are_listed_in_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b"), b"2").unwrap();
        fs::write(dir.path().join("a"), b"1").unwrap();
        let mut m = RunManifest::new("test", serde_json::json!({}), None).unwrap();
        m.add_input(dir.path()).unwrap();
        let keys: Vec<_> = m.inputs.keys().cloned().collect();
        assert_eq!(keys.len(), 2);
        assert!(keys[0].ends_with('a') && keys[1].ends_with('b'));
    }
}
