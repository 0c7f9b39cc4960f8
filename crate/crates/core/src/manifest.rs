//! Provenance sidecars: every output `<file>` gets `<file>.manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::ALGORITHM;

pub const TOOL: &str = "voxelcode";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Hash of the canonical JSON form of a command's effective settings.
pub fn settings_sha256(settings: &impl Serialize) -> Result<String> {
    let value = serde_json::to_value(settings).map_err(|e| Error::format(e.to_string()))?;
    // serde_json maps are ordered by key, so this text is canonical
    Ok(sha256_hex(value.to_string().as_bytes()))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn has_manifest(output: &Path) -> bool {
    manifest_path(output).is_file()
}

/// What a command records about every file it writes.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<(String, u64)>,
    /// `(path, sha256)` of every input, hashed once when added.
    pub inputs: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str, settings: &impl Serialize) -> Result<Self> {
        Ok(Provenance {
            command: command.to_string(),
            config_sha256: settings_sha256(settings)?,
            seeds: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.push((name.to_string(), value));
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = file_sha256(path)?;
        self.inputs.push((path.display().to_string(), hash));
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for p in paths {
            self.input(p)?;
        }
        Ok(())
    }

    pub fn write(&self, output: &Path) -> Result<PathBuf> {
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(path, hash)| json!({ "path": path, "sha256": hash }))
            .collect();
        let seeds: serde_json::Map<String, Value> =
            self.seeds.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let manifest = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "output": output.file_name().map(|n| n.to_string_lossy().into_owned()),
            "output_sha256": file_sha256(output)?,
            "config_sha256": self.config_sha256,
            "seeds": seeds,
            "rng": ALGORITHM,
            "inputs": inputs,
            "created": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        });
        let path = manifest_path(output);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::write(&path, e))?;
        Ok(path)
    }

    pub fn write_all<'a>(&self, outputs: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for o in outputs {
            self.write(o)?;
        }
        Ok(())
    }
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
    fn sidecar_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.csv");
        let input = dir.path().join("in.vet");
        fs::write(&out, "a,b\n").unwrap();
        fs::write(&input, "x").unwrap();
        let mut p = Provenance::new("score", &json!({"k": 1})).unwrap().seed("split", 3);
        p.input(&input).unwrap();
        let path = p.write(&out).unwrap();
        assert_eq!(path, dir.path().join("r.csv.manifest.json"));
        assert!(has_manifest(&out));
        let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["seeds"]["split"], 3);
        assert_eq!(v["output_sha256"], sha256_hex(b"a,b\n"));
        assert_eq!(v["inputs"][0]["sha256"], sha256_hex(b"x"));
    }

    #[test]
    fn settings_hash_ignores_key_order() {
        let a = settings_sha256(&json!({"a": 1, "b": 2})).unwrap();
        let b = settings_sha256(&json!({"b": 2, "a": 1})).unwrap();
        assert_eq!(a, b);
    }
}
