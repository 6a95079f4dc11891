//! Machine-readable reports. Every report carries the hash of the
//! configuration that produced it, the mesh hash and the RNG seed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON serialisation (struct fields keep declaration
/// order, so equal values hash equally).
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<T> {
    pub suite: String,
    pub passed: bool,
    pub config_hash: String,
    pub mesh_hash: String,
    pub seed: u64,
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Record of one invocation: inputs by hash, timings and outputs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub mesh_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Wall-clock seconds per phase, in execution order.
    pub phases: Vec<(String, f64)>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
    pub message: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("emcouple".to_string(), env!("CARGO_PKG_VERSION").to_string());
        RunManifest { command: command.to_string(), versions, ..Default::default() }
    }

    /// Time `f` under `phase`.
    pub fn phase<R>(&mut self, phase: &str, f: impl FnOnce() -> R) -> R {
        let t = std::time::Instant::now();
        let r = f();
        self.phases.push((phase.to_string(), t.elapsed().as_secs_f64()));
        r
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Cfg {
        dt: f64,
        n: usize,
    }

    #[test]
    fn hashes_are_stable_and_sensitive() {
        let a = config_hash(&Cfg { dt: 0.1, n: 3 }).unwrap();
        assert_eq!(a, config_hash(&Cfg { dt: 0.1, n: 3 }).unwrap());
        assert_ne!(a, config_hash(&Cfg { dt: 0.1, n: 4 }).unwrap());
        assert_eq!(a.len(), 64);
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn report_and_manifest_json() {
        let dir = tempfile::tempdir().unwrap();
        let r = Report { suite: "x".into(), passed: true, config_hash: "c".into(), mesh_hash: "m".into(), seed: 7, body: [1.5] };
        r.write(dir.path().join("r.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["body"][0], 1.5);
        let mut m = RunManifest::new("run");
        assert_eq!(m.phase("assembly", || 4), 4);
        m.write(dir.path().join("m.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(v["phases"][0][0], "assembly");
        assert!(v["versions"]["emcouple"].is_string());
    }
}
