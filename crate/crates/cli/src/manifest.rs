use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a run: resolved config, root seed and input digests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub inputs: Vec<InputDigest>,
    /// digest over the input digests in order
    pub inputs_hash: String,
    pub config: RunConfig,
    pub cli_version: String,
    pub core_version: String,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn digest_inputs(paths: &[&Path]) -> Result<(Vec<InputDigest>, String), CliError> {
    let mut all = Sha256::new();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let d = file_digest(p)?;
        all.update(p.display().to_string().as_bytes());
        all.update(d.as_bytes());
        out.push(InputDigest { path: p.display().to_string(), sha256: d });
    }
    Ok((out, hex(&all.finalize())))
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(file_digest(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let (a, h1) = digest_inputs(&[&p]).unwrap();
        std::fs::write(&p, "abd").unwrap();
        let (_, h2) = digest_inputs(&[&p]).unwrap();
        assert_eq!(a.len(), 1);
        assert_ne!(h1, h2);
    }

    #[test]
    fn missing_input_names_the_path() {
        let e = file_digest(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert_eq!(e.exit_code, 2);
        assert_eq!(e.path.as_deref(), Some("/nonexistent/x.csv"));
    }
}
