use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub output_dir: String,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digests of `paths`; directories contribute every regular file inside them.
pub fn digest_inputs(paths: &[PathBuf]) -> std::io::Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            inner.sort();
            files.extend(inner);
        } else if p.is_file() {
            files.push(p.clone());
        }
    }
    files
        .into_iter()
        .map(|f| {
            Ok(FileDigest {
                sha256: sha256_hex(&fs::read(&f)?),
                path: f.display().to_string(),
            })
        })
        .collect()
}

pub struct ManifestBuilder {
    subcommand: String,
    started: SystemTime,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn start(subcommand: &str) -> Self {
        ManifestBuilder { subcommand: subcommand.into(), started: SystemTime::now(), clock: Instant::now() }
    }

    pub fn finish(
        self,
        config: &RunConfig,
        seed: Option<u64>,
        inputs: &[PathBuf],
        out: &Path,
    ) -> panelvar_core::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(&serde_json::to_vec(config)?),
            seed,
            inputs: digest_inputs(inputs)?,
            output_dir: out.display().to_string(),
            started_unix: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_secs: self.clock.elapsed().as_secs_f64(),
        };
        panelvar_core::io::write_json(&out.join("manifest.json"), &manifest)
    }
}
