//! The run manifest: a JSON audit trail next to the artifacts it describes.
//!
//! The manifest is created once with an immutable snapshot of the
//! configuration and grows by appending one entry per completed command.
//! Commands re-loading it verify the snapshot hash, check that every artifact
//! it references still exists, and refuse to graft artifacts from a different
//! configuration onto the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::config::PipelineConfig;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub unix_time: u64,
    pub command: String,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub config: PipelineConfig,
    pub entries: Vec<ManifestEntry>,
}

/// A manifest bound to its directory on disk.
#[derive(Debug)]
pub struct Workspace {
    manifest: RunManifest,
    manifest_path: PathBuf,
    root: PathBuf,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write via a temporary sibling and rename, so readers never observe a
/// half-written artifact and concurrent identical writes are harmless.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = read_to_string(path)?;
    serde_json::from_str(&body).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

impl Workspace {
    /// Create the manifest for a new run, or re-open it if the same
    /// configuration already created one here.
    pub fn create(config: PipelineConfig, manifest_path: &Path) -> Result<Workspace> {
        config.validate()?;
        if manifest_path.exists() {
            let ws = Workspace::open(manifest_path)?;
            ws.check_config(&config)?;
            return Ok(ws);
        }
        let manifest = RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            run_id: config.run_id.clone(),
            config_hash: config.content_hash(),
            created_unix: now_unix(),
            config,
            entries: Vec::new(),
        };
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        write_json_file(manifest_path, &manifest)?;
        Ok(Workspace {
            manifest,
            manifest_path: manifest_path.to_path_buf(),
            root,
        })
    }

    /// Load an existing manifest, verifying the config snapshot against its
    /// recorded hash and every referenced artifact against the filesystem.
    pub fn open(manifest_path: &Path) -> Result<Workspace> {
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path.display().to_string()));
        }
        let manifest: RunManifest = read_json_file(manifest_path)?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "manifest format version {} is not supported (expected {})",
                manifest.format_version, MANIFEST_FORMAT_VERSION
            )));
        }
        if manifest.config.content_hash() != manifest.config_hash {
            return Err(Error::validation(
                "the manifest's config snapshot does not match its recorded hash; \
                 the manifest has been edited",
            ));
        }
        manifest.config.validate()?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        let ws = Workspace {
            manifest,
            manifest_path: manifest_path.to_path_buf(),
            root,
        };
        for entry in &ws.manifest.entries {
            for rel in &entry.artifacts {
                let p = ws.path(rel);
                if !p.exists() {
                    return Err(Error::MissingArtifact(format!(
                        "{} (recorded by command '{}')",
                        p.display(),
                        entry.command
                    )));
                }
            }
        }
        Ok(ws)
    }

    /// Refuse to proceed when a supplied configuration differs from the
    /// snapshot this run was created with.
    pub fn check_config(&self, config: &PipelineConfig) -> Result<()> {
        if config.content_hash() != self.manifest.config_hash {
            return Err(Error::validation(format!(
                "the supplied config (hash {}) does not match the manifest's snapshot \
                 (hash {}); artifacts from different configurations cannot be mixed",
                &config.content_hash()[..12],
                &self.manifest.config_hash[..12]
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.manifest.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// The artifact path, or a missing-artifact error naming the file and the
    /// command that should have produced it.
    pub fn require(&self, relative: &str, produced_by: &str) -> Result<PathBuf> {
        let p = self.path(relative);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(format!(
                "{} (run '{produced_by}' first)",
                p.display()
            )))
        }
    }

    pub fn write_json<T: Serialize>(&self, relative: &str, value: &T) -> Result<()> {
        write_json_file(&self.path(relative), value)
    }

    pub fn read_json<T: DeserializeOwned>(&self, relative: &str) -> Result<T> {
        read_json_file(&self.path(relative))
    }

    pub fn write_text(&self, relative: &str, body: &str) -> Result<()> {
        write_atomic(&self.path(relative), body.as_bytes())
    }

    /// Record a completed command. Entries only accumulate; nothing is ever
    /// rewritten or removed.
    pub fn append_entry(
        &mut self,
        command: &str,
        artifacts: Vec<String>,
        note: Option<String>,
    ) -> Result<()> {
        self.manifest.entries.push(ManifestEntry {
            unix_time: now_unix(),
            command: command.to_string(),
            artifacts,
            note,
        });
        write_json_file(&self.manifest_path, &self.manifest)
    }

    /// Entries for one command, oldest first.
    pub fn entries_for(&self, command: &str) -> Vec<&ManifestEntry> {
        self.manifest
            .entries
            .iter()
            .filter(|e| e.command == command)
            .collect()
    }
}
