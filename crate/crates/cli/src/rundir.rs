//! Timestamped output directories and the provenance record each one carries.

use std::fs;
use std::path::{Path, PathBuf};

use ainet::hsi_data::Manifest;
use ainet::transfer::VariantTag;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_error, CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "AINET_OUTPUT_ROOT";
pub const RUN_RECORD: &str = "run.json";

/// Output root: the explicit flag, then `output_dir` from the config, then
/// `$AINET_OUTPUT_ROOT`, then `./runs`.
pub fn output_root(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Clone, Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<command>-<UTC timestamp>`, adding `-2`, `-3`, ... if
    /// the name is taken.
    pub fn create(root: &Path, command: &str) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{command}-{stamp}");
        for n in 1.. {
            let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_error(&path, e)),
            }
        }
        unreachable!()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.join(name);
        fs::write(&p, contents).map_err(|e| io_error(&p, e))?;
        Ok(p)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        self.write(name, text + "\n")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHash {
    pub id: String,
    pub manifest: FileHash,
    pub cube: FileHash,
    pub labels: FileHash,
}

pub fn sha256_file(path: &Path) -> CliResult<FileHash> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(FileHash {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Hashes a manifest and the two raw arrays it points at.
pub fn hash_dataset(id: &str, manifest_path: &Path) -> CliResult<DatasetHash> {
    let manifest = sha256_file(manifest_path)?;
    let text = fs::read_to_string(manifest_path).map_err(|e| io_error(manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| {
        CliError::Core(ainet::Error::Manifest {
            path: manifest_path.to_path_buf(),
            reason: e.to_string(),
        })
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(DatasetHash {
        id: id.to_string(),
        manifest,
        cube: sha256_file(&base.join(&m.cube_file))?,
        labels: sha256_file(&base.join(&m.labels_file))?,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suite: Vec<u64>,
}

/// Everything needed to repeat a run: the resolved config, every seed and
/// the hashes of every dataset file read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub created_utc: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantTag>,
    pub seeds: Seeds,
    pub datasets: Vec<DatasetHash>,
    /// Parameters of the checkpoint the run started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<FileHash>,
    pub config: RunConfig,
}

impl RunRecord {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunRecord {
            command: command.to_string(),
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            target: None,
            variant: None,
            seeds: Seeds::default(),
            datasets: Vec::new(),
            pretrained: None,
            config: config.clone(),
        }
    }

    /// Hashes the manifests of `ids`, in order.
    pub fn hash_datasets<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) -> CliResult<()> {
        for id in ids {
            let path = self.config.manifest(id)?.to_path_buf();
            self.datasets.push(hash_dataset(id, &path)?);
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let p = dir.join(RUN_RECORD);
        let text = fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    }
}
