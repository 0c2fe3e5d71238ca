//! Run manifests: which inputs went in, which outputs came out, under which
//! seed and config. Contents are fully deterministic; timing is printed to
//! stderr instead so reruns stay byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::fsio::{bytes_digest, file_digest, write_atomic};

pub const MANIFEST_VERSION: &str = "manifest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, resolved_config_json: &str) -> RunManifest {
        RunManifest {
            version: String::from(MANIFEST_VERSION),
            command: String::from(command),
            seed,
            config_digest: bytes_digest(resolved_config_json.as_bytes()),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileRef {
            path: path.display().to_string(),
            digest: file_digest(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(FileRef {
            path: path.display().to_string(),
            digest: file_digest(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::validation(format!("manifest serialization: {e}")))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
