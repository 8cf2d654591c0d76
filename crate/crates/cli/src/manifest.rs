//! Run provenance: every invocation writes a `manifest.json` naming the
//! inputs (with content hashes), the seed, the tool version, and the random
//! generator contract, plus a content hash of every file it produced.
//!
//! The manifest's `run_id` is a SHA-256 over the reproducibility core —
//! command, tool version, generator id, seed, and the input hashes — so two
//! runs with the same inputs share the same `run_id` while timestamps and
//! output listings stay outside the hash. JSON reports and train sidecars
//! embed the `run_id` that produced them; column-oriented outputs (CSV,
//! train files) are kept schema-pure and are referenced by hash from the
//! manifest instead.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::CliError;

/// A file the run consumed or produced, with its SHA-256 content hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    /// Path relative to the manifest's directory for outputs; as given on
    /// the command line for inputs.
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Random-stream contract of the simulator build that ran.
    pub generator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Inputs in command-line order; the primary configuration comes first.
    pub inputs: Vec<FileRef>,
    /// SHA-256 over the reproducibility core (command, version, generator,
    /// seed, input hashes). Outputs embed or are listed under this id.
    pub run_id: String,
    /// Wall-clock creation time (seconds since the Unix epoch); not part of
    /// `run_id`, so reruns stay reproducible.
    pub created_unix: u64,
    pub outputs: Vec<FileRef>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::Validation(format!("cannot read {} for hashing: {e}", path.display()))
    })?;
    Ok(sha256_hex(&bytes))
}

fn core_hash(
    command: &str,
    tool_version: &str,
    generator_id: &str,
    seed: Option<u64>,
    inputs: &[FileRef],
) -> String {
    let mut text = format!("{command}\n{tool_version}\n{generator_id}\n");
    match seed {
        Some(s) => text.push_str(&format!("seed={s}\n")),
        None => text.push_str("seed=none\n"),
    }
    for input in inputs {
        text.push_str(&input.sha256);
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

impl RunManifest {
    /// Start a manifest for `command`; inputs are hashed immediately so the
    /// `run_id` is available to embed in outputs before they are written.
    pub fn begin(
        command: &str,
        seed: Option<u64>,
        input_paths: &[&Path],
    ) -> Result<Self, CliError> {
        let mut inputs = Vec::with_capacity(input_paths.len());
        for path in input_paths {
            inputs.push(FileRef {
                path: path.display().to_string(),
                sha256: hash_file(path)?,
            });
        }
        let tool_version = env!("CARGO_PKG_VERSION").to_string();
        let generator_id = twinpoint::GENERATOR_ID.to_string();
        let run_id = core_hash(command, &tool_version, &generator_id, seed, &inputs);
        Ok(RunManifest {
            command: command.to_string(),
            tool_version,
            generator_id,
            seed,
            inputs,
            run_id,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
        })
    }

    /// Record a freshly written output (path relative to the manifest dir).
    pub fn record_output(&mut self, out_dir: &Path, relative: &str) -> Result<(), CliError> {
        let sha256 = hash_file(&out_dir.join(relative))?;
        self.outputs.push(FileRef {
            path: relative.to_string(),
            sha256,
        });
        Ok(())
    }

    /// Write `manifest.json` into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join("manifest.json");
        twinpoint::write_json(&path, self)
            .map_err(|e| CliError::Validation(format!("writing manifest: {e}")))?;
        Ok(path)
    }
}

/// Verify a manifest: the stored `run_id` must equal the hash recomputed
/// from the stored core fields, and every listed output must still match
/// its recorded content hash. Any mismatch is a data inconsistency.
pub fn check_manifest(path: &Path) -> Result<usize, CliError> {
    let manifest: RunManifest = twinpoint::read_json(path)
        .map_err(|e| CliError::DataInconsistency(format!("unreadable manifest: {e}")))?;
    let expected = core_hash(
        &manifest.command,
        &manifest.tool_version,
        &manifest.generator_id,
        manifest.seed,
        &manifest.inputs,
    );
    if expected != manifest.run_id {
        return Err(CliError::DataInconsistency(format!(
            "manifest core fields do not reproduce run_id: recorded {}, recomputed {expected} \
             (command, seed, or input hashes were altered)",
            manifest.run_id
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for output in &manifest.outputs {
        let target = base.join(&output.path);
        let actual = hash_file(&target)
            .map_err(|_| CliError::DataInconsistency(format!("missing output {}", output.path)))?;
        if actual != output.sha256 {
            return Err(CliError::DataInconsistency(format!(
                "output {} does not match its recorded hash (recorded {}, actual {actual})",
                output.path, output.sha256
            )));
        }
    }
    Ok(manifest.outputs.len())
}
