//! Artifact persistence, the run manifest and replay.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::{self, Artifact};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub command: String,
    pub wall_time_s: f64,
    pub threads: usize,
    pub warnings: Vec<String>,
    pub artifacts: Vec<ArtifactRecord>,
    pub summary: BTreeMap<String, f64>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Worker count from `TOOL_THREADS`; `None` leaves rayon's default.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("TOOL_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Parse(format!(
                "TOOL_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `cfg` on a pool of `threads` workers (all cores when `None`).
pub fn execute_with_threads(cfg: &RunConfig, threads: Option<usize>) -> Result<(run::RunOutput, usize), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Io(e.to_string()))?;
    let used = pool.current_num_threads();
    pool.install(|| run::execute(cfg)).map(|o| (o, used))
}

pub fn output_dir(cfg: &RunConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("vlab-out"))
}

fn write_artifact(dir: &Path, a: &Artifact) -> Result<(), CliError> {
    fs::write(dir.join(&a.name), &a.bytes)?;
    Ok(())
}

/// Runs, writes every artifact into `dir` and records them in the manifest.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path, threads: Option<usize>) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let (output, used) = execute_with_threads(cfg, threads)?;
    fs::create_dir_all(dir)?;
    for a in &output.artifacts {
        write_artifact(dir, a)?;
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        master_seed: cfg.seed,
        command: cfg.command.name().to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        threads: used,
        warnings: output.warnings,
        artifacts: output
            .artifacts
            .iter()
            .map(|a| ArtifactRecord {
                name: a.name.clone(),
                sha256: a.sha256(),
                bytes: a.bytes.len() as u64,
            })
            .collect(),
        summary: output.summary,
        config: cfg.clone(),
    };
    fs::write(dir.join(MANIFEST_NAME), manifest.to_toml())?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub name: String,
    pub expected: String,
    pub actual: Option<String>,
    pub regenerated: bool,
}

impl ReplayEntry {
    pub fn matches(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub entries: Vec<ReplayEntry>,
}

impl ReplayReport {
    pub fn all_match(&self) -> bool {
        self.entries.iter().all(ReplayEntry::matches)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let status = if e.matches() { "match" } else { "MISMATCH" };
                let note = if e.regenerated { " (regenerated)" } else { "" };
                format!("{status} {}{note}\n", e.name)
            })
            .collect()
    }
}

/// Re-executes the manifest's config with its master seed and compares
/// artifact hashes. Missing artifacts are written back when they match;
/// existing files are never overwritten.
pub fn replay(manifest_path: &Path, threads: Option<usize>) -> Result<ReplayReport, CliError> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.tool_version != TOOL_VERSION {
        return Err(CliError::Refused(format!(
            "manifest was written by version {} but this is version {TOOL_VERSION}; \
             results are only guaranteed to reproduce under the same version",
            manifest.tool_version
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cfg = manifest.config.clone();
    cfg.seed = manifest.master_seed;
    let (output, _) = execute_with_threads(&cfg, threads)?;
    let fresh: BTreeMap<&str, &Artifact> = output.artifacts.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut entries = Vec::new();
    for record in &manifest.artifacts {
        let produced = fresh.get(record.name.as_str());
        let actual = produced.map(|a| a.sha256());
        let mut regenerated = false;
        let path = dir.join(&record.name);
        if let Some(a) = produced {
            if !path.exists() && actual.as_deref() == Some(record.sha256.as_str()) {
                write_artifact(dir, a)?;
                regenerated = true;
            }
        }
        entries.push(ReplayEntry {
            name: record.name.clone(),
            expected: record.sha256.clone(),
            actual,
            regenerated,
        });
    }
    Ok(ReplayReport { entries })
}
