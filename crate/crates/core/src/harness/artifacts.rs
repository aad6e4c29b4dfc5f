//! On-disk layout of a run: effective config, event log, metric samples
//! and a text summary.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::world::RunOutput;
use crate::telemetry::{summarize, RunArtifacts, Summary};

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const EVENTS: &str = "events.jsonl";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.txt";

/// Identity of a run, stored next to the effective config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub event_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    #[serde(flatten)]
    meta: RunMeta,
    config: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_owned(), source }
}

pub fn meta_of(out: &RunOutput) -> RunMeta {
    RunMeta {
        scenario: out.scenario.clone(),
        mode: out.mode.as_str().into(),
        seed: out.seed,
        config_hash: out.config_hash.clone(),
        event_hash: out.artifacts.event_hash(),
    }
}

/// Writes all four artifacts into `dir`, creating it if needed.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<(), ArtifactError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = meta_of(out);

    let p = dir.join(EFFECTIVE_CONFIG);
    let file = ConfigFile {
        meta: meta.clone(),
        config: out.effective_config.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("json value");
    fs::write(&p, text + "\n").map_err(io_err(&p))?;

    let p = dir.join(EVENTS);
    out.artifacts.export_jsonl(&p).map_err(io_err(&p))?;

    let p = dir.join(METRICS);
    let f = fs::File::create(&p).map_err(io_err(&p))?;
    let mut w = BufWriter::new(f);
    writeln!(
        w,
        "# scenario={} mode={} seed={} config_hash={}",
        meta.scenario, meta.mode, meta.seed, meta.config_hash
    )
    .map_err(io_err(&p))?;
    out.artifacts.write_csv(w).map_err(io_err(&p))?;

    let p = dir.join(SUMMARY);
    fs::write(&p, render_summary(&out.summary, &out.violations)).map_err(io_err(&p))?;
    Ok(())
}

pub fn render_summary(summary: &Summary, violations: &[String]) -> String {
    let mut s = summary.render();
    if violations.is_empty() {
        s.push_str("\ninvariants   ok\n");
    } else {
        s.push_str("\ninvariants   VIOLATED\n");
        for v in violations {
            s.push_str(&format!("  {v}\n"));
        }
    }
    s
}

/// A run read back from disk, with the summary recomputed from the log.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub meta: RunMeta,
    pub config: serde_json::Value,
    pub artifacts: RunArtifacts,
    pub summary: Summary,
}

pub fn read_run(dir: &Path) -> Result<LoadedRun, ArtifactError> {
    let p = dir.join(EFFECTIVE_CONFIG);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    let file: ConfigFile = serde_json::from_str(&text).map_err(|e| ArtifactError::Format {
        path: p.clone(),
        detail: e.to_string(),
    })?;
    let p = dir.join(EVENTS);
    let artifacts = RunArtifacts::import_jsonl(&p).map_err(io_err(&p))?;
    let summary = summarize(&artifacts.events);
    if summary.event_hash != file.meta.event_hash {
        return Err(ArtifactError::Format {
            path: p,
            detail: format!(
                "event log hash {} does not match recorded {}",
                summary.event_hash, file.meta.event_hash
            ),
        });
    }
    Ok(LoadedRun {
        meta: file.meta,
        config: file.config,
        artifacts,
        summary,
    })
}
