//! Run manifest: what ran, with which inputs, and what it produced.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use forcegp::trainer::TrainedModel;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::csvio::{write_table, Table, WrittenTable, TABLE_SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelRecord {
    pub label: String,
    pub theta: forcegp::Hyperparameters,
    pub log_likelihood: f64,
    pub jitter: Option<f64>,
    pub diagnostics: Option<forcegp::trainer::TrainDiagnostics>,
}

/// Mutable state threaded through an experiment run.
#[derive(Debug)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub outputs: Vec<WrittenTable>,
    pub timings: Vec<StageTiming>,
    pub models: Vec<ModelRecord>,
    pub metrics: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>) -> CliResult<Self> {
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        Ok(Self {
            out_dir,
            outputs: Vec::new(),
            timings: Vec::new(),
            models: Vec::new(),
            metrics: Map::new(),
            warnings: Vec::new(),
        })
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        let seconds = t0.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.2} s");
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
        out
    }

    pub fn write(&mut self, table: &Table) -> CliResult<()> {
        let w = write_table(&self.out_dir, table)?;
        log::debug!("wrote {} ({} rows)", w.file, w.rows);
        self.outputs.push(w);
        Ok(())
    }

    pub fn record_model(&mut self, label: impl Into<String>, m: &TrainedModel) {
        self.models.push(ModelRecord {
            label: label.into(),
            theta: m.theta,
            log_likelihood: m.final_likelihood,
            jitter: m.factored.as_ref().map(|f| f.jitter()),
            diagnostics: m.diagnostics.clone(),
        });
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.metrics
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes `manifest.json` via a temporary file and rename.
pub fn write_manifest(ctx: &RunContext, cfg: &RunConfig, config_text: &str) -> CliResult<PathBuf> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = json!({
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool": { "name": "forcegp", "version": env!("CARGO_PKG_VERSION") },
        "table_schema_version": TABLE_SCHEMA_VERSION,
        "experiment": cfg.experiment.kind,
        "seed": cfg.experiment.seed,
        "config_sha256": config_hash(config_text),
        "config": cfg,
        "written_unix": started,
        "timings": ctx.timings,
        "outputs": ctx.outputs,
        "models": ctx.models,
        "metrics": ctx.metrics,
        "warnings": ctx.warnings,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::data(&ctx.out_dir, e.to_string()))?;
    write_atomic(&ctx.out_dir.join(MANIFEST_FILE), text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<PathBuf> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}
