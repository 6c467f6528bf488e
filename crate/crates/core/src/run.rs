//! End-to-end runs: initialize, fit, evaluate, and write artifacts.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, PreparedData, RunConfig, SEED_INIT};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{predict_batch, save_snapshot, ModelParams};
use crate::train::{fit, FitResult};

pub const SNAPSHOT_FILE: &str = "model.snap";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: FitResult,
    /// Validation metrics of the returned (best) parameters.
    pub report: EvalReport,
}

/// Trains `config.model` on prepared data and evaluates the best
/// checkpoint on the validation split.
pub fn train_model(config: &RunConfig, data: &PreparedData) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed(), SEED_INIT));
    let params = ModelParams::init(&data.schema, &config.model, &mut rng)?;
    let fit = fit(params, &data.train, &data.valid, &config.train)?;
    let report = evaluate(&fit.params, &data.valid)?;
    Ok(RunOutcome { fit, report })
}

pub fn evaluate(params: &ModelParams, data: &[Instance]) -> Result<EvalReport> {
    let scores = predict_batch(params, data)?;
    let labels: Vec<u8> = data.iter().map(|i| i.label).collect();
    EvalReport::new(params.kind().name(), &scores, &labels)
}

/// Paths of the three artifacts a training run leaves behind.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub snapshot: PathBuf,
    pub log: PathBuf,
    pub report: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Artifacts {
            snapshot: dir.join(SNAPSHOT_FILE),
            log: dir.join(LOG_FILE),
            report: dir.join(REPORT_FILE),
        }
    }
}

/// Writes the log and report, then the snapshot last (atomically).
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<Artifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Artifacts::in_dir(dir);
    outcome.fit.log.write_csv(&out.log)?;
    std::fs::write(&out.report, outcome.report.to_json()).map_err(|e| Error::io(&out.report, e))?;
    save_snapshot(&outcome.fit.params, &out.snapshot)?;
    Ok(out)
}
