//! Run configuration files and the data preparation they describe.
//!
//! Relative data paths resolve against the directory holding the config
//! file. `output_dir` resolves against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    downsample_negatives, generate_synthetic, read_dataset, split_chronological, split_random, split_tail,
    DataFormat, FieldSchema, Instance, ReadOptions, SynthSpec,
};
use crate::error::{Error, Result};
use crate::model::Arch;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Trailing rows become validation (time order preserved).
    #[default]
    Tail,
    /// Seeded random subset becomes validation.
    Random,
}

fn default_buckets() -> u32 {
    100_000
}
fn default_continuous_buckets() -> u32 {
    64
}
fn default_max_malformed() -> f64 {
    0.01
}
fn default_valid_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Synthetic spec file; mutually exclusive with `train`.
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<DataFormat>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Separate validation file; when absent the training file is split.
    #[serde(default)]
    pub valid: Option<PathBuf>,
    /// Schema file. Required for generic_csv; criteo_tsv and avazu_csv fall
    /// back to their built-in field lists sized by the bucket counts.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default = "default_buckets")]
    pub buckets: u32,
    #[serde(default = "default_continuous_buckets")]
    pub continuous_buckets: u32,
    /// Negative keep rate applied to the training split; absent keeps all.
    #[serde(default)]
    pub downsample: Option<f64>,
    #[serde(default = "default_max_malformed")]
    pub max_malformed: f64,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    /// Exact validation size; overrides `valid_fraction`.
    #[serde(default)]
    pub valid_rows: Option<usize>,
    #[serde(default)]
    pub split: SplitKind,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Arch,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Encoded training and validation instances with their schema.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema: FieldSchema,
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
}

/// Independent stream seeds derived from the run seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub(crate) const SEED_INIT: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_DOWNSAMPLE: u64 = 3;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses and validates; relative paths resolve against the working
    /// directory until [`RunConfig::with_base_dir`] says otherwise.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// One seed governs initialization, splitting, sampling and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        let bad = |m: &str| Err(Error::Config(format!("data.{m}")));
        match (&d.synthetic, &d.train) {
            (Some(_), Some(_)) => return bad("synthetic and data.train are mutually exclusive"),
            (None, None) => return bad("train or data.synthetic is required"),
            _ => {}
        }
        if d.synthetic.is_some() && (d.valid.is_some() || d.schema.is_some() || d.format.is_some()) {
            return bad("synthetic cannot be combined with valid, schema or format");
        }
        if !(0.0..1.0).contains(&d.valid_fraction) {
            return bad(&format!("valid_fraction must lie in [0, 1), got {}", d.valid_fraction));
        }
        if let Some(rate) = d.downsample {
            if !(rate > 0.0 && rate <= 1.0) {
                return bad(&format!("downsample must lie in (0, 1], got {rate}"));
            }
        }
        if !(0.0..=1.0).contains(&d.max_malformed) {
            return bad(&format!("max_malformed must lie in [0, 1], got {}", d.max_malformed));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn schema(&self, format: DataFormat) -> Result<FieldSchema> {
        let d = &self.data;
        match (&d.schema, format) {
            (Some(p), _) => FieldSchema::load(&self.resolve(p)),
            (None, DataFormat::CriteoTsv) => FieldSchema::criteo(d.buckets, d.continuous_buckets),
            (None, DataFormat::AvazuCsv) => FieldSchema::avazu(d.buckets),
            (None, DataFormat::GenericCsv) => Err(Error::Config("data.schema is required for generic_csv".into())),
        }
    }

    /// Generates or reads the data, splits it and applies down-sampling.
    pub fn prepare_data(&self) -> Result<PreparedData> {
        let d = &self.data;
        let seed = self.seed();
        let (schema, all, valid) = if let Some(spec_path) = &d.synthetic {
            let spec = load_synth_spec(&self.resolve(spec_path))?;
            let synth = generate_synthetic(&spec)?;
            (synth.schema, synth.instances, None)
        } else {
            let format = d.format.unwrap_or(DataFormat::GenericCsv);
            let schema = self.schema(format)?;
            let opts = ReadOptions {
                max_malformed_ratio: d.max_malformed,
            };
            let train_path = self.resolve(d.train.as_ref().expect("validated"));
            let all = read_dataset(&train_path, format, &schema, opts)?.instances;
            let valid = match &d.valid {
                Some(p) => Some(read_dataset(&self.resolve(p), format, &schema, opts)?.instances),
                None => None,
            };
            (schema, all, valid)
        };
        let (train, valid) = match valid {
            Some(v) => (all, v),
            None => match (d.valid_rows, d.split) {
                (Some(k), SplitKind::Tail) => split_tail(all, k),
                (Some(k), SplitKind::Random) => {
                    let fraction = if all.is_empty() { 0.0 } else { k as f64 / all.len() as f64 };
                    split_random(all, fraction.min(0.999_999), derive_seed(seed, SEED_SPLIT))?
                }
                (None, SplitKind::Tail) => split_chronological(all, d.valid_fraction)?,
                (None, SplitKind::Random) => split_random(all, d.valid_fraction, derive_seed(seed, SEED_SPLIT))?,
            },
        };
        let train = match d.downsample {
            Some(rate) => downsample_negatives(train, rate, derive_seed(seed, SEED_DOWNSAMPLE))?.collect(),
            None => train,
        };
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        Ok(PreparedData { schema, train, valid })
    }
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model": {"kind": "fm"}, "data": {"synthetic": "s.json"}}"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.model.d, 8);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.data.valid_fraction, 0.1);
        assert_eq!(cfg.data.split, SplitKind::Tail);
        assert_eq!(cfg.output_dir, PathBuf::from("runs"));
    }

    #[test]
    fn unknown_fields_are_named() {
        let text = r#"{"model": {"kind": "fm", "dim": 4}, "data": {"synthetic": "s.json"}}"#;
        let err = RunConfig::from_json(text).unwrap_err().to_string();
        assert!(err.contains("dim"), "{err}");
        let text = r#"{"model": {"kind": "fm"}, "data": {"synthetic": "s.json"}, "train": {"lr": -1}}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn data_source_must_be_unique() {
        let both = r#"{"model": {"kind": "lr"}, "data": {"synthetic": "s.json", "train": "t.csv"}}"#;
        assert!(RunConfig::from_json(both).is_err());
        let neither = r#"{"model": {"kind": "lr"}, "data": {}}"#;
        assert!(RunConfig::from_json(neither).is_err());
    }

    #[test]
    fn paths_resolve_against_base_dir() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap().with_base_dir("/etc/cfg");
        assert_eq!(cfg.resolve(Path::new("s.json")), PathBuf::from("/etc/cfg/s.json"));
        assert_eq!(cfg.resolve(Path::new("/abs")), PathBuf::from("/abs"));
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a = derive_seed(7, SEED_INIT);
        assert_ne!(a, derive_seed(7, SEED_SPLIT));
        assert_ne!(a, derive_seed(8, SEED_INIT));
        assert_eq!(a, derive_seed(7, SEED_INIT));
    }
}
