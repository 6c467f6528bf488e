use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{step_adam, step_sgd, AdamState, OptimizerKind, TrainConfig};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::metrics::{auc, logloss};
use crate::model::{loss_and_grad, predict_batch, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    /// Example-weighted mean training loss since the previous evaluation.
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
    pub gc_sparsity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,loss,val_auc,val_logloss,gc_sparsity";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.train_loss, r.val_auc, r.val_logloss, r.gc_sparsity
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> Option<&LogRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&LogRecord>, r| match best {
                Some(b) if b.val_auc >= r.val_auc => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters at the evaluation with the highest validation AUC.
    pub params: ModelParams,
    pub log: TrainLog,
    pub steps: usize,
    pub stopped_early: bool,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct Tracker<'a> {
    valid: &'a [Instance],
    labels: Vec<u8>,
    patience: usize,
    best_auc: f64,
    best: Option<ModelParams>,
    since_best: usize,
    log: TrainLog,
    loss_sum: f64,
    loss_n: usize,
}

impl Tracker<'_> {
    /// Returns true when training should stop.
    fn evaluate(&mut self, params: &ModelParams, step: usize) -> Result<bool> {
        let scores = predict_batch(params, self.valid)?;
        let val_auc = auc(&scores, &self.labels)?;
        let train_loss = if self.loss_n == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.loss_n as f64
        };
        self.log.records.push(LogRecord {
            step,
            train_loss,
            val_auc,
            val_logloss: logloss(&scores, &self.labels),
            gc_sparsity: params.gate_sparsity(),
        });
        self.loss_sum = 0.0;
        self.loss_n = 0;
        if val_auc > self.best_auc || self.best.is_none() {
            self.best_auc = val_auc;
            self.best = Some(params.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok(self.since_best >= self.patience)
    }
}

/// Mini-batch training with per-epoch seeded shuffling and early stopping on
/// validation AUC.
pub fn fit(
    mut params: ModelParams,
    train: &[Instance],
    valid: &[Instance],
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut adam = match config.optimizer {
        OptimizerKind::Adam => Some(AdamState::new(&params)),
        OptimizerKind::Sgd => None,
    };
    let mut tracker = Tracker {
        valid,
        labels: valid.iter().map(|i| i.label).collect(),
        patience: config.patience,
        best_auc: f64::NEG_INFINITY,
        best: None,
        since_best: 0,
        log: TrainLog::default(),
        loss_sum: 0.0,
        loss_n: 0,
    };
    let mut step = 0usize;
    let mut stopped = false;
    let mut evaluated_at = None;
    let mut order: Vec<usize> = Vec::with_capacity(train.len());
    let mut batch: Vec<Instance> = Vec::with_capacity(config.batch_size);
    'epochs: for epoch in 0..config.epochs {
        order.clear();
        order.extend(0..train.len());
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch)));
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (loss, grads) = loss_and_grad(&params, &batch, config.l1)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { group: "loss".into() });
            }
            match adam.as_mut() {
                Some(state) => step_adam(&mut params, &grads, state, config.lr)?,
                None => step_sgd(&mut params, &grads, config.lr)?,
            }
            step += 1;
            tracker.loss_sum += loss * batch.len() as f64;
            tracker.loss_n += batch.len();
            if let Some(every) = config.eval_every {
                if step % every == 0 {
                    evaluated_at = Some(step);
                    if tracker.evaluate(&params, step)? {
                        stopped = true;
                        break 'epochs;
                    }
                }
            }
        }
        if config.eval_every.is_none() {
            evaluated_at = Some(step);
            if tracker.evaluate(&params, step)? {
                stopped = true;
                break;
            }
        }
    }
    if evaluated_at != Some(step) && !stopped {
        tracker.evaluate(&params, step)?;
    }
    let stopped_early = stopped && tracker.log.records.len() < max_evals(train.len(), config);
    Ok(FitResult {
        params: tracker.best.expect("at least one evaluation ran"),
        log: tracker.log,
        steps: step,
        stopped_early,
    })
}

fn max_evals(n_train: usize, config: &TrainConfig) -> usize {
    let per_epoch = n_train.div_ceil(config.batch_size);
    match config.eval_every {
        None => config.epochs,
        Some(every) => (per_epoch * config.epochs).div_ceil(every),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_tail, FieldSchema, SynthSpec, SynthTask};
    use crate::model::{Arch, ModelKind};

    fn data(n: usize) -> (ModelParams, Vec<Instance>, Vec<Instance>) {
        let spec = SynthSpec {
            n_fields: 4,
            cardinality: 12,
            buckets: 64,
            d_true: 2,
            m_true: 2,
            assignment: vec![],
            task: SynthTask::MultiSpace,
            temperature: 0.5,
            n_records: n,
            seed: 5,
        };
        let synth = generate_synthetic(&spec).unwrap();
        let arch = Arch::new(ModelKind::Tfnet, 4, 2, vec![8], vec![8]);
        let params = ModelParams::init(&synth.schema, &arch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (train, valid) = split_tail(synth.instances, n / 5);
        (params, train, valid)
    }

    fn config() -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            batch_size: 32,
            epochs: 3,
            l1: 1e-4,
            seed: 11,
            patience: 10,
            eval_every: Some(10),
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (p, train, valid) = data(500);
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = TrainConfig {
                lr: 0.0,
                optimizer,
                eval_every: None,
                ..config()
            };
            let out = fit(p.clone(), &train, &valid, &cfg).unwrap();
            assert_eq!(out.params, p);
            let first = out.log.records[0].train_loss;
            for r in &out.log.records {
                assert!((r.train_loss - first).abs() <= 1e-12 * first.abs(), "{r:?}");
                assert_eq!(r.val_auc, out.log.records[0].val_auc);
            }
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let (p, train, valid) = data(400);
        let a = fit(p.clone(), &train, &valid, &config()).unwrap();
        let b = fit(p, &train, &valid, &config()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.to_csv(), b.log.to_csv());
    }

    #[test]
    fn returns_best_checkpoint() {
        let (p, train, valid) = data(400);
        let out = fit(p, &train, &valid, &config()).unwrap();
        let best = out.log.best().unwrap().val_auc;
        assert!(out.log.records.iter().all(|r| r.val_auc <= best));
        let labels: Vec<u8> = valid.iter().map(|i| i.label).collect();
        let got = auc(&predict_batch(&out.params, &valid).unwrap(), &labels).unwrap();
        assert_eq!(got, best);
    }

    #[test]
    fn patience_zero_stops_after_first_evaluation() {
        let (p, train, valid) = data(400);
        let cfg = TrainConfig { patience: 0, ..config() };
        let out = fit(p, &train, &valid, &cfg).unwrap();
        assert_eq!(out.log.records.len(), 1);
        assert_eq!(out.steps, 10);
        assert!(out.stopped_early);
    }

    #[test]
    fn control_gate_stays_non_negative_and_l1_sparsifies() {
        let (p, train, valid) = data(600);
        let mut sparsity = Vec::new();
        for l1 in [0.0, 0.5] {
            let cfg = TrainConfig {
                l1,
                optimizer: OptimizerKind::Sgd,
                lr: 0.5,
                patience: 100,
                eval_every: None,
                ..config()
            };
            let out = fit(p.clone(), &train, &valid, &cfg).unwrap();
            assert!(out.params.dense.interaction.gate.iter().all(|&g| g >= 0.0));
            sparsity.push(out.log.records.last().unwrap().gc_sparsity);
        }
        assert!(sparsity[1] >= sparsity[0], "{sparsity:?}");
        assert!(sparsity[1] > 0.0, "{sparsity:?}");
    }

    #[test]
    fn full_batch_loss_drops_on_separable_data() {
        let schema = FieldSchema::categorical(&["a", "b", "c"], 16).unwrap();
        // the label is a function of field `a` alone
        let data: Vec<Instance> = (0..40)
            .map(|i| {
                let raw = [format!("{}", i % 4), format!("{}", i % 7), format!("{}", i % 5)];
                schema.encode_record(&raw, u8::from(i % 4 < 2), i + 1).unwrap()
            })
            .collect();
        for kind in ModelKind::ALL {
            let arch = Arch::new(kind, 4, 2, vec![8], vec![8]);
            let mut p = ModelParams::init(&schema, &arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let mut state = AdamState::new(&p);
            let first = loss_and_grad(&p, &data, 0.0).unwrap().0;
            for _ in 0..50 {
                let (_, g) = loss_and_grad(&p, &data, 0.0).unwrap();
                step_adam(&mut p, &g, &mut state, 0.01).unwrap();
            }
            let last = loss_and_grad(&p, &data, 0.0).unwrap().0;
            assert!(last <= 0.9 * first, "{kind}: {first} -> {last}");
        }
    }

    #[test]
    fn empty_validation_is_an_error() {
        let (p, train, _) = data(100);
        assert!(matches!(fit(p, &train, &[], &config()), Err(Error::Data(_))));
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let (p, train, valid) = data(200);
        let out = fit(p, &train, &valid, &TrainConfig { epochs: 1, ..config() }).unwrap();
        let csv = out.log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TrainLog::HEADER);
        assert_eq!(lines.len(), out.log.records.len() + 1);
    }
}
