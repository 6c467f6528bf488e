//! Optimizers, the training loop and the finite-difference gradient check.

mod fit;
mod gradcheck;

pub use fit::{fit, FitResult, LogRecord, TrainLog};
pub use gradcheck::{
    gradcheck, gradcheck_params, gradcheck_point, gradcheck_schema, GradcheckReport, GroupCheck,
    GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::project_control_gate;
use crate::model::{Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    256
}
fn default_epochs() -> usize {
    5
}
fn default_l1() -> f64 {
    1e-4
}
fn default_patience() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// L1 weight on the control gate.
    #[serde(default = "default_l1")]
    pub l1: f64,
    #[serde(default)]
    pub seed: u64,
    /// Evaluations without a new best validation AUC before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Evaluate every this many optimizer steps; `None` evaluates at the end
    /// of each epoch.
    #[serde(default)]
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: default_optimizer(),
            lr: default_lr(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            l1: default_l1(),
            seed: 0,
            patience: default_patience(),
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted: it freezes the parameters
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return Err(Error::Config(format!("train.l1 must be finite and >= 0, got {}", self.l1)));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("train.eval_every must be positive".into()));
        }
        Ok(())
    }
}

fn check_finite(params: &ModelParams, grads: &Gradients) -> Result<()> {
    let bad = |group: &str| Err(Error::NonFinite { group: group.to_string() });
    if grads.embed.values().flatten().any(|g| !g.is_finite()) {
        return bad("embed");
    }
    if !grads.gate_l1.is_finite() {
        return bad("gate");
    }
    if grads.wide.values().any(|g| !g.is_finite()) {
        return bad("wide");
    }
    for (name, g) in grads.dense.groups() {
        if g.iter().any(|x| !x.is_finite()) {
            return bad(&name);
        }
    }
    debug_assert_eq!(params.dense.groups().len(), grads.dense.groups().len());
    Ok(())
}

/// `θ ← θ − lr·g`, then the control-gate projection.
pub fn step_sgd(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    check_finite(params, grads)?;
    let d = params.arch.d;
    for (&id, row) in &grads.embed {
        let dst = params.embed.row_mut(id as usize);
        for (x, g) in dst.iter_mut().zip(row) {
            *x -= lr * g;
        }
        debug_assert_eq!(row.len(), d);
    }
    for (&id, &g) in &grads.wide {
        params.wide[id as usize] -= lr * g;
    }
    for ((_, dst), (_, g)) in params.dense.groups_mut().into_iter().zip(grads.dense.groups()) {
        for (x, gx) in dst.iter_mut().zip(g) {
            *x -= lr * gx;
        }
    }
    shrink_gate(params, grads, lr);
    Ok(())
}

/// Proximal step for `l1 · Σ g_c` on the non-negative orthant: subtract
/// `lr · l1`, then clamp at zero.
fn shrink_gate(params: &mut ModelParams, grads: &Gradients, lr: f64) {
    for g in &mut params.dense.interaction.gate {
        *g -= lr * grads.gate_l1;
    }
    project_control_gate(&mut params.dense.interaction.gate);
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.groups().iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam applied densely to every group (table rows absent
/// from the batch see a zero gradient). The L1 term bypasses the moment
/// estimates and is applied as the same proximal shrink as in SGD, so its
/// strength scales with `l1` rather than being normalized away.
pub fn step_adam(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    check_finite(params, grads)?;
    let dense_grads = grads.densify(params, false);
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (gi, ((_, theta), (_, g))) in params.groups_mut().into_iter().zip(&dense_grads).enumerate() {
        let (m, v) = (&mut state.m[gi], &mut state.v[gi]);
        for i in 0..theta.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    shrink_gate(params, grads, lr);
    Ok(())
}
