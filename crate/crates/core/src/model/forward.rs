use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{DenseParams, Mlp, ModelKind, ModelParams};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::interaction::{backward_accumulate, interact_forward, InteractionTape};
use crate::linalg::{dot, relu, relu_grad, sigmoid, softplus};

/// Examples per gradient work unit. Partial sums are reduced in ascending
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 32;

/// Pre- and post-activation values of each tower layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MlpTape {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Per-example activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    /// Concatenated field embeddings.
    pub x_v: Vec<f64>,
    pub interaction: Option<InteractionTape>,
    pub s_h: Vec<f64>,
    pub tower_sh: MlpTape,
    pub tower_xv: MlpTape,
    /// Dense input of the output layer.
    pub features: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

fn mlp_forward(mlp: &Mlp, input: &[f64]) -> (Vec<f64>, MlpTape) {
    let mut tape = MlpTape::default();
    let mut x = input.to_vec();
    for layer in &mlp.layers {
        let pre: Vec<f64> = (0..layer.w.rows())
            .map(|r| dot(layer.w.row(r), &x) + layer.b[r])
            .collect();
        let post: Vec<f64> = pre.iter().map(|&z| relu(z)).collect();
        tape.pre.push(pre);
        tape.post.push(post.clone());
        x = post;
    }
    (x, tape)
}

/// Accumulates layer gradients into `grad` and returns d(input).
fn mlp_backward(mlp: &Mlp, tape: &MlpTape, input: &[f64], d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
    let mut d = d_out.to_vec();
    for l in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[l];
        let x = if l == 0 { input } else { &tape.post[l - 1] };
        let d_pre: Vec<f64> = d
            .iter()
            .zip(&tape.pre[l])
            .map(|(g, &z)| g * relu_grad(z))
            .collect();
        let g = &mut grad.layers[l];
        for (r, &dp) in d_pre.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            g.b[r] += dp;
            for (gw, &xc) in g.w.row_mut(r).iter_mut().zip(x) {
                *gw += dp * xc;
            }
        }
        let mut d_in = vec![0.0; x.len()];
        for (r, &dp) in d_pre.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            for (di, &w) in d_in.iter_mut().zip(layer.w.row(r)) {
                *di += dp * w;
            }
        }
        d = d_in;
    }
    d
}

/// `Σ_{i<j} <v_i, v_j>` via `½ Σ_k ((Σ_i v_ik)² − Σ_i v_ik²)`.
pub fn fm_pairwise(x_v: &[f64], n: usize, d: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..d {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for f in 0..n {
            let v = x_v[f * d + k];
            sum += v;
            sq += v * v;
        }
        total += sum * sum - sq;
    }
    0.5 * total
}

/// Forward pass for one instance.
pub fn forward(params: &ModelParams, inst: &Instance) -> Result<(f64, ForwardTape)> {
    let n = params.n_fields();
    if inst.ids.len() != n {
        return Err(Error::dim("forward instance", n, inst.ids.len()));
    }
    debug_assert!(params.schema.contains(inst), "instance outside schema windows");
    let d = params.arch.d;
    let mut x_v = Vec::with_capacity(n * d);
    let mut logit = 0.0;
    for &id in &inst.ids {
        logit += params.wide[id as usize];
        x_v.extend_from_slice(params.embed.row(id as usize));
    }
    let dense = &params.dense;
    let mut tape = ForwardTape {
        x_v,
        interaction: None,
        s_h: Vec::new(),
        tower_sh: MlpTape::default(),
        tower_xv: MlpTape::default(),
        features: Vec::new(),
        logit: 0.0,
        p: 0.0,
    };
    match params.kind() {
        ModelKind::Lr => {}
        ModelKind::Fm => logit += fm_pairwise(&tape.x_v, n, d),
        kind @ (ModelKind::Tfnet | ModelKind::TfnetMinus) => {
            let embeds: Vec<&[f64]> = tape.x_v.chunks(d).collect();
            let (s_h, itape) = interact_forward(&embeds, &dense.interaction)?;
            if kind == ModelKind::Tfnet {
                let (x_h, xt) = mlp_forward(&dense.tower_xv, &tape.x_v);
                let (t_h, st) = mlp_forward(&dense.tower_sh, &s_h);
                tape.features = x_h;
                tape.features.extend_from_slice(&t_h);
                tape.tower_xv = xt;
                tape.tower_sh = st;
            } else {
                tape.features = s_h.clone();
            }
            tape.s_h = s_h;
            tape.interaction = Some(itape);
            logit += dot(&dense.w_out, &tape.features);
        }
    }
    logit += dense.b_out;
    // clamp keeps p strictly inside (0, 1) once the logistic saturates
    let p = sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    tape.logit = logit;
    tape.p = p;
    Ok((p, tape))
}

/// Gradient of a scalar loss in the parameter layout. Table gradients are
/// sparse: only rows touched by the batch are stored. The L1 subgradient on
/// the control gate is kept apart from the data gradient in
/// `dense.interaction.gate`; the full gate gradient is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: BTreeMap<u32, Vec<f64>>,
    pub wide: BTreeMap<u32, f64>,
    pub dense: DenseParams,
    /// Added to every control-gate coordinate.
    pub gate_l1: f64,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let mut dense = params.dense.clone();
        for (_, g) in dense.groups_mut() {
            g.fill(0.0);
        }
        Gradients {
            embed: BTreeMap::new(),
            wide: BTreeMap::new(),
            dense,
            gate_l1: 0.0,
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (id, row) in &other.embed {
            let acc = self.embed.entry(*id).or_insert_with(|| vec![0.0; row.len()]);
            for (a, b) in acc.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (id, g) in &other.wide {
            *self.wide.entry(*id).or_insert(0.0) += g;
        }
        self.dense.add_assign(&other.dense);
        self.gate_l1 += other.gate_l1;
    }

    fn add_embed(&mut self, id: u32, g: &[f64]) {
        let acc = self.embed.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Dense copy of every group, named and ordered like
    /// [`ModelParams::groups`].
    pub fn dense_groups(&self, params: &ModelParams) -> Vec<(String, Vec<f64>)> {
        self.densify(params, true)
    }

    /// As [`Gradients::dense_groups`], optionally leaving out the L1 term.
    pub(crate) fn densify(&self, params: &ModelParams, with_l1: bool) -> Vec<(String, Vec<f64>)> {
        let d = params.arch.d;
        let mut embed = vec![0.0; params.embed.as_slice().len()];
        for (&id, row) in &self.embed {
            embed[id as usize * d..(id as usize + 1) * d].copy_from_slice(row);
        }
        let mut wide = vec![0.0; params.wide.len()];
        for (&id, &g) in &self.wide {
            wide[id as usize] = g;
        }
        let mut out = vec![("embed".to_string(), embed), ("wide".to_string(), wide)];
        out.extend(self.dense.groups().into_iter().map(|(n, g)| {
            let mut g = g.to_vec();
            if with_l1 && n == "gate" {
                g.iter_mut().for_each(|x| *x += self.gate_l1);
            }
            (n, g)
        }));
        out
    }
}

/// Adds `dlogit · ∂logit/∂θ` for one example into `g`.
fn backward(params: &ModelParams, inst: &Instance, tape: &ForwardTape, dlogit: f64, g: &mut Gradients) {
    let n = params.n_fields();
    let d = params.arch.d;
    let dense = &params.dense;
    g.dense.b_out += dlogit;
    for &id in &inst.ids {
        *g.wide.entry(id).or_insert(0.0) += dlogit;
    }
    match params.kind() {
        ModelKind::Lr => {}
        ModelKind::Fm => {
            let mut sum = vec![0.0; d];
            for v in tape.x_v.chunks(d) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
            for (f, v) in tape.x_v.chunks(d).enumerate() {
                let dv: Vec<f64> = sum.iter().zip(v).map(|(s, x)| dlogit * (s - x)).collect();
                g.add_embed(inst.ids[f], &dv);
            }
        }
        kind @ (ModelKind::Tfnet | ModelKind::TfnetMinus) => {
            for (gw, &x) in g.dense.w_out.iter_mut().zip(&tape.features) {
                *gw += dlogit * x;
            }
            let d_feat: Vec<f64> = dense.w_out.iter().map(|w| dlogit * w).collect();
            let (ds_h, dx_v) = if kind == ModelKind::Tfnet {
                let split = dense.tower_xv.output_len(n * d);
                let dx_v = mlp_backward(
                    &dense.tower_xv,
                    &tape.tower_xv,
                    &tape.x_v,
                    &d_feat[..split],
                    &mut g.dense.tower_xv,
                );
                let ds_h = mlp_backward(
                    &dense.tower_sh,
                    &tape.tower_sh,
                    &tape.s_h,
                    &d_feat[split..],
                    &mut g.dense.tower_sh,
                );
                (ds_h, dx_v)
            } else {
                (d_feat, vec![0.0; n * d])
            };
            let embeds: Vec<&[f64]> = tape.x_v.chunks(d).collect();
            let mut d_embeds: Vec<Vec<f64>> = dx_v.chunks(d).map(<[f64]>::to_vec).collect();
            let itape = tape.interaction.as_ref().expect("interaction tape present");
            let gi = &mut g.dense.interaction;
            backward_accumulate(
                itape,
                &embeds,
                &dense.interaction,
                &ds_h,
                &mut d_embeds,
                &mut gi.t2,
                &mut gi.t3,
                &mut gi.gate,
            );
            for (f, dv) in d_embeds.iter().enumerate() {
                g.add_embed(inst.ids[f], dv);
            }
        }
    }
}

fn check_batch(batch: &[Instance]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// Cross-entropy of one example from its logit: `softplus(z) − y z`.
fn example_loss(logit: f64, y: f64) -> f64 {
    softplus(logit) - y * logit
}

fn l1_term(params: &ModelParams, l1: f64) -> f64 {
    l1 * params.dense.interaction.gate.iter().sum::<f64>()
}

/// Mean cross-entropy over the batch plus `l1 · Σ g_c`, and its exact
/// gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[Instance], l1: f64) -> Result<(f64, Gradients)> {
    check_batch(batch)?;
    let scale = 1.0 / batch.len() as f64;
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Gradients)> {
            let mut g = Gradients::zeros_like(params);
            let mut loss = 0.0;
            for inst in chunk {
                let (p, tape) = forward(params, inst)?;
                loss += example_loss(tape.logit, inst.y());
                backward(params, inst, &tape, (p - inst.y()) * scale, &mut g);
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = partials.into_iter();
    let (mut loss_sum, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss_sum += l;
        grads.add_assign(&g);
    }
    grads.gate_l1 = l1;
    Ok((loss_sum * scale + l1_term(params, l1), grads))
}

/// The loss of [`loss_and_grad`] without the gradient.
pub fn batch_loss(params: &ModelParams, batch: &[Instance], l1: f64) -> Result<f64> {
    check_batch(batch)?;
    let sums = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<f64> {
            let mut loss = 0.0;
            for inst in chunk {
                let (_, tape) = forward(params, inst)?;
                loss += example_loss(tape.logit, inst.y());
            }
            Ok(loss)
        })
        .collect::<Result<Vec<_>>>()?;
    let loss_sum = sums.into_iter().fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a + l)));
    Ok(loss_sum.expect("non-empty batch") / batch.len() as f64 + l1_term(params, l1))
}

/// Click probabilities for every instance, in input order.
pub fn predict_batch(params: &ModelParams, batch: &[Instance]) -> Result<Vec<f64>> {
    batch
        .par_iter()
        .map(|inst| forward(params, inst).map(|(p, _)| p))
        .collect()
}
