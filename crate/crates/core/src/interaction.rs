//! Tensor-based feature interaction layer.
//!
//! For every field pair `(i, j)` with `i < j`, the layer scores the `m`
//! semantic slices with `a_ij = v_i^T T3 v_j`, turns the scores into an
//! adaptive gate `g_ij = softmax(a_ij)`, and weights the raw bilinear
//! interaction `b_ij = v_i^T T2 v_j` slice by slice: `s_ij = g_ij ⊙ b_ij`.
//! The `q = n(n-1)/2` vectors `s_ij` are the rows of `S`, and the
//! non-negative control gate selects among them: `s_h = S^T g_c`.
//!
//! The gate-weighted tensor `g_ij ⊙ T2` is never materialized; scaling each
//! slice's bilinear value by its gate weight is the same quantity.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bilinear_backward, bilinear_into, check_bilinear, dot, softmax, Mat, Tensor3};

/// Tag stored in snapshots describing the row order of `S`.
pub const PAIR_ORDER_TAG: &str = "lex_i_lt_j";

/// Number of unordered field pairs.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Field pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    /// Meta-semantic operation tensor.
    pub t2: Tensor3,
    /// Gate-scoring tensor.
    pub t3: Tensor3,
    /// Control gate, one weight per field pair.
    pub gate: Vec<f64>,
}

impl InteractionParams {
    pub fn zeros(n: usize, d: usize, m: usize) -> Self {
        InteractionParams {
            t2: Tensor3::zeros(d, m),
            t3: Tensor3::zeros(d, m),
            gate: vec![0.0; pair_count(n)],
        }
    }

    /// Tensors drawn i.i.d. from `N(0, (1/d)^2)`, control gate all ones.
    pub fn init<R: Rng>(n: usize, d: usize, m: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / d as f64).expect("valid std");
        let mut p = InteractionParams::zeros(n, d, m);
        for x in p.t2.as_mut_slice() {
            *x = normal.sample(rng);
        }
        for x in p.t3.as_mut_slice() {
            *x = normal.sample(rng);
        }
        p.gate.fill(1.0);
        p
    }

    pub fn dim(&self) -> usize {
        self.t2.dim()
    }

    pub fn slices(&self) -> usize {
        self.t2.slices()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.t3.dim() != self.t2.dim() || self.t3.slices() != self.t2.slices() {
            return Err(Error::dim(
                "interaction params",
                format!("T3 {}x{}x{}", self.t2.dim(), self.t2.slices(), self.t2.dim()),
                format!("T3 {}x{}x{}", self.t3.dim(), self.t3.slices(), self.t3.dim()),
            ));
        }
        if self.gate.len() != pair_count(n) {
            return Err(Error::dim("control gate", pair_count(n), self.gate.len()));
        }
        Ok(())
    }
}

/// Activations retained by [`interact_forward`]. Each matrix has one row per
/// field pair in lexicographic order and `m` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTape {
    pub logits: Mat,
    pub gates: Mat,
    pub raw: Mat,
    pub s: Mat,
}

/// Gradients produced by [`interact_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGrads {
    pub embeds: Vec<Vec<f64>>,
    pub t2: Tensor3,
    pub t3: Tensor3,
    pub gate: Vec<f64>,
}

fn check_embeds(embeds: &[&[f64]], params: &InteractionParams) -> Result<()> {
    let n = embeds.len();
    if n < 2 {
        return Err(Error::TooFewFields(n));
    }
    params.validate(n)?;
    for v in embeds {
        check_bilinear("interaction", v, &params.t2, v)?;
    }
    Ok(())
}

/// Forward pass: returns `s_h` (length `m`) and the tape.
pub fn interact_forward(
    embeds: &[&[f64]],
    params: &InteractionParams,
) -> Result<(Vec<f64>, InteractionTape)> {
    check_embeds(embeds, params)?;
    let n = embeds.len();
    let m = params.slices();
    let q = pair_count(n);
    let mut tape = InteractionTape {
        logits: Mat::zeros(q, m),
        gates: Mat::zeros(q, m),
        raw: Mat::zeros(q, m),
        s: Mat::zeros(q, m),
    };
    let mut s_h = vec![0.0; m];
    for (p, (i, j)) in pairs(n).enumerate() {
        bilinear_into(embeds[i], &params.t3, embeds[j], tape.logits.row_mut(p));
        let g = softmax(tape.logits.row(p));
        tape.gates.row_mut(p).copy_from_slice(&g);
        bilinear_into(embeds[i], &params.t2, embeds[j], tape.raw.row_mut(p));
        for k in 0..m {
            let s = g[k] * tape.raw.get(p, k);
            tape.s.set(p, k, s);
            s_h[k] += params.gate[p] * s;
        }
    }
    Ok((s_h, tape))
}

/// Gradients of `s_h · ds_h` with respect to the embeddings and every
/// interaction parameter.
pub fn interact_backward(
    tape: &InteractionTape,
    embeds: &[&[f64]],
    params: &InteractionParams,
    ds_h: &[f64],
) -> Result<InteractionGrads> {
    check_embeds(embeds, params)?;
    let n = embeds.len();
    let d = params.dim();
    let m = params.slices();
    let q = pair_count(n);
    if ds_h.len() != m {
        return Err(Error::dim("interact_backward ds_h", m, ds_h.len()));
    }
    if tape.s.rows() != q || tape.s.cols() != m {
        return Err(Error::dim(
            "interact_backward tape",
            format!("{q}x{m}"),
            format!("{}x{}", tape.s.rows(), tape.s.cols()),
        ));
    }
    let mut grads = InteractionGrads {
        embeds: vec![vec![0.0; d]; n],
        t2: Tensor3::zeros(d, m),
        t3: Tensor3::zeros(d, m),
        gate: vec![0.0; q],
    };
    backward_accumulate(
        tape,
        embeds,
        params,
        ds_h,
        &mut grads.embeds,
        &mut grads.t2,
        &mut grads.t3,
        &mut grads.gate,
    );
    Ok(grads)
}

/// Unchecked core of [`interact_backward`]; adds into the given buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_accumulate(
    tape: &InteractionTape,
    embeds: &[&[f64]],
    params: &InteractionParams,
    ds_h: &[f64],
    d_embeds: &mut [Vec<f64>],
    dt2: &mut Tensor3,
    dt3: &mut Tensor3,
    dgate: &mut [f64],
) {
    let n = embeds.len();
    let d = params.dim();
    let m = params.slices();
    let mut d_raw = vec![0.0; m];
    let mut d_logit = vec![0.0; m];
    let mut dv = vec![0.0; d];
    let mut du = vec![0.0; d];
    for (p, (i, j)) in pairs(n).enumerate() {
        dgate[p] += dot(tape.s.row(p), ds_h);
        let g = tape.gates.row(p);
        let raw = tape.raw.row(p);
        // ds_ij = gate[p] * ds_h; split through s = g ⊙ b.
        let mut weighted = 0.0;
        for k in 0..m {
            let ds = params.gate[p] * ds_h[k];
            d_raw[k] = ds * g[k];
            let dg = ds * raw[k];
            d_logit[k] = dg;
            weighted += g[k] * dg;
        }
        // softmax Jacobian: da_k = g_k (dg_k - sum_j g_j dg_j)
        for k in 0..m {
            d_logit[k] = g[k] * (d_logit[k] - weighted);
        }
        dv.fill(0.0);
        du.fill(0.0);
        bilinear_backward(embeds[i], &params.t2, embeds[j], &d_raw, &mut dv, &mut du, dt2);
        bilinear_backward(embeds[i], &params.t3, embeds[j], &d_logit, &mut dv, &mut du, dt3);
        for a in 0..d {
            d_embeds[i][a] += dv[a];
            d_embeds[j][a] += du[a];
        }
    }
}

/// Projects the control gate onto the non-negative orthant.
pub fn project_control_gate(gate: &mut [f64]) {
    for g in gate {
        if *g < 0.0 {
            *g = 0.0;
        }
    }
}
