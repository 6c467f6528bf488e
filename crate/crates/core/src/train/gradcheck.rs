use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FieldSchema, Instance};
use crate::error::Result;
use crate::model::{batch_loss, loss_and_grad, Arch, Gradients, ModelKind, ModelParams};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest accepted `|a - f| / max(|a|, |f|, 1e-8)`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-8;
const GRADCHECK_L1: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub kind: ModelKind,
    pub groups: Vec<GroupCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("gradcheck {}\n", self.kind);
        for g in self.groups.iter().filter(|g| g.coords > 0) {
            out.push_str(&format!(
                "  {:<16} {:>6} coords  max rel err {:.3e}  {}\n",
                g.name,
                g.coords,
                g.max_rel_err,
                if g.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Four categorical fields with five buckets each.
pub fn gradcheck_schema() -> FieldSchema {
    FieldSchema::categorical(&["a", "b", "c", "e"], 5).expect("valid schema")
}

/// A randomized parameter point and batch of eight: d = 4, m = 2, towers
/// 8-8. Every group is moved away from its initializer so no gradient
/// vanishes identically.
pub fn gradcheck_point(kind: ModelKind, seed: u64) -> Result<(ModelParams, Vec<Instance>)> {
    let schema = gradcheck_schema();
    let arch = Arch::new(kind, 4, 2, vec![8, 8], vec![8, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&schema, &arch, &mut rng)?;
    for x in params.embed.as_mut_slice() {
        *x = rng.random_range(-0.5..0.5);
    }
    for x in &mut params.wide {
        *x = rng.random_range(-0.5..0.5);
    }
    for x in &mut params.dense.interaction.gate {
        *x = rng.random_range(0.5..1.5);
    }
    for mlp in [&mut params.dense.tower_sh, &mut params.dense.tower_xv] {
        for layer in &mut mlp.layers {
            for b in &mut layer.b {
                *b = rng.random_range(0.0..0.2);
            }
        }
    }
    params.dense.b_out = rng.random_range(-0.5..0.5);
    let batch = (0..8)
        .map(|_| Instance {
            ids: (0..schema.n_fields())
                .map(|f| schema.window(f).start + rng.random_range(0..5))
                .collect(),
            label: rng.random_range(0..2u8),
        })
        .collect();
    Ok((params, batch))
}

/// Default check: the randomized point for `kind` against the analytic
/// gradient of the training loss.
pub fn gradcheck(kind: ModelKind, seed: u64) -> Result<GradcheckReport> {
    let (params, batch) = gradcheck_point(kind, seed)?;
    gradcheck_params(&params, &batch, GRADCHECK_L1, loss_and_grad)
}

/// Compares `analytic` against central differences of the penalized batch
/// loss on every coordinate of every group.
pub fn gradcheck_params<F>(params: &ModelParams, batch: &[Instance], l1: f64, analytic: F) -> Result<GradcheckReport>
where
    F: Fn(&ModelParams, &[Instance], f64) -> Result<(f64, Gradients)>,
{
    let (_, grads) = analytic(params, batch, l1)?;
    let analytic_groups = grads.dense_groups(params);
    let mut probe = params.clone();
    let mut groups = Vec::new();
    for (gi, (name, a)) in analytic_groups.iter().enumerate() {
        let mut max_rel_err: f64 = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            let orig = probe.groups()[gi].1[i];
            set(&mut probe, gi, i, orig + GRADCHECK_STEP);
            let up = batch_loss(&probe, batch, l1)?;
            set(&mut probe, gi, i, orig - GRADCHECK_STEP);
            let down = batch_loss(&probe, batch, l1)?;
            set(&mut probe, gi, i, orig);
            let fd = (up - down) / (2.0 * GRADCHECK_STEP);
            let rel = (ai - fd).abs() / ai.abs().max(fd.abs()).max(REL_FLOOR);
            max_rel_err = max_rel_err.max(rel);
        }
        groups.push(GroupCheck {
            name: name.clone(),
            coords: a.len(),
            max_rel_err,
            passed: max_rel_err < GRADCHECK_TOLERANCE,
        });
    }
    Ok(GradcheckReport {
        kind: params.kind(),
        groups,
    })
}

fn set(params: &mut ModelParams, group: usize, i: usize, value: f64) {
    params.groups_mut()[group].1[i] = value;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_passes() {
        for kind in ModelKind::ALL {
            for seed in [0, 1] {
                let r = gradcheck(kind, seed).unwrap();
                assert!(r.passed(), "{}", r.to_table());
            }
        }
    }

    #[test]
    fn sign_flip_in_one_group_is_caught() {
        let (params, batch) = gradcheck_point(ModelKind::Tfnet, 3).unwrap();
        let corrupt = |p: &ModelParams, b: &[Instance], l1: f64| {
            let (loss, mut g) = loss_and_grad(p, b, l1)?;
            for x in g.dense.interaction.t3.as_mut_slice() {
                *x = -*x;
            }
            Ok((loss, g))
        };
        let r = gradcheck_params(&params, &batch, GRADCHECK_L1, corrupt).unwrap();
        for g in &r.groups {
            assert_eq!(g.passed, g.name != "t3", "{}", r.to_table());
        }
    }
}
