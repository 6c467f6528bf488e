//! Planted multi-semantic interaction data.
//!
//! Each field value owns a latent vector `u`. A ground-truth operating
//! tensor holds `m_true` slices, and every designated field pair reads its
//! interaction from one assigned slice: `z = Σ_p u_i^T G[k(p)] u_j`. Labels
//! are drawn as `Bernoulli(sigmoid(z / temperature))`.
//!
//! Slice `k` is `±Q_k Q_k^T` normalized to unit Frobenius norm, positive for
//! even `k` and negative for odd `k`. A single positive semi-definite slice is
//! exactly representable by a factorization machine; mixing slices of
//! opposite sign across pairs that share fields is not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{fnv1a64_extend, FieldSchema, Instance, FNV_OFFSET};
use crate::error::{Error, Result};
use crate::interaction::pair_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// Pairs read from the slices given by `assignment`.
    MultiSpace,
    /// Control arm: every designated pair reads slice 0.
    SingleSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_fields: usize,
    /// Distinct values per field.
    pub cardinality: usize,
    /// Hash buckets per field.
    pub buckets: u32,
    pub d_true: usize,
    pub m_true: usize,
    /// Slice per field pair in lexicographic order; `null` plants nothing.
    /// Empty means pair `p` reads slice `p % m_true`.
    #[serde(default)]
    pub assignment: Vec<Option<usize>>,
    pub task: SynthTask,
    /// Label noise; 0 makes labels the sign of the planted logit.
    pub temperature: f64,
    pub n_records: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Per-pair slice after applying defaults and the task.
    pub fn resolved_assignment(&self) -> Vec<Option<usize>> {
        let q = pair_count(self.n_fields);
        let base: Vec<Option<usize>> = if self.assignment.is_empty() {
            (0..q).map(|p| Some(p % self.m_true.max(1))).collect()
        } else {
            self.assignment.clone()
        };
        match self.task {
            SynthTask::MultiSpace => base,
            SynthTask::SingleSpace => base.into_iter().map(|a| a.map(|_| 0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_fields < 2 {
            return bad(format!("synthetic data needs at least 2 fields, got {}", self.n_fields));
        }
        if self.cardinality == 0 || self.d_true == 0 || self.m_true == 0 {
            return bad("cardinality, d_true and m_true must be positive".into());
        }
        if self.buckets < 2 {
            return bad(format!("buckets must be at least 2, got {}", self.buckets));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        let q = pair_count(self.n_fields);
        if !self.assignment.is_empty() && self.assignment.len() != q {
            return bad(format!("assignment needs {q} entries, got {}", self.assignment.len()));
        }
        let resolved = self.resolved_assignment();
        if let Some(k) = resolved.iter().flatten().find(|&&k| k >= self.m_true) {
            return bad(format!("assignment names slice {k} but m_true = {}", self.m_true));
        }
        if self.task == SynthTask::MultiSpace {
            if self.m_true < 2 {
                return bad(format!("multi-space task needs m_true >= 2, got {}", self.m_true));
            }
            let mut used: Vec<usize> = resolved.iter().flatten().copied().collect();
            used.sort_unstable();
            used.dedup();
            if used.len() < 2 {
                return bad("multi-space assignment must cover at least 2 slices".into());
            }
        }
        Ok(())
    }

    pub fn field_names(&self) -> Vec<String> {
        (0..self.n_fields).map(|f| format!("f{f}")).collect()
    }
}

/// Generated records: raw values (for CSV export), their encodings, and the
/// planted logits.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub schema: FieldSchema,
    pub rows: Vec<(Vec<String>, u8)>,
    pub instances: Vec<Instance>,
    pub logits: Vec<f64>,
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Ground-truth tensor as `m_true` row-major `d_true x d_true` slices.
fn ground_truth(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = spec.d_true;
    (0..spec.m_true)
        .map(|k| {
            let q: Vec<f64> = (0..d * d).map(|_| std_normal(rng)).collect();
            let mut g = vec![0.0; d * d];
            for a in 0..d {
                for b in 0..d {
                    for c in 0..d {
                        g[a * d + b] += q[a * d + c] * q[b * d + c];
                    }
                }
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            g.iter().map(|x| sign * x / norm).collect()
        })
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let schema = FieldSchema::categorical(&spec.field_names(), spec.buckets)?;
    let assignment = spec.resolved_assignment();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d_true;
    let tensor = ground_truth(spec, &mut rng);
    let latents: Vec<Vec<Vec<f64>>> = (0..spec.n_fields)
        .map(|_| {
            (0..spec.cardinality)
                .map(|_| (0..d).map(|_| std_normal(&mut rng)).collect())
                .collect()
        })
        .collect();

    let mut data = SynthData {
        schema,
        rows: Vec::with_capacity(spec.n_records),
        instances: Vec::with_capacity(spec.n_records),
        logits: Vec::with_capacity(spec.n_records),
    };
    let mut values = vec![0usize; spec.n_fields];
    let mut s_ij = vec![0.0; spec.m_true];
    for line in 0..spec.n_records {
        for v in values.iter_mut() {
            *v = rng.random_range(0..spec.cardinality);
        }
        let mut z = 0.0;
        let mut p = 0;
        for i in 0..spec.n_fields {
            for j in i + 1..spec.n_fields {
                if let Some(k) = assignment[p] {
                    let (ui, uj) = (&latents[i][values[i]], &latents[j][values[j]]);
                    // full interactive feature over every slice, then the
                    // pair's designated slice is read out
                    for (slice, out) in tensor.iter().zip(s_ij.iter_mut()) {
                        *out = 0.0;
                        for a in 0..d {
                            for b in 0..d {
                                *out += ui[a] * slice[a * d + b] * uj[b];
                            }
                        }
                    }
                    z += s_ij[k];
                }
                p += 1;
            }
        }
        let draw: f64 = rng.random();
        let label = if spec.temperature == 0.0 {
            u8::from(z > 0.0)
        } else {
            let prob = 1.0 / (1.0 + (-z / spec.temperature).exp());
            u8::from(draw < prob)
        };
        let raw: Vec<String> = values.iter().map(|v| format!("v{v}")).collect();
        let inst = data.schema.encode_record(&raw, label, line + 1)?;
        data.rows.push((raw, label));
        data.instances.push(inst);
        data.logits.push(z);
    }
    Ok(data)
}

/// FNV-1a over every id (little-endian `u32`) and label, in order.
pub fn dataset_checksum(instances: &[Instance]) -> u64 {
    let mut h = FNV_OFFSET;
    for inst in instances {
        for id in &inst.ids {
            h = fnv1a64_extend(h, &id.to_le_bytes());
        }
        h = fnv1a64_extend(h, &[inst.label]);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec() -> SynthSpec {
        SynthSpec {
            n_fields: 4,
            cardinality: 10,
            buckets: 64,
            d_true: 2,
            m_true: 2,
            assignment: vec![],
            task: SynthTask::MultiSpace,
            temperature: 1.0,
            n_records: 200,
            seed: 11,
        }
    }

    #[test]
    fn validation() {
        assert!(spec().validate().is_ok());
        let mut s = spec();
        s.m_true = 1;
        assert!(matches!(generate_synthetic(&s), Err(Error::InvalidArgument(_))));
        s.task = SynthTask::SingleSpace;
        assert!(s.validate().is_ok());
        let mut s = spec();
        s.assignment = vec![Some(0), Some(0), None, Some(0), None, None];
        assert!(s.validate().is_err());
        s.assignment = vec![Some(0), Some(2), None, Some(0), None, None];
        assert!(s.validate().is_err());
        s.assignment = vec![Some(0)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_space_collapses_assignment() {
        let mut s = spec();
        s.assignment = vec![Some(0), Some(1), None, Some(1), None, Some(0)];
        s.task = SynthTask::SingleSpace;
        assert_eq!(
            s.resolved_assignment(),
            vec![Some(0), Some(0), None, Some(0), None, Some(0)]
        );
    }

    #[test]
    fn generation_is_deterministic_and_encoded() {
        let a = generate_synthetic(&spec()).unwrap();
        let b = generate_synthetic(&spec()).unwrap();
        assert_eq!(a.instances, b.instances);
        assert_eq!(dataset_checksum(&a.instances), dataset_checksum(&b.instances));
        assert_eq!(a.instances.len(), 200);
        for ((raw, label), inst) in a.rows.iter().zip(&a.instances) {
            assert_eq!(&a.schema.encode_record(raw, *label, 0).unwrap(), inst);
        }
        let mut other = spec();
        other.seed = 12;
        let c = generate_synthetic(&other).unwrap();
        assert_ne!(dataset_checksum(&a.instances), dataset_checksum(&c.instances));
    }

    #[test]
    fn zero_temperature_labels_are_logit_signs() {
        let mut s = spec();
        s.temperature = 0.0;
        let data = generate_synthetic(&s).unwrap();
        for (inst, z) in data.instances.iter().zip(&data.logits) {
            assert_eq!(inst.label, u8::from(*z > 0.0));
        }
    }

    #[test]
    fn slices_have_unit_norm_and_alternating_sign() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = ground_truth(&s, &mut rng);
        for (k, slice) in g.iter().enumerate() {
            let norm: f64 = slice.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            let trace = slice[0] + slice[3];
            assert_eq!(trace > 0.0, k % 2 == 0);
        }
    }
}
