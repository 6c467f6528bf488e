//! Field schemas, feature hashing and record encoding.
//!
//! Every raw value maps to a global feature id: the field's offset plus a
//! bucket inside that field's window. Bucket 0 of each field is reserved for
//! missing values. Categorical strings are hashed with 64-bit FNV-1a, salted
//! by the field index, so encodings are identical across runs, processes and
//! languages.

mod io;
mod sample;
mod synth;

pub use io::{read_dataset, write_generic_csv, DataFormat, Dataset, ReadOptions, RecordReader};
pub use sample::{downsample_negatives, split_chronological, split_random, split_tail};
pub use synth::{dataset_checksum, generate_synthetic, SynthSpec, SynthTask};

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
///
/// Test vectors: `""` → `0xcbf29ce484222325`, `"a"` → `0xaf63dc4c8601ec8c`,
/// `"foobar"` → `0x85944171f73967e8`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

pub(crate) fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash of a categorical value salted by its field index: FNV-1a over the
/// little-endian `u32` field index followed by the UTF-8 bytes of the value.
pub fn feature_hash(field: usize, value: &str) -> u64 {
    let h = fnv1a64_extend(FNV_OFFSET, &(field as u32).to_le_bytes());
    fnv1a64_extend(h, value.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Field {
    pub name: String,
    pub kind: FieldKind,
    pub buckets: u32,
}

/// Ordered declaration of the input fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldSchema {
    fields: Vec<Field>,
    #[serde(skip)]
    offsets: Vec<u32>,
    #[serde(skip)]
    vocab: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    fields: Vec<Field>,
}

impl<'de> Deserialize<'de> for FieldSchema {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let file = SchemaFile::deserialize(de)?;
        FieldSchema::new(file.fields).map_err(serde::de::Error::custom)
    }
}

impl FieldSchema {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidArgument("schema has no fields".into()));
        }
        let mut seen = HashSet::new();
        let mut offsets = Vec::with_capacity(fields.len());
        let mut vocab: u64 = 0;
        for f in &fields {
            if f.buckets < 2 {
                return Err(Error::InvalidArgument(format!(
                    "field `{}` needs at least 2 buckets, got {}",
                    f.name, f.buckets
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate field name `{}`", f.name)));
            }
            offsets.push(vocab as u32);
            vocab += u64::from(f.buckets);
            if vocab > u64::from(u32::MAX) {
                return Err(Error::InvalidArgument("total vocabulary exceeds u32 range".into()));
            }
        }
        Ok(FieldSchema {
            fields,
            offsets,
            vocab: vocab as u32,
        })
    }

    /// All-categorical schema with the same bucket count per field.
    pub fn categorical<S: AsRef<str>>(names: &[S], buckets: u32) -> Result<Self> {
        FieldSchema::new(
            names
                .iter()
                .map(|n| Field {
                    name: n.as_ref().to_string(),
                    kind: FieldKind::Categorical,
                    buckets,
                })
                .collect(),
        )
    }

    /// Criteo layout: `I1..I13` continuous, `C1..C26` categorical.
    pub fn criteo(categorical_buckets: u32, continuous_buckets: u32) -> Result<Self> {
        let mut fields: Vec<Field> = (1..=13)
            .map(|i| Field {
                name: format!("I{i}"),
                kind: FieldKind::Continuous,
                buckets: continuous_buckets,
            })
            .collect();
        fields.extend((1..=26).map(|i| Field {
            name: format!("C{i}"),
            kind: FieldKind::Categorical,
            buckets: categorical_buckets,
        }));
        FieldSchema::new(fields)
    }

    /// Avazu layout: the 22 categorical columns after `id` and `click`.
    pub fn avazu(buckets: u32) -> Result<Self> {
        FieldSchema::categorical(&AVAZU_FIELDS, buckets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab as usize
    }

    pub fn offset(&self, field: usize) -> u32 {
        self.offsets[field]
    }

    /// Id window `[offset, offset + buckets)` of a field.
    pub fn window(&self, field: usize) -> std::ops::Range<u32> {
        let start = self.offsets[field];
        start..start + self.fields[field].buckets
    }

    /// Stable content hash (16 hex digits) over names, kinds and buckets.
    pub fn hash(&self) -> String {
        let mut h = FNV_OFFSET;
        for f in &self.fields {
            let kind = match f.kind {
                FieldKind::Categorical => "categorical",
                FieldKind::Continuous => "continuous",
            };
            h = fnv1a64_extend(h, f.name.as_bytes());
            h = fnv1a64_extend(h, &[0x1f]);
            h = fnv1a64_extend(h, kind.as_bytes());
            h = fnv1a64_extend(h, &[0x1f]);
            h = fnv1a64_extend(h, &f.buckets.to_le_bytes());
            h = fnv1a64_extend(h, &[0x1e]);
        }
        format!("{h:016x}")
    }

    /// Bucket of one raw value inside its field (before adding the offset).
    pub fn bucket(&self, field: usize, raw: &str) -> std::result::Result<u32, String> {
        let f = &self.fields[field];
        let raw = raw.trim();
        if raw.is_empty() {
            return Ok(0);
        }
        match f.kind {
            FieldKind::Categorical => {
                Ok(1 + (feature_hash(field, raw) % u64::from(f.buckets - 1)) as u32)
            }
            FieldKind::Continuous => {
                let x: f64 = raw
                    .parse()
                    .map_err(|_| format!("field `{}`: `{raw}` is not a number", f.name))?;
                Ok(continuous_bucket(x, f.buckets))
            }
        }
    }

    /// Encodes one raw record (one value slot per field, empty = missing).
    pub fn encode_record<S: AsRef<str>>(&self, raw: &[S], label: u8, line: usize) -> Result<Instance> {
        if raw.len() != self.fields.len() {
            return Err(Error::Record {
                line,
                message: format!("expected {} fields, got {}", self.fields.len(), raw.len()),
            });
        }
        let mut ids = Vec::with_capacity(raw.len());
        for (f, value) in raw.iter().enumerate() {
            let b = self
                .bucket(f, value.as_ref())
                .map_err(|message| Error::Record { line, message })?;
            ids.push(self.offsets[f] + b);
        }
        let inst = Instance { ids, label };
        debug_assert!(self.contains(&inst));
        Ok(inst)
    }

    /// True when every id lies in its field's window.
    pub fn contains(&self, inst: &Instance) -> bool {
        inst.ids.len() == self.fields.len()
            && inst.ids.iter().enumerate().all(|(f, id)| self.window(f).contains(id))
    }
}

/// `1 + floor(log2(1 + max(x, 0)))`, clamped to the last bucket. Bucket 0
/// stays reserved for missing values.
pub fn continuous_bucket(x: f64, buckets: u32) -> u32 {
    let b = (1.0 + x.max(0.0)).log2().floor();
    1 + (b as u32).min(buckets - 2)
}

pub const AVAZU_FIELDS: [&str; 22] = [
    "hour",
    "C1",
    "banner_pos",
    "site_id",
    "site_domain",
    "site_category",
    "app_id",
    "app_domain",
    "app_category",
    "device_id",
    "device_ip",
    "device_model",
    "device_type",
    "device_conn_type",
    "C14",
    "C15",
    "C16",
    "C17",
    "C18",
    "C19",
    "C20",
    "C21",
];

/// One encoded example: a global feature id per field and a binary label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instance {
    pub ids: Vec<u32>,
    pub label: u8,
}

impl Instance {
    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }
}

pub(crate) fn parse_label(raw: &str, line: usize) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Record {
            line,
            message: format!("label must be 0 or 1, got `{other}`"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_schema() -> FieldSchema {
        FieldSchema::new(vec![
            Field {
                name: "count".into(),
                kind: FieldKind::Continuous,
                buckets: 8,
            },
            Field {
                name: "ad".into(),
                kind: FieldKind::Categorical,
                buckets: 100,
            },
        ])
        .unwrap()
    }

    #[test]
    fn fnv_test_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn feature_hash_is_salted_by_field() {
        assert_ne!(feature_hash(0, "x"), feature_hash(1, "x"));
        let mut bytes = 0u32.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"x");
        assert_eq!(feature_hash(0, "x"), fnv1a64(&bytes));
    }

    #[test]
    fn schema_offsets_partition_vocab() {
        let s = small_schema();
        assert_eq!(s.n_fields(), 2);
        assert_eq!(s.vocab(), 108);
        assert_eq!(s.window(0), 0..8);
        assert_eq!(s.window(1), 8..108);
    }

    #[test]
    fn schema_validation() {
        let one_bucket = vec![Field {
            name: "a".into(),
            kind: FieldKind::Categorical,
            buckets: 1,
        }];
        assert!(FieldSchema::new(one_bucket).is_err());
        assert!(FieldSchema::categorical(&["a", "a"], 4).is_err());
        assert!(FieldSchema::new(vec![]).is_err());
        let err = serde_json::from_str::<FieldSchema>(
            r#"{"fields":[{"name":"a","kind":"categorical","buckets":4,"extra":1}]}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn schema_json_round_trip_keeps_hash() {
        let s = FieldSchema::criteo(1000, 32).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: FieldSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert_ne!(FieldSchema::criteo(1001, 32).unwrap().hash(), s.hash());
        assert_eq!(s.n_fields(), 39);
        assert_eq!(FieldSchema::avazu(100).unwrap().n_fields(), 22);
    }

    #[test]
    fn empty_value_is_missing_bucket() {
        let s = small_schema();
        let inst = s.encode_record(&["", ""], 1, 1).unwrap();
        assert_eq!(inst.ids, vec![0, 8]);
    }

    #[test]
    fn continuous_buckets() {
        assert_eq!(continuous_bucket(0.0, 8), 1);
        assert_eq!(continuous_bucket(0.5, 8), 1);
        assert_eq!(continuous_bucket(1.0, 8), 2);
        assert_eq!(continuous_bucket(2.0, 8), 2);
        assert_eq!(continuous_bucket(3.0, 8), 3);
        assert_eq!(continuous_bucket(-5.0, 8), 1);
        assert_eq!(continuous_bucket(1e9, 8), 7);
        assert_eq!(continuous_bucket(1e9, 2), 1);
        let s = small_schema();
        assert_eq!(s.encode_record(&["1", "x"], 0, 1).unwrap().ids[0], 2);
        assert_eq!(s.encode_record(&["", "x"], 0, 1).unwrap().ids[0], 0);
        assert!(matches!(
            s.encode_record(&["abc", "x"], 0, 7),
            Err(Error::Record { line: 7, .. })
        ));
    }

    #[test]
    fn categorical_hashing_is_deterministic_and_in_window() {
        let s = small_schema();
        let a = s.encode_record(&["3", "68fd1e64"], 0, 1).unwrap();
        let b = s.encode_record(&["3", "68fd1e64"], 0, 2).unwrap();
        assert_eq!(a, b);
        let expected = 8 + 1 + (feature_hash(1, "68fd1e64") % 99) as u32;
        assert_eq!(a.ids[1], expected);
        assert!(s.contains(&a));
    }

    #[test]
    fn wrong_column_count_is_record_error() {
        let s = small_schema();
        assert!(matches!(
            s.encode_record(&["1"], 0, 12),
            Err(Error::Record { line: 12, .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn every_encoded_id_lies_in_its_window(a in ".{0,12}", b in "[0-9]{0,6}", c in ".{0,12}") {
            let s = FieldSchema::new(vec![
                Field { name: "a".into(), kind: FieldKind::Categorical, buckets: 5 },
                Field { name: "b".into(), kind: FieldKind::Continuous, buckets: 4 },
                Field { name: "c".into(), kind: FieldKind::Categorical, buckets: 2 },
            ]).unwrap();
            let inst = s.encode_record(&[a.as_str(), b.as_str(), c.as_str()], 1, 1).unwrap();
            proptest::prop_assert!(s.contains(&inst));
        }
    }
}
