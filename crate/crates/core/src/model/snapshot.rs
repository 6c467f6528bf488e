//! Binary model snapshots.
//!
//! Layout: the 6-byte magic `TFNET1`, a little-endian `u64` byte length, a
//! UTF-8 JSON metadata block (schema, hash, shapes, pair-order tag and the
//! list of parameter blocks), then every parameter block in declared order
//! as little-endian `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, ModelParams};
use crate::data::FieldSchema;
use crate::error::{Error, Result};
use crate::interaction::PAIR_ORDER_TAG;

pub const SNAPSHOT_MAGIC: &[u8; 6] = b"TFNET1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format_version: u32,
    schema_hash: String,
    n_fields: usize,
    vocab: usize,
    d: usize,
    m: usize,
    arch: Arch,
    pair_order: String,
    schema: FieldSchema,
    blocks: Vec<Block>,
}

/// Serialized snapshot bytes.
pub fn snapshot_bytes(params: &ModelParams) -> Vec<u8> {
    let groups = params.groups();
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        schema_hash: params.schema.hash(),
        n_fields: params.n_fields(),
        vocab: params.schema.vocab(),
        d: params.arch.d,
        m: params.arch.m,
        arch: params.arch.clone(),
        pair_order: PAIR_ORDER_TAG.to_string(),
        schema: params.schema.clone(),
        blocks: groups
            .iter()
            .map(|(name, g)| Block {
                name: name.clone(),
                len: g.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let total: usize = groups.iter().map(|(_, g)| g.len()).sum();
    let mut out = Vec::with_capacity(SNAPSHOT_MAGIC.len() + 8 + json.len() + 8 * total);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, g) in &groups {
        for x in g.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Writes a snapshot atomically (temporary file, then rename).
pub fn save_snapshot(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = snapshot_bytes(params);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn parse_snapshot(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |m: String| Error::Snapshot(m);
    if bytes.len() < SNAPSHOT_MAGIC.len() + 8 || &bytes[..6] != SNAPSHOT_MAGIC {
        return Err(bad("missing TFNET1 magic".into()));
    }
    let meta_len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let meta_end = 14usize
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("metadata block truncated".into()))?;
    let meta: Metadata = serde_json::from_slice(&bytes[14..meta_end])
        .map_err(|e| bad(format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.pair_order != PAIR_ORDER_TAG {
        return Err(bad(format!("unsupported pair order `{}`", meta.pair_order)));
    }
    let actual_hash = meta.schema.hash();
    if meta.schema_hash != actual_hash {
        return Err(Error::SchemaMismatch {
            snapshot: meta.schema_hash,
            data: actual_hash,
        });
    }
    if meta.arch.d != meta.d || meta.arch.m != meta.m {
        return Err(bad(format!(
            "header shape d={}, m={} disagrees with architecture d={}, m={}",
            meta.d, meta.m, meta.arch.d, meta.arch.m
        )));
    }
    if meta.n_fields != meta.schema.n_fields() || meta.vocab != meta.schema.vocab() {
        return Err(bad("field count or vocabulary disagrees with schema".into()));
    }
    let mut params = ModelParams::zeros(&meta.schema, &meta.arch)?;
    if params.arch != meta.arch {
        return Err(bad("architecture is not in normalized form".into()));
    }
    let mut offset = meta_end;
    let groups = params.groups_mut();
    if groups.len() != meta.blocks.len() {
        return Err(bad(format!(
            "expected {} parameter blocks, header lists {}",
            groups.len(),
            meta.blocks.len()
        )));
    }
    for ((name, dst), block) in groups.into_iter().zip(&meta.blocks) {
        if name != block.name || dst.len() != block.len {
            return Err(bad(format!(
                "block `{}` ({} values) does not match expected `{name}` ({} values)",
                block.name,
                block.len,
                dst.len()
            )));
        }
        let end = offset + 8 * dst.len();
        if end > bytes.len() {
            return Err(bad(format!("block `{name}` truncated")));
        }
        for (x, chunk) in dst.iter_mut().zip(bytes[offset..end].chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(params)
}

pub fn load_snapshot(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_snapshot(&bytes)
}

/// Loads a snapshot and checks it against the schema and architecture the
/// caller expects.
pub fn load_snapshot_expecting(path: &Path, schema: &FieldSchema, arch: &Arch) -> Result<ModelParams> {
    let params = load_snapshot(path)?;
    if params.schema.hash() != schema.hash() {
        return Err(Error::SchemaMismatch {
            snapshot: params.schema.hash(),
            data: schema.hash(),
        });
    }
    let want = arch.normalized();
    if params.arch != want {
        return Err(Error::Snapshot(format!(
            "architecture mismatch: snapshot has {:?}, expected {:?}",
            params.arch, want
        )));
    }
    Ok(params)
}
