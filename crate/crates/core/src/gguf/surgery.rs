//! Layer duplication: layers `s..e` run twice in sequence.
//!
//! Index mapping for block `[s, e)` of width `w = e - s`:
//!
//! ```text
//! original l <  e   ->  l
//! copy of  l in [s, e)  ->  l + w      (occupies e .. e + w - 1)
//! original l >= e   ->  l + w
//! ```

use super::writer::encode_header;
use super::{align_up, parse_layer_name, GgufError, GgufModel, TensorDesc, MAX_TENSOR_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicateMode {
    /// Duplicate tensor bytes at fresh aligned offsets.
    #[default]
    Copy,
    /// Point the duplicated descriptors at the original data. Loaders that require
    /// sequential tensor data, llama.cpp among them, reject the result.
    Alias,
}

impl std::str::FromStr for DuplicateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(Self::Copy),
            "alias" => Ok(Self::Alias),
            other => Err(format!("unknown mode {other:?} (expected copy or alias)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SurgeryOptions {
    pub mode: DuplicateMode,
    /// Refuse to produce a file larger than this many bytes.
    pub max_output_bytes: Option<u64>,
}

fn renamed(t: &TensorDesc, layer: usize, suffix: &str) -> Result<TensorDesc, GgufError> {
    let name = format!("blk.{layer}.{suffix}");
    if name.len() >= MAX_TENSOR_NAME {
        return Err(GgufError::Invariant(format!("renamed tensor {name:?} exceeds the name limit")));
    }
    Ok(TensorDesc { name, ..t.clone() })
}

/// Returns a model in which layers `s..e` appear twice in a row. The result must be
/// written with [`write_gguf`](super::write_gguf) against the same source file.
pub fn duplicate_block(model: &GgufModel, s: usize, e: usize, options: SurgeryOptions) -> Result<GgufModel, GgufError> {
    if s >= e {
        return Err(GgufError::InvalidBlock { s, e });
    }
    let key = model.block_count_key().ok_or_else(|| GgufError::Invariant("general.architecture missing".into()))?;
    let old_value = model.get(&key).ok_or_else(|| GgufError::Invariant(format!("{key} missing")))?.clone();
    let block_count =
        old_value.as_u64().ok_or_else(|| GgufError::Invariant(format!("{key} is not an unsigned integer")))? as usize;
    if e > block_count {
        return Err(GgufError::BlockOutOfRange { s, e, block_count });
    }
    for (k, v) in &model.metadata {
        if let Some(a) = v.as_array() {
            if a.values.len() == block_count {
                return Err(GgufError::PerLayerMetadata { key: k.clone(), len: block_count });
            }
        }
    }

    let width = e - s;
    let new_count = block_count + width;
    let new_value = old_value
        .with_u64(new_count as u64)
        .ok_or_else(|| GgufError::Invariant(format!("{key} cannot hold {new_count}")))?;

    // Copies go right after the last tensor of layer e - 1, keeping the original
    // within-layer order of layers s..e.
    let last_of_block = model
        .tensors
        .iter()
        .rposition(|t| t.layer().is_some_and(|(l, _)| l == e - 1))
        .ok_or_else(|| GgufError::Invariant(format!("no tensors for layer {}", e - 1)))?;

    let mut tensors = Vec::with_capacity(model.tensors.len() + model.tensors.len() / block_count.max(1) * width);
    for (i, t) in model.tensors.iter().enumerate() {
        match parse_layer_name(&t.name) {
            Some((l, suffix)) if l >= e => tensors.push(renamed(t, l + width, suffix)?),
            _ => tensors.push(t.clone()),
        }
        if i == last_of_block {
            for orig in &model.tensors {
                if let Some((l, suffix)) = orig.layer() {
                    if (s..e).contains(&l) {
                        tensors.push(renamed(orig, l + width, suffix)?);
                    }
                }
            }
        }
    }

    let mut out = GgufModel { tensors, ..model.clone() };
    *out.get_mut(&key).expect("key present") = new_value;

    match options.mode {
        DuplicateMode::Copy => {
            let mut pos = 0u64;
            for t in &mut out.tensors {
                t.offset = align_up(pos, out.alignment);
                pos = t.offset + t.nbytes().expect("validated on parse");
            }
            out.payload_len = align_up(pos, out.alignment);
        }
        // every descriptor keeps its source offset, so the payload is reused as is
        DuplicateMode::Alias => {}
    }

    if let Some(limit) = options.max_output_bytes {
        let size = encode_header(&out)?.len() as u64 + out.payload_len;
        if size > limit {
            return Err(GgufError::SizeLimit { size, limit });
        }
    }
    out.validate()?;
    Ok(out)
}
