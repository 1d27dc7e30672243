//! GGUF container support for layer-duplication surgery.
//!
//! A file is a little-endian header (magic, version, tensor count, KV count), a typed
//! metadata section, a tensor-info section, zero padding up to `general.alignment`, and
//! the tensor payload. Parsing keeps only the header in memory; tensor bytes are streamed
//! from the source file when a model is written back out.

mod reader;
mod surgery;
mod types;
mod writer;

pub use reader::parse_gguf;
pub use surgery::{duplicate_block, DuplicateMode, SurgeryOptions};
pub use types::{GgmlType, GgufString, MetaArray, MetaType, MetaValue};
pub use writer::{encode_header, write_gguf};

use thiserror::Error;

pub const GGUF_MAGIC: &[u8; 4] = b"GGUF";
pub const DEFAULT_ALIGNMENT: u64 = 32;
pub const ALIGNMENT_KEY: &str = "general.alignment";
pub const ARCHITECTURE_KEY: &str = "general.architecture";
/// Tensor names must be shorter than this (ggml's name buffer, including the NUL).
pub const MAX_TENSOR_NAME: usize = 64;

#[derive(Debug, Error)]
pub enum GgufError {
    #[error("unsupported format: magic {0:?} is not \"GGUF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported GGUF version {0} (supported: 2, 3)")]
    UnsupportedVersion(u32),
    #[error("truncated at byte {pos}: {what}")]
    Truncated { pos: u64, what: String },
    #[error("malformed at byte {pos}: {what}")]
    Malformed { pos: u64, what: String },
    #[error("tensor {name:?}: unknown ggml type id {type_id}")]
    UnknownType { name: String, type_id: u32 },
    #[error("tensor {name:?}: offset {offset} is not a multiple of alignment {alignment}")]
    Misaligned { name: String, offset: u64, alignment: u64 },
    #[error("tensors {first:?} and {second:?} overlap in the data section")]
    Overlap { first: String, second: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid block [{s}, {e}): start must be below end")]
    InvalidBlock { s: usize, e: usize },
    #[error("block exceeds layer count: [{s}, {e}) with block_count {block_count}")]
    BlockOutOfRange { s: usize, e: usize, block_count: usize },
    #[error("metadata array {key:?} has one entry per layer ({len}); per-layer arrays are not supported")]
    PerLayerMetadata { key: String, len: usize },
    #[error("output would be {size} bytes, above the limit of {limit}")]
    SizeLimit { size: u64, limit: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tensor descriptor as stored in the tensor-info section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorDesc {
    pub name: String,
    pub dims: Vec<u64>,
    pub ggml_type: GgmlType,
    /// Byte offset into the payload of the file this descriptor will be written to.
    pub offset: u64,
    /// Byte offset into the payload of the source file that holds this tensor's bytes.
    pub(crate) source_offset: u64,
}

impl TensorDesc {
    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn n_elements(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    /// Size of the tensor data in bytes, or `None` for an unknown type or overflow.
    pub fn nbytes(&self) -> Option<u64> {
        let (block, size) = self.ggml_type.layout()?;
        let first = *self.dims.first().unwrap_or(&1);
        if !first.is_multiple_of(block) {
            return None;
        }
        (self.n_elements()? / block).checked_mul(size)
    }

    /// Layer index and suffix for `blk.<idx>.<suffix>` names.
    pub fn layer(&self) -> Option<(usize, &str)> {
        parse_layer_name(&self.name)
    }

    pub fn source_offset(&self) -> u64 {
        self.source_offset
    }
}

pub(crate) fn parse_layer_name(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix("blk.")?;
    let (idx, suffix) = rest.split_once('.')?;
    if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) || suffix.is_empty() {
        return None;
    }
    Some((idx.parse().ok()?, suffix))
}

pub(crate) fn align_up(x: u64, alignment: u64) -> u64 {
    x.div_ceil(alignment) * alignment
}

/// Parsed GGUF header plus the location of its payload in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct GgufModel {
    pub version: u32,
    pub metadata: Vec<(String, MetaValue)>,
    pub tensors: Vec<TensorDesc>,
    pub alignment: u64,
    /// Length of the payload section this model will be written with.
    pub payload_len: u64,
    /// Where the payload starts in the source file.
    pub(crate) source_data_offset: u64,
    pub(crate) source_payload_len: u64,
}

impl GgufModel {
    pub fn get(&self, key: &str) -> Option<&MetaValue> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut MetaValue> {
        self.metadata.iter_mut().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn architecture(&self) -> Option<&str> {
        self.get(ARCHITECTURE_KEY).and_then(MetaValue::as_str)
    }

    pub fn block_count_key(&self) -> Option<String> {
        self.architecture().map(|a| format!("{a}.block_count"))
    }

    pub fn block_count(&self) -> Option<usize> {
        let key = self.block_count_key()?;
        self.get(&key).and_then(MetaValue::as_u64).map(|v| v as usize)
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorDesc> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn source_data_offset(&self) -> u64 {
        self.source_data_offset
    }

    /// True when every tensor is written from the same offset it is read from and the
    /// payload keeps its length, so the source payload can be copied through verbatim.
    pub(crate) fn payload_is_passthrough(&self) -> bool {
        self.payload_len == self.source_payload_len && self.tensors.iter().all(|t| t.offset == t.source_offset)
    }

    /// Checks offsets, sizes, overlap, and layer naming.
    pub fn validate(&self) -> Result<(), GgufError> {
        if self.alignment == 0 || !self.alignment.is_power_of_two() {
            return Err(GgufError::Invariant(format!("alignment {} is not a power of two", self.alignment)));
        }
        let mut extents = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let size = t.nbytes().ok_or_else(|| match t.ggml_type.layout() {
                None => GgufError::UnknownType { name: t.name.clone(), type_id: t.ggml_type.0 },
                Some(_) => GgufError::Invariant(format!(
                    "tensor {:?}: dims {:?} do not fit type {}",
                    t.name, t.dims, t.ggml_type
                )),
            })?;
            if t.offset % self.alignment != 0 {
                return Err(GgufError::Misaligned {
                    name: t.name.clone(),
                    offset: t.offset,
                    alignment: self.alignment,
                });
            }
            let end = t.offset.checked_add(size).filter(|&end| end <= self.payload_len);
            if end.is_none() {
                return Err(GgufError::Truncated {
                    pos: self.source_data_offset + self.payload_len,
                    what: format!(
                        "tensor {:?} ({size} bytes at payload offset {}) extends past the {}-byte payload",
                        t.name, t.offset, self.payload_len
                    ),
                });
            }
            extents.push((t.offset, size, t.name.as_str()));
        }
        extents.sort();
        for pair in extents.windows(2) {
            let (a_off, a_size, a_name) = pair[0];
            let (b_off, b_size, b_name) = pair[1];
            // identical extents are aliases of one another
            if a_off == b_off && a_size == b_size {
                continue;
            }
            if a_off + a_size > b_off {
                return Err(GgufError::Overlap { first: a_name.into(), second: b_name.into() });
            }
        }

        let mut seen = std::collections::HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(GgufError::Invariant(format!("duplicate tensor name {:?}", t.name)));
            }
        }

        let max_layer = self.tensors.iter().filter_map(|t| t.layer()).map(|(i, _)| i).max();
        if let Some(max_layer) = max_layer {
            let key = self
                .block_count_key()
                .ok_or_else(|| GgufError::Invariant("blk tensors present but no general.architecture".into()))?;
            let count = self
                .block_count()
                .ok_or_else(|| GgufError::Invariant(format!("blk tensors present but {key} missing")))?;
            if max_layer + 1 != count {
                return Err(GgufError::Invariant(format!(
                    "{key} = {count} but the highest layer tensor is blk.{max_layer}"
                )));
            }
        }
        Ok(())
    }
}
