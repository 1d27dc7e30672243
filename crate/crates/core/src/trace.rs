//! CPTR activation-trace container.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0..4      b"CPTR"
//! 4..8      u32 version (1)
//! 8..12     u32 J, length of the JSON header
//! 12..12+J  UTF-8 JSON TraceMeta
//! ...       N * (L+1) * d f32 values, [example][hidden-state 0..=L][dim]
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_MAGIC: &[u8; 4] = b"CPTR";
pub const TRACE_VERSION: u32 = 1;

/// Smallest layer count a trace may declare. The change derivative needs two layers.
pub const MIN_TRACE_LAYERS: usize = 2;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic: expected \"CPTR\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported trace version {0} (expected 1)")]
    UnsupportedVersion(u32),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid trace header: {0}")]
    Header(String),
    #[error("shape mismatch: expected {expected} values for [N={n}, L+1={hs}, d={d}], got {actual}")]
    Shape { n: usize, hs: usize, d: usize, expected: usize, actual: usize },
    #[error("non-finite value {value} at example {example}, hidden-state index {hidden_state}, dim {dim}")]
    NonFinite { example: usize, hidden_state: usize, dim: usize, value: f32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
}

/// Which token position the collector reduced each sequence to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub model_id: String,
    pub n_layers: usize,
    pub n_examples: usize,
    pub hidden_dim: usize,
    pub dtype: Dtype,
    pub position: Position,
    pub calibration_tag: String,
    pub language_tag: String,
}

impl TraceMeta {
    pub fn new(model_id: impl Into<String>, n_layers: usize, n_examples: usize, hidden_dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            n_layers,
            n_examples,
            hidden_dim,
            dtype: Dtype::F32,
            position: Position::Last,
            calibration_tag: String::new(),
            language_tag: String::new(),
        }
    }

    /// Number of stored hidden states per example (embedding output plus one per layer).
    pub fn hidden_states(&self) -> usize {
        self.n_layers + 1
    }

    pub fn value_count(&self) -> usize {
        self.n_examples * self.hidden_states() * self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.n_layers < MIN_TRACE_LAYERS {
            return Err(TraceError::Header(format!("n_layers = {} (need at least {MIN_TRACE_LAYERS})", self.n_layers)));
        }
        if self.n_examples == 0 {
            return Err(TraceError::Header("n_examples = 0".into()));
        }
        if self.hidden_dim == 0 {
            return Err(TraceError::Header("hidden_dim = 0".into()));
        }
        Ok(())
    }
}

/// Residual-stream hidden states for a calibration set.
///
/// `hidden` is flat, indexed `[example][hidden_state][dim]` where hidden state 0 is the
/// embedding output and hidden state `i >= 1` is the output of layer `i - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    meta: TraceMeta,
    hidden: Vec<f32>,
}

impl TraceSet {
    pub fn new(meta: TraceMeta, hidden: Vec<f32>) -> Result<Self, TraceError> {
        meta.validate()?;
        check_shape(&meta, hidden.len())?;
        check_finite(&meta, &hidden)?;
        Ok(Self { meta, hidden })
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn n_layers(&self) -> usize {
        self.meta.n_layers
    }

    pub fn n_examples(&self) -> usize {
        self.meta.n_examples
    }

    pub fn hidden_dim(&self) -> usize {
        self.meta.hidden_dim
    }

    pub fn values(&self) -> &[f32] {
        &self.hidden
    }

    /// Hidden vector `h_i` for one example.
    pub fn hidden(&self, example: usize, hidden_state: usize) -> &[f32] {
        let d = self.meta.hidden_dim;
        let start = (example * self.meta.hidden_states() + hidden_state) * d;
        &self.hidden[start..start + d]
    }

    /// Input and output of `layer` for one example.
    pub fn layer_io(&self, example: usize, layer: usize) -> (&[f32], &[f32]) {
        (self.hidden(example, layer), self.hidden(example, layer + 1))
    }

    pub fn into_parts(self) -> (TraceMeta, Vec<f32>) {
        (self.meta, self.hidden)
    }
}

fn check_shape(meta: &TraceMeta, actual: usize) -> Result<(), TraceError> {
    let expected = meta.value_count();
    if actual != expected {
        return Err(TraceError::Shape {
            n: meta.n_examples,
            hs: meta.hidden_states(),
            d: meta.hidden_dim,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_finite(meta: &TraceMeta, hidden: &[f32]) -> Result<(), TraceError> {
    if let Some(pos) = hidden.iter().position(|v| !v.is_finite()) {
        let d = meta.hidden_dim;
        let hs = meta.hidden_states();
        return Err(TraceError::NonFinite {
            example: pos / (hs * d),
            hidden_state: (pos / d) % hs,
            dim: pos % d,
            value: hidden[pos],
        });
    }
    Ok(())
}

/// Serializes a trace. Returns the number of bytes written.
pub fn write_trace<W: Write>(meta: &TraceMeta, hidden: &[f32], mut dest: W) -> Result<u64, TraceError> {
    meta.validate()?;
    check_shape(meta, hidden.len())?;
    check_finite(meta, hidden)?;

    let header = serde_json::to_vec(meta).map_err(|e| TraceError::Header(e.to_string()))?;
    let header_len =
        u32::try_from(header.len()).map_err(|_| TraceError::Header("header JSON exceeds u32 length".into()))?;

    dest.write_all(TRACE_MAGIC)?;
    dest.write_all(&TRACE_VERSION.to_le_bytes())?;
    dest.write_all(&header_len.to_le_bytes())?;
    dest.write_all(&header)?;

    let mut buf = Vec::with_capacity(meta.hidden_states() * meta.hidden_dim * 4);
    for example in hidden.chunks(meta.hidden_states() * meta.hidden_dim) {
        buf.clear();
        for v in example {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        dest.write_all(&buf)?;
    }
    dest.flush()?;
    Ok(12 + header.len() as u64 + hidden.len() as u64 * 4)
}

pub fn write_trace_set<W: Write>(trace: &TraceSet, dest: W) -> Result<u64, TraceError> {
    write_trace(&trace.meta, &trace.hidden, dest)
}

/// Parses and validates a CPTR trace. The source must end exactly after the payload.
pub fn read_trace<R: Read>(mut src: R) -> Result<TraceSet, TraceError> {
    let mut fixed = [0u8; 12];
    read_exact_or(&mut src, &mut fixed, "file shorter than the 12-byte preamble")?;
    let magic: [u8; 4] = fixed[0..4].try_into().unwrap();
    if &magic != TRACE_MAGIC {
        return Err(TraceError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != TRACE_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;

    let mut header = Vec::new();
    let got = src.by_ref().take(header_len as u64).read_to_end(&mut header)?;
    if got != header_len {
        return Err(TraceError::LengthMismatch(format!("header declares {header_len} bytes but only {got} follow")));
    }
    let meta: TraceMeta = serde_json::from_slice(&header).map_err(|e| TraceError::Header(e.to_string()))?;
    meta.validate()?;

    let n_values = meta.value_count();
    let n_bytes = n_values.checked_mul(4).ok_or_else(|| TraceError::Header("payload size overflows".into()))?;
    let mut payload = Vec::new();
    let got = src.by_ref().take(n_bytes as u64).read_to_end(&mut payload)?;
    if got != n_bytes {
        return Err(TraceError::LengthMismatch(format!("payload should hold {n_bytes} bytes, found {got}")));
    }
    let mut probe = [0u8; 1];
    if src.read(&mut probe)? != 0 {
        return Err(TraceError::LengthMismatch(format!("trailing bytes after the {n_bytes}-byte payload")));
    }

    let hidden: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    check_finite(&meta, &hidden)?;
    Ok(TraceSet { meta, hidden })
}

fn read_exact_or<R: Read>(src: &mut R, buf: &mut [u8], what: &str) -> Result<(), TraceError> {
    match src.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(TraceError::LengthMismatch(what.to_string())),
        Err(e) => Err(e.into()),
    }
}
