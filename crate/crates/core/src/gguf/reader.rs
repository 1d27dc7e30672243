use std::io::{BufReader, Read, Seek, SeekFrom};

use super::types::{GgmlType, GgufString, MetaArray, MetaType, MetaValue};
use super::{align_up, GgufError, GgufModel, TensorDesc, ALIGNMENT_KEY, DEFAULT_ALIGNMENT, GGUF_MAGIC};

/// Byte-position-tracking reader over the header section.
struct HeaderReader<R> {
    inner: R,
    pos: u64,
    len: u64,
}

impl<R: Read> HeaderReader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N], GgufError> {
        let mut buf = [0u8; N];
        if self.len - self.pos < N as u64 {
            return Err(GgufError::Truncated { pos: self.pos, what: what.to_string() });
        }
        self.inner.read_exact(&mut buf)?;
        self.pos += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32, GgufError> {
        self.bytes::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64, GgufError> {
        self.bytes::<8>(what).map(u64::from_le_bytes)
    }

    fn remaining(&self) -> u64 {
        self.len - self.pos
    }

    fn string(&mut self, what: &str) -> Result<GgufString, GgufError> {
        let at = self.pos;
        let n = self.u64(what)?;
        if n > self.remaining() {
            return Err(GgufError::Truncated {
                pos: at,
                what: format!("{what}: string of {n} bytes with {} left", self.remaining()),
            });
        }
        let mut buf = vec![0u8; n as usize];
        self.inner.read_exact(&mut buf)?;
        self.pos += n;
        Ok(GgufString(buf))
    }

    fn utf8(&mut self, what: &str) -> Result<String, GgufError> {
        let at = self.pos;
        let s = self.string(what)?;
        String::from_utf8(s.0).map_err(|_| GgufError::Malformed { pos: at, what: format!("{what} is not UTF-8") })
    }

    fn value(&mut self, ty: MetaType, depth: usize) -> Result<MetaValue, GgufError> {
        Ok(match ty {
            MetaType::U8 => MetaValue::U8(self.bytes::<1>("u8")?[0]),
            MetaType::I8 => MetaValue::I8(self.bytes::<1>("i8")?[0] as i8),
            MetaType::U16 => MetaValue::U16(u16::from_le_bytes(self.bytes("u16")?)),
            MetaType::I16 => MetaValue::I16(i16::from_le_bytes(self.bytes("i16")?)),
            MetaType::U32 => MetaValue::U32(self.u32("u32")?),
            MetaType::I32 => MetaValue::I32(i32::from_le_bytes(self.bytes("i32")?)),
            MetaType::F32 => MetaValue::F32(f32::from_le_bytes(self.bytes("f32")?)),
            MetaType::U64 => MetaValue::U64(self.u64("u64")?),
            MetaType::I64 => MetaValue::I64(i64::from_le_bytes(self.bytes("i64")?)),
            MetaType::F64 => MetaValue::F64(f64::from_le_bytes(self.bytes("f64")?)),
            MetaType::Bool => {
                let at = self.pos;
                match self.bytes::<1>("bool")?[0] {
                    0 => MetaValue::Bool(false),
                    1 => MetaValue::Bool(true),
                    b => return Err(GgufError::Malformed { pos: at, what: format!("bool byte {b}") }),
                }
            }
            MetaType::String => MetaValue::String(self.string("string value")?),
            MetaType::Array => {
                let at = self.pos;
                if depth > 8 {
                    return Err(GgufError::Malformed { pos: at, what: "arrays nested too deeply".into() });
                }
                let elem_raw = self.u32("array element type")?;
                let elem_type = MetaType::from_u32(elem_raw).ok_or_else(|| GgufError::Malformed {
                    pos: at,
                    what: format!("unknown array element type {elem_raw}"),
                })?;
                let n = self.u64("array length")?;
                // every element occupies at least one byte
                if n > self.remaining() {
                    return Err(GgufError::Truncated {
                        pos: at,
                        what: format!("array of {n} elements with {} bytes left", self.remaining()),
                    });
                }
                let mut values = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    values.push(self.value(elem_type, depth + 1)?);
                }
                MetaValue::Array(MetaArray { elem_type, values })
            }
        })
    }
}

/// Parses the header of a GGUF file and validates the tensor layout against the file
/// length. Tensor data is not read.
pub fn parse_gguf<R: Read + Seek>(src: &mut R) -> Result<GgufModel, GgufError> {
    let len = src.seek(SeekFrom::End(0))?;
    src.seek(SeekFrom::Start(0))?;
    let mut r = HeaderReader { inner: BufReader::new(&mut *src), pos: 0, len };

    let magic = r.bytes::<4>("magic")?;
    if &magic != GGUF_MAGIC {
        return Err(GgufError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if !(2..=3).contains(&version) {
        return Err(GgufError::UnsupportedVersion(version));
    }
    let n_tensors = r.u64("tensor count")?;
    let n_kv = r.u64("metadata count")?;
    if n_kv > r.remaining() || n_tensors > r.remaining() {
        return Err(GgufError::Truncated {
            pos: 16,
            what: format!("{n_tensors} tensors and {n_kv} metadata entries cannot fit in {len} bytes"),
        });
    }

    let mut metadata = Vec::with_capacity(n_kv as usize);
    for _ in 0..n_kv {
        let key = r.utf8("metadata key")?;
        let at = r.pos;
        let raw = r.u32("metadata value type")?;
        let ty = MetaType::from_u32(raw)
            .ok_or_else(|| GgufError::Malformed { pos: at, what: format!("key {key:?}: unknown value type {raw}") })?;
        let value = r.value(ty, 0)?;
        if metadata.iter().any(|(k, _): &(String, MetaValue)| *k == key) {
            return Err(GgufError::Malformed { pos: at, what: format!("duplicate key {key:?}") });
        }
        metadata.push((key, value));
    }

    let alignment = match metadata.iter().find(|(k, _)| k == ALIGNMENT_KEY) {
        None => DEFAULT_ALIGNMENT,
        Some((_, MetaValue::U32(a))) if *a > 0 && a.is_power_of_two() => u64::from(*a),
        Some((_, v)) => return Err(GgufError::Invariant(format!("{ALIGNMENT_KEY} = {v:?} is not a power-of-two u32"))),
    };

    let mut tensors = Vec::with_capacity(n_tensors as usize);
    for _ in 0..n_tensors {
        let name = r.utf8("tensor name")?;
        let at = r.pos;
        let n_dims = r.u32("tensor n_dims")?;
        if n_dims == 0 || n_dims > 4 {
            return Err(GgufError::Malformed { pos: at, what: format!("tensor {name:?}: {n_dims} dims") });
        }
        let dims = (0..n_dims).map(|_| r.u64("tensor dim")).collect::<Result<Vec<_>, _>>()?;
        let ggml_type = GgmlType(r.u32("tensor type")?);
        let offset = r.u64("tensor offset")?;
        tensors.push(TensorDesc { name, dims, ggml_type, offset, source_offset: offset });
    }

    let data_offset = align_up(r.pos, alignment);
    if data_offset > len {
        return Err(GgufError::Truncated { pos: r.pos, what: "padding before tensor data".into() });
    }
    let payload_len = len - data_offset;
    let model = GgufModel {
        version,
        metadata,
        tensors,
        alignment,
        payload_len,
        source_data_offset: data_offset,
        source_payload_len: payload_len,
    };
    model.validate()?;
    Ok(model)
}
