use std::io::{self, Read, Seek, SeekFrom, Write};

use super::types::{GgufString, MetaValue};
use super::{align_up, GgufError, GgufModel, GGUF_MAGIC};

fn put_string(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s);
}

fn put_value(out: &mut Vec<u8>, v: &MetaValue) {
    match v {
        MetaValue::U8(x) => out.push(*x),
        MetaValue::I8(x) => out.push(*x as u8),
        MetaValue::U16(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::I16(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::U32(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::I32(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::F32(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::Bool(x) => out.push(u8::from(*x)),
        MetaValue::String(GgufString(s)) => put_string(out, s),
        MetaValue::Array(a) => {
            out.extend_from_slice(&(a.elem_type as u32).to_le_bytes());
            out.extend_from_slice(&(a.values.len() as u64).to_le_bytes());
            for item in &a.values {
                put_value(out, item);
            }
        }
        MetaValue::U64(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::I64(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetaValue::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
    }
}

/// Everything before the tensor data: header, metadata, tensor infos, and the zero
/// padding up to the first aligned offset.
pub fn encode_header(model: &GgufModel) -> Result<Vec<u8>, GgufError> {
    let mut out = Vec::new();
    out.extend_from_slice(GGUF_MAGIC);
    out.extend_from_slice(&model.version.to_le_bytes());
    out.extend_from_slice(&(model.tensors.len() as u64).to_le_bytes());
    out.extend_from_slice(&(model.metadata.len() as u64).to_le_bytes());
    for (key, value) in &model.metadata {
        if let MetaValue::Array(a) = value {
            if let Some(bad) = a.values.iter().find(|v| v.meta_type() != a.elem_type) {
                return Err(GgufError::Invariant(format!(
                    "array {key:?} declared {:?} but holds {:?}",
                    a.elem_type,
                    bad.meta_type()
                )));
            }
        }
        put_string(&mut out, key.as_bytes());
        out.extend_from_slice(&(value.meta_type() as u32).to_le_bytes());
        put_value(&mut out, value);
    }
    for t in &model.tensors {
        put_string(&mut out, t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&t.ggml_type.0.to_le_bytes());
        out.extend_from_slice(&t.offset.to_le_bytes());
    }
    let padded = align_up(out.len() as u64, model.alignment) as usize;
    out.resize(padded, 0);
    Ok(out)
}

fn write_zeros<W: Write>(dest: &mut W, mut n: u64) -> io::Result<()> {
    const ZEROS: [u8; 4096] = [0; 4096];
    while n > 0 {
        let k = n.min(ZEROS.len() as u64) as usize;
        dest.write_all(&ZEROS[..k])?;
        n -= k as u64;
    }
    Ok(())
}

fn copy_range<R: Read + Seek, W: Write>(src: &mut R, dest: &mut W, start: u64, len: u64) -> io::Result<()> {
    src.seek(SeekFrom::Start(start))?;
    let copied = io::copy(&mut src.by_ref().take(len), dest)?;
    if copied != len {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("source ended after {copied} of {len} bytes at offset {start}"),
        ));
    }
    Ok(())
}

/// Writes `model`, streaming tensor bytes from `src` (the file `model` was parsed from).
/// Returns the number of bytes written.
///
/// When no tensor moved, the source payload is copied verbatim, so an unmodified model
/// reproduces its input byte for byte.
pub fn write_gguf<R, W>(model: &GgufModel, src: &mut R, dest: &mut W) -> Result<u64, GgufError>
where
    R: Read + Seek,
    W: Write,
{
    model.validate()?;
    let header = encode_header(model)?;
    dest.write_all(&header)?;

    if model.payload_is_passthrough() {
        copy_range(src, dest, model.source_data_offset, model.payload_len)?;
    } else {
        let mut extents: Vec<(u64, u64, u64)> =
            model.tensors.iter().map(|t| (t.offset, t.nbytes().expect("validated"), t.source_offset)).collect();
        extents.sort();
        extents.dedup_by_key(|e| e.0);
        let mut pos = 0u64;
        for (offset, size, source) in extents {
            write_zeros(dest, offset - pos)?;
            copy_range(src, dest, model.source_data_offset + source, size)?;
            pos = offset + size;
        }
        write_zeros(dest, model.payload_len - pos)?;
    }
    dest.flush()?;
    Ok(header.len() as u64 + model.payload_len)
}
