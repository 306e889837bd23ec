//! Binary parameter blobs.
//!
//! Layout (all integers little-endian):
//! `b"FMCG"`, version byte, `u32` parameter count, `u32` state count, then one
//! record per tensor: section byte (0 parameter, 1 state), `u32` name length,
//! UTF-8 name, `u32` rank, `u32` per dimension, `f64` values.

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"FMCG";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u32).to_le_bytes());
}

pub fn serialize_params(ps: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.push(FORMAT_VERSION);
    put_u32(&mut out, ps.len());
    put_u32(&mut out, ps.states().count());
    let sections = ps.params().map(|e| (0u8, e)).chain(ps.states().map(|e| (1u8, e)));
    for (section, (name, t)) in sections {
        out.push(section);
        put_u32(&mut out, name.len());
        out.extend(name.as_bytes());
        put_u32(&mut out, t.ndim());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("param blob", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("param blob", "bad magic"));
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(Error::format(
            "param blob",
            format!("version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let n_params = r.u32()?;
    let n_state = r.u32()?;
    let mut ps = ParamSet::new();
    for i in 0..n_params + n_state {
        let section = r.take(1)?[0];
        if section != u8::from(i >= n_params) {
            return Err(Error::format("param blob", "section out of order"));
        }
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("param blob", "name is not UTF-8"))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format("param blob", "size overflow"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data)?;
        if section == 0 {
            ps.insert(name, t);
        } else {
            ps.insert_state(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("param blob", "trailing bytes"));
    }
    if ps.len() != n_params || ps.states().count() != n_state {
        return Err(Error::format("param blob", "duplicate names"));
    }
    Ok(ps)
}

/// Deserializes and checks keys and shapes against `template`.
pub fn deserialize_like(bytes: &[u8], template: &ParamSet) -> Result<ParamSet> {
    let ps = deserialize_params(bytes)?;
    template.check_layout(&ps, "param blob")?;
    Ok(ps)
}
