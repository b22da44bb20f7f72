//! Versioned flat binary for [`ModelState`].
//!
//! Layout, all integers little-endian `u32`:
//! magic `ASMT`, format version, length of a JSON header followed by the
//! header itself (network spec, freeze flags, seed), record count, then one
//! record per tensor: block index, rank, dims, and the values as `f64`
//! little-endian. Tensors of a block come in the order weight, bias and,
//! with batch norm, gamma, beta, running mean, running variance.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::network::{init_model, ModelState};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ASMT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    frozen: Vec<bool>,
    seed: u64,
}

fn tensors(state: &ModelState) -> Vec<(u32, Vec<usize>, &[f64])> {
    let mut out = Vec::new();
    for (i, b) in state.blocks.iter().enumerate() {
        if b.weight_dims.is_empty() {
            continue;
        }
        let i = i as u32;
        out.push((i, b.weight_dims.clone(), b.weight.as_slice()));
        out.push((i, vec![b.bias.len()], b.bias.as_slice()));
        if let Some(bn) = &b.batch_norm {
            for t in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                out.push((i, vec![t.len()], t.as_slice()));
            }
        }
    }
    out
}

fn tensors_mut(state: &mut ModelState) -> Vec<(u32, Vec<usize>, &mut Vec<f64>)> {
    let mut out = Vec::new();
    for (i, b) in state.blocks.iter_mut().enumerate() {
        if b.weight_dims.is_empty() {
            continue;
        }
        let i = i as u32;
        let bias_len = b.bias.len();
        out.push((i, b.weight_dims.clone(), &mut b.weight));
        out.push((i, vec![bias_len], &mut b.bias));
        if let Some(bn) = &mut b.batch_norm {
            let m = bn.gamma.len();
            for t in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var] {
                out.push((i, vec![m], t));
            }
        }
    }
    out
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the model format")))
}

pub fn write_model<W: Write>(mut w: W, state: &ModelState) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, FORMAT_VERSION)?;
    let header = serde_json::to_vec(&Header {
        spec: state.spec.clone(),
        frozen: state.frozen.clone(),
        seed: state.seed,
    })?;
    put_u32(&mut w, to_u32(header.len(), "header length")?)?;
    w.write_all(&header)?;
    let records = tensors(state);
    put_u32(&mut w, to_u32(records.len(), "record count")?)?;
    for (block, dims, values) in records {
        put_u32(&mut w, block)?;
        put_u32(&mut w, to_u32(dims.len(), "rank")?)?;
        for d in dims {
            put_u32(&mut w, to_u32(d, "dimension")?)?;
        }
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelState> {
    let bad = |detail: String| Error::format("model file", detail);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = get_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = get_u32(&mut r)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.frozen.len() != header.spec.blocks.len() {
        return Err(bad("freeze flags do not match block count".into()));
    }
    let mut state = init_model(&header.spec, header.seed)?;
    state.frozen = header.frozen;
    let count = get_u32(&mut r)? as usize;
    let mut slots = tensors_mut(&mut state);
    if count != slots.len() {
        return Err(bad(format!("expected {} tensors, found {count}", slots.len())));
    }
    for (k, (block, dims, values)) in slots.iter_mut().enumerate() {
        let got_block = get_u32(&mut r)?;
        let rank = get_u32(&mut r)? as usize;
        let got_dims = (0..rank).map(|_| get_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if got_block != *block || got_dims != *dims {
            return Err(bad(format!(
                "tensor {k}: expected block {block} dims {dims:?}, found block {got_block} dims {got_dims:?}"
            )));
        }
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = NetworkSpec::four_block(3, 16, 2);
        let mut state = init_model(&spec, 11).unwrap();
        state.frozen[0] = true;
        state.blocks[1].batch_norm.as_mut().unwrap().running_var[2] = 0.123456789;
        let mut buf = Vec::new();
        write_model(&mut buf, &state).unwrap();
        assert_eq!(&buf[..4], b"ASMT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(read_model(buf.as_slice()).unwrap(), state);
    }

    #[test]
    fn corrupt_files_rejected() {
        let state = init_model(&NetworkSpec::four_block(2, 8, 2), 1).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &state).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(bad.as_slice()).is_err());
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_model(long.as_slice()).is_err());
        let mut version = buf;
        version[4] = 9;
        assert!(read_model(version.as_slice()).is_err());
    }
}
