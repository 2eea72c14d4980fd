//! Binary SUM files.
//!
//! Layout: the 7 magic bytes `DOSUM1\0`, then little-endian `u32 p`, `u32 f`,
//! `u32 T`, `f64 lambda`, `T` row-major `p x f` matrices of `f64`, and finally
//! `T + 1` `f64` training RMSE values.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::UpdateMapSequence;
use crate::{Error, Result};

pub const SUM_MAGIC: &[u8; 7] = b"DOSUM1\0";
const HEADER_LEN: usize = 7 + 4 * 3 + 8;

pub fn write_sum<W: Write>(sum: &UpdateMapSequence, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(expected_len(sum.param_dim(), sum.feature_dim(), sum.len()));
    buf.extend_from_slice(SUM_MAGIC);
    for v in [sum.param_dim(), sum.feature_dim(), sum.len()] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("SUM dimension exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&sum.lambda().to_le_bytes());
    for map in sum.maps() {
        for r in 0..map.nrows() {
            for c in 0..map.ncols() {
                buf.extend_from_slice(&map[(r, c)].to_le_bytes());
            }
        }
    }
    for v in sum.training_rmse() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn expected_len(p: usize, f: usize, t: usize) -> usize {
    HEADER_LEN + 8 * (t * p * f + t + 1)
}

pub fn read_sum<R: Read>(mut input: R) -> Result<UpdateMapSequence> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<UpdateMapSequence> {
    if bytes.len() < SUM_MAGIC.len() || &bytes[..SUM_MAGIC.len()] != SUM_MAGIC {
        return Err(Error::BadMagic("DOSUM1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let (p, f, t) = (u32_at(7), u32_at(11), u32_at(15));
    let lambda = f64_at(19);

    let expected = p
        .checked_mul(f)
        .and_then(|pf| pf.checked_mul(t))
        .and_then(|n| n.checked_add(t + 1))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Parse("SUM header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }

    let mut off = HEADER_LEN;
    let mut maps = Vec::with_capacity(t);
    for _ in 0..t {
        let mut m = DMatrix::zeros(p, f);
        for r in 0..p {
            for c in 0..f {
                m[(r, c)] = f64_at(off);
                off += 8;
            }
        }
        maps.push(m);
    }
    let rmse = (0..=t).map(|k| f64_at(off + 8 * k)).collect();
    UpdateMapSequence::new(maps, lambda, rmse)
}

pub fn save_sum(sum: &UpdateMapSequence, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_sum(sum, std::io::BufWriter::new(file))
}

pub fn load_sum(path: impl AsRef<Path>) -> Result<UpdateMapSequence> {
    read_sum(std::fs::File::open(path)?)
}
