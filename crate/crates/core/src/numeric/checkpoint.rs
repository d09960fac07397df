//! Parameter-table checkpoints.
//!
//! Layout: magic `DCKP`, `u32` version, `u32` parameter count, a
//! length-prefixed JSON config document, then per parameter its name,
//! `u32` rank, `u32` extents and little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::binfmt::{BinReader, BinWriter, FormatError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCKP";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Producer-defined configuration, stored verbatim.
    pub config: String,
    pub params: ParamStore<f32>,
}

pub fn write_checkpoint_to<W: Write>(out: W, ck: &Checkpoint) -> Result<(), FormatError> {
    let mut w = BinWriter::new(out);
    w.header(CHECKPOINT_MAGIC, ck.params.len() as u32)?;
    w.str(&ck.config)?;
    for (name, t) in ck.params.iter() {
        w.str(name)?;
        w.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.u32(d as u32)?;
        }
        w.f32s(t.data())?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<(), FormatError> {
    write_checkpoint_to(BufWriter::new(File::create(path)?), ck)
}

pub fn read_checkpoint_from<R: Read>(input: R) -> Result<Checkpoint, FormatError> {
    let mut r = BinReader::new(input);
    let count = r.header(CHECKPOINT_MAGIC)?;
    let config = r.str()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let at = r.offset();
        let name = r.str()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(FormatError::InvalidRecord {
                offset: at,
                reason: format!("parameter {name} has rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let data = r.f32s(shape.iter().product())?;
        let t = Tensor::new(&shape, data).expect("length follows shape");
        params.insert(name, t).map_err(|e| FormatError::InvalidRecord {
            offset: at,
            reason: e.to_string(),
        })?;
    }
    r.expect_eof()?;
    Ok(Checkpoint { config, params })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, FormatError> {
    read_checkpoint_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut params = ParamStore::new();
        params
            .insert("w", Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap())
            .unwrap();
        params.insert("b", Tensor::zeros(&[3])).unwrap();
        let ck = Checkpoint {
            config: "{\"d\":8}".into(),
            params,
        };
        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &ck).unwrap();
        assert_eq!(read_checkpoint_from(buf.as_slice()).unwrap(), ck);
    }
}
