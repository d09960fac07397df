//! Clustering features: ego embeddings and the DICE concatenation.
//!
//! `.emb` layout: magic `DEMB`, `u32` version, `u32` count, `u32` width,
//! `count × width` little-endian `f32` rows, then the id table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binfmt::{BinReader, BinWriter, FormatError};
use crate::mae::{Embeddings, Mae};
use crate::numeric::{NumericError, ParamStore};
use crate::scene::{Scenario, ScenarioDims};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"DEMB";

/// Mean of the ego rows of Z_V over time.
pub fn ego_from_embeddings(e: &Embeddings, dims: &ScenarioDims) -> Vec<f32> {
    let d = dims.hidden;
    let zv = e.z_v.data();
    let mut acc = vec![0.0f64; d];
    for t in 0..dims.timesteps {
        for (a, &v) in acc.iter_mut().zip(&zv[t * d..(t + 1) * d]) {
            *a += v as f64;
        }
    }
    acc.iter().map(|&a| (a / dims.timesteps as f64) as f32).collect()
}

pub fn ego_embedding(mae: &Mae, backbone: &ParamStore<f32>, s: &Scenario) -> Result<Vec<f32>, NumericError> {
    Ok(ego_from_embeddings(&mae.embed(backbone, s)?, &s.dims))
}

/// Per-dimension corpus mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose std was zero and replaced by 1.
    pub degenerate: Vec<usize>,
}

impl FeatureStats {
    pub fn fit(rows: &[Vec<f32>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let mut degenerate = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    log::warn!("embedding dimension {i} has zero variance; using std 1");
                    degenerate.push(i);
                    1.0
                }
            })
            .collect();
        Self { mean, std, degenerate }
    }
}

/// Standardized `z` with `w_d · d` appended.
pub fn dice_feature(z: &[f32], d: f64, w_d: f64, stats: &FeatureStats) -> Vec<f64> {
    z.iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(&v, (m, s))| (v as f64 - m) / s)
        .chain(std::iter::once(d * w_d))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub width: usize,
    pub rows: Vec<Vec<f32>>,
}

pub fn write_embeddings_to<W: Write>(out: W, t: &EmbeddingTable) -> Result<(), FormatError> {
    let mut w = BinWriter::new(out);
    w.header(EMBEDDING_MAGIC, t.rows.len() as u32)?;
    w.u32(t.width as u32)?;
    for r in &t.rows {
        if r.len() != t.width {
            return Err(FormatError::InvalidRecord {
                offset: 0,
                reason: format!("row of width {} in a table of width {}", r.len(), t.width),
            });
        }
        w.f32s(r)?;
    }
    for id in &t.ids {
        w.str(id)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn write_embeddings(path: impl AsRef<Path>, t: &EmbeddingTable) -> Result<(), FormatError> {
    write_embeddings_to(BufWriter::new(File::create(path)?), t)
}

pub fn read_embeddings_from<R: Read>(input: R) -> Result<EmbeddingTable, FormatError> {
    let mut r = BinReader::new(input);
    let n = r.header(EMBEDDING_MAGIC)? as usize;
    let width = r.u32()? as usize;
    let mut rows = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let at = r.offset();
        let row = r.f32s(width)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::InvalidRecord {
                offset: at,
                reason: "non-finite embedding value".into(),
            });
        }
        rows.push(row);
    }
    let mut ids = Vec::with_capacity(rows.len());
    for _ in 0..n {
        ids.push(r.str()?);
    }
    r.expect_eof()?;
    Ok(EmbeddingTable { ids, width, rows })
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, FormatError> {
    read_embeddings_from(BufReader::new(File::open(path)?))
}
