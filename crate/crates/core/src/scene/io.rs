//! `.scn` scenario files.
//!
//! Layout: magic `DICE`, `u32` version, `u32` count, the eleven dims as `u32`,
//! then per scenario: id (length-prefixed utf-8), `f32` dt, the declared row
//! counts (tracks, signals, polylines) as `u32`, and the five tensors as
//! little-endian `f32` in the order tracks, signals, frames, labels, points.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Polylines, Scenario, ScenarioDims, SignalTensor, TrackTensor};
use crate::binfmt::{BinReader, BinWriter, FormatError};

pub const SCENARIO_MAGIC: &[u8; 4] = b"DICE";

pub fn write_scenarios_to<W: Write>(out: W, scenarios: &[Scenario]) -> Result<(), FormatError> {
    let dims = scenarios.first().map(|s| s.dims).unwrap_or_default();
    let mut w = BinWriter::new(out);
    w.header(SCENARIO_MAGIC, scenarios.len() as u32)?;
    for d in dims.as_array() {
        w.u32(d as u32)?;
    }
    for s in scenarios {
        if s.dims != dims {
            return Err(FormatError::InvalidRecord {
                offset: 0,
                reason: format!("scenario {} has dims different from the first record", s.id),
            });
        }
        w.str(&s.id)?;
        w.f32(s.dt)?;
        w.u32(dims.max_tracks as u32)?;
        w.u32(dims.signals as u32)?;
        w.u32(dims.polylines as u32)?;
        w.f32s(&s.tracks.data)?;
        w.f32s(&s.signals.data)?;
        w.f32s(&s.polylines.frames)?;
        w.f32s(&s.polylines.labels)?;
        w.f32s(&s.polylines.points)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn write_scenarios(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<(), FormatError> {
    let f = BufWriter::new(File::create(path)?);
    write_scenarios_to(f, scenarios)
}

pub fn read_scenarios_from<R: Read>(input: R) -> Result<Vec<Scenario>, FormatError> {
    let mut r = BinReader::new(input);
    let count = r.header(SCENARIO_MAGIC)?;
    let mut raw = [0usize; 11];
    for v in raw.iter_mut() {
        *v = r.u32()? as usize;
    }
    let dims = ScenarioDims::from_array(raw);
    if let Some(problem) = dims.check().into_iter().next() {
        return Err(FormatError::MalformedHeader {
            offset: 12,
            reason: problem,
        });
    }
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let id = r.str()?;
        let dt = r.f32()?;
        let declared = [
            ("max_tracks", dims.max_tracks),
            ("signals", dims.signals),
            ("polylines", dims.polylines),
        ];
        for (field, expected) in declared {
            let at = r.offset();
            let found = r.u32()? as usize;
            if found != expected {
                return Err(FormatError::DimensionMismatch {
                    offset: at,
                    field: format!("{field} rows of scenario {id}"),
                    expected: expected as u64,
                    found: found as u64,
                });
            }
        }
        let tracks = r.f32s(dims.track_len())?;
        let signals = r.f32s(dims.signal_len())?;
        let frames = r.f32s(dims.frame_len())?;
        let labels = r.f32s(dims.label_len())?;
        let points = r.f32s(dims.point_len())?;
        out.push(Scenario {
            dims,
            id,
            dt,
            tracks: TrackTensor { data: tracks },
            signals: SignalTensor { data: signals },
            polylines: Polylines {
                frames,
                labels,
                points,
            },
        });
    }
    r.expect_eof()?;
    Ok(out)
}

pub fn read_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>, FormatError> {
    let f = BufReader::new(File::open(path)?);
    read_scenarios_from(f)
}
