//! Corpus building and the `.out` outcome file.
//!
//! Outcome layout: magic `DOUT`, `u32` version, `u32` count, then columns:
//! all ids (length-prefixed utf-8), all labels (`u8`), all collision times
//! (`i32`, −1 for none), all minimum clearances (`f32`, +inf when no other
//! track ever exists).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use super::config::WorldConfig;
use super::generate::generate_scenario;
use super::sim::{simulate, EgoPolicyParams, SimError, SimOutcome};
use crate::binfmt::{BinReader, BinWriter, FormatError};
use crate::scene::{write_scenarios, Scenario};

pub const OUTCOME_MAGIC: &[u8; 4] = b"DOUT";

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRecord {
    pub id: String,
    pub outcome: SimOutcome,
}

pub fn write_outcomes_to<W: Write>(out: W, records: &[OutcomeRecord]) -> Result<(), FormatError> {
    let mut w = BinWriter::new(out);
    w.header(OUTCOME_MAGIC, records.len() as u32)?;
    for r in records {
        w.str(&r.id)?;
    }
    for r in records {
        w.u8(r.outcome.label)?;
    }
    for r in records {
        w.i32(r.outcome.collision_time.map_or(-1, |t| t as i32))?;
    }
    for r in records {
        w.f32(r.outcome.min_clearance as f32)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn write_outcomes(path: impl AsRef<Path>, records: &[OutcomeRecord]) -> Result<(), FormatError> {
    write_outcomes_to(BufWriter::new(File::create(path)?), records)
}

pub fn read_outcomes_from<R: Read>(input: R) -> Result<Vec<OutcomeRecord>, FormatError> {
    let mut r = BinReader::new(input);
    let n = r.header(OUTCOME_MAGIC)? as usize;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        ids.push(r.str()?);
    }
    let mut labels = Vec::with_capacity(ids.len());
    for _ in 0..n {
        let at = r.offset();
        let l = r.u8()?;
        if l > 1 {
            return Err(FormatError::InvalidRecord {
                offset: at,
                reason: format!("label {l} is not 0 or 1"),
            });
        }
        labels.push(l);
    }
    let mut times = Vec::with_capacity(ids.len());
    for i in 0..n {
        let at = r.offset();
        let t = r.i32()?;
        if (t >= 0) != (labels[i] == 1) || t < -1 {
            return Err(FormatError::InvalidRecord {
                offset: at,
                reason: format!("collision time {t} inconsistent with label {}", labels[i]),
            });
        }
        times.push(t);
    }
    let mut out = Vec::with_capacity(ids.len());
    for (i, id) in ids.into_iter().enumerate() {
        let c = r.f32()? as f64;
        out.push(OutcomeRecord {
            id,
            outcome: SimOutcome {
                collision: labels[i] == 1,
                collision_time: (times[i] >= 0).then_some(times[i] as usize),
                min_clearance: c,
                label: labels[i],
            },
        });
    }
    r.expect_eof()?;
    Ok(out)
}

pub fn read_outcomes(path: impl AsRef<Path>) -> Result<Vec<OutcomeRecord>, FormatError> {
    read_outcomes_from(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct OutcomeRow<'a> {
    id: &'a str,
    label: u8,
    collision_time: Option<usize>,
    min_clearance: f64,
}

pub fn write_outcomes_csv<W: Write>(out: W, records: &[OutcomeRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(OutcomeRow {
            id: &r.id,
            label: r.outcome.label,
            collision_time: r.outcome.collision_time,
            min_clearance: r.outcome.min_clearance,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `f` over `0..n` on up to `jobs` threads; results are in index order.
pub fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(jobs);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| scope.spawn(move || (j * chunk..((j + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Generates scenarios `first..first + n`.
pub fn generate_range(cfg: &WorldConfig, first: u64, n: usize, jobs: usize) -> Vec<Scenario> {
    parallel_map(n, jobs, |i| generate_scenario(cfg, first + i as u64))
}

pub fn simulate_all(
    scenarios: &[Scenario],
    policy: &EgoPolicyParams,
    jobs: usize,
) -> Result<Vec<OutcomeRecord>, SimError> {
    parallel_map(scenarios.len(), jobs, |i| {
        simulate(&scenarios[i], policy).map(|outcome| OutcomeRecord {
            id: scenarios[i].id.clone(),
            outcome,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub scenarios: usize,
    /// Corpus-level collision count.
    pub c_full: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("corpus size must be at least 1")]
    Empty,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Writes `n` scenarios to `scenario_path` and their outcomes to `outcome_path`.
pub fn build_corpus(
    cfg: &WorldConfig,
    n: usize,
    policy: &EgoPolicyParams,
    jobs: usize,
    scenario_path: impl AsRef<Path>,
    outcome_path: impl AsRef<Path>,
) -> Result<CorpusSummary, CorpusError> {
    cfg.check().map_err(CorpusError::Config)?;
    if n == 0 {
        return Err(CorpusError::Empty);
    }
    let scenarios = generate_range(cfg, 0, n, jobs);
    let outcomes = simulate_all(&scenarios, policy, jobs)?;
    write_scenarios(scenario_path, &scenarios)?;
    write_outcomes(outcome_path, &outcomes)?;
    Ok(CorpusSummary {
        scenarios: n,
        c_full: outcomes.iter().map(|r| r.outcome.label as usize).sum(),
    })
}
