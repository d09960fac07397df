//! Self-supervised pretraining loop, checkpoints and reconstruction evaluation.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::FormatError;
use crate::mae::{sample_masks, EncoderConfig, LossBreakdown, Mae, MaskSet, ModelInputs};
use crate::numeric::{read_checkpoint, write_checkpoint, Adam, AdamConfig, Checkpoint, Graph, NumericError, ParamStore, Tensor};
use crate::scene::{validate, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_interval: usize,
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            checkpoint_interval: 0,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(TrainError::Config(format!(
                "batch size ({}) and steps ({}) must be at least 1",
                self.batch_size, self.steps
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("scenario {id} fails validation: {problems}")]
    Dataset { id: String, problems: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("scenario {id} has dims {found:?}, model expects {expected:?}")]
    DimMismatch {
        id: String,
        expected: Box<crate::scene::ScenarioDims>,
        found: Box<crate::scene::ScenarioDims>,
    },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("checkpoint config: {0}")]
    CheckpointConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One row of the loss trace; losses are batch means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    #[serde(rename = "L_T")]
    pub track: f64,
    #[serde(rename = "L_S")]
    pub signal: f64,
    #[serde(rename = "L_R")]
    pub road: f64,
    #[serde(rename = "L_ego")]
    pub ego: f64,
}

pub struct TrainOutput {
    pub params: ParamStore<f32>,
    pub trace: Vec<TraceRow>,
}

/// Checks every scenario and its dims against the model.
pub fn check_dataset(mae: &Mae, data: &[Scenario]) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let expected = mae.config().dims;
    for s in data {
        if s.dims != expected {
            return Err(TrainError::DimMismatch {
                id: s.id.clone(),
                expected: Box::new(expected),
                found: Box::new(s.dims),
            });
        }
        let v = validate(s);
        if !v.is_empty() {
            let problems = v.iter().take(3).map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(TrainError::Dataset {
                id: s.id.clone(),
                problems,
            });
        }
    }
    Ok(())
}

/// Trains from `init` (or a fresh seed-derived initialization). `on_checkpoint`
/// is called with the step count after every `checkpoint_interval` steps.
pub fn pretrain_from(
    mae: &Mae,
    cfg: &TrainConfig,
    data: &[Scenario],
    init: Option<ParamStore<f32>>,
    mut on_checkpoint: impl FnMut(usize, &ParamStore<f32>) -> Result<(), TrainError>,
) -> Result<TrainOutput, TrainError> {
    cfg.check()?;
    check_dataset(mae, data)?;
    let mut params = match init {
        Some(p) => p,
        None => mae.init_params(cfg.seed),
    };
    mae.check_params(&params)?;
    let enc = mae.config();
    let targets: Vec<ModelInputs> = data.iter().map(ModelInputs::from_scenario).collect();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.batch_size as f32;

    for step in 0..cfg.steps {
        let mut grads: Vec<Option<Tensor<f32>>> = vec![None; params.len()];
        let mut sums = [0.0f64; 5];
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let masks = sample_masks(&enc.dims, enc.mask_ratio, &mut rng);
            let loss_mask = sample_masks(&enc.dims, enc.loss_mask_ratio, &mut rng);
            let mut g = Graph::new();
            let nodes = mae.loss(&mut g, &params, &targets[idx], &masks, &loss_mask)?;
            let b = LossBreakdown::read(&g, &nodes);
            for (s, v) in sums.iter_mut().zip([b.total, b.track, b.signal, b.road, b.ego]) {
                *s += v;
            }
            let per = g.backward(nodes.total)?.for_params(params.len());
            for (acc, gr) in grads.iter_mut().zip(per) {
                match (acc.as_mut(), gr) {
                    (Some(a), Some(gr)) => a.add_assign(&gr),
                    (None, Some(gr)) => *acc = Some(gr),
                    _ => {}
                }
            }
        }
        let n = cfg.batch_size as f64;
        let row = TraceRow {
            step,
            total: sums[0] / n,
            track: sums[1] / n,
            signal: sums[2] / n,
            road: sums[3] / n,
            ego: sums[4] / n,
        };
        if !row.total.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        trace.push(row);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        adam.step(&mut params, &grads);
        if cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps {
            on_checkpoint(step + 1, &params)?;
        }
    }
    Ok(TrainOutput { params, trace })
}

pub fn pretrain(mae: &Mae, cfg: &TrainConfig, data: &[Scenario]) -> Result<TrainOutput, TrainError> {
    pretrain_from(mae, cfg, data, None, |_, _| Ok(()))
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

pub fn save_backbone(path: impl AsRef<Path>, mae: &Mae, params: &ParamStore<f32>) -> Result<(), TrainError> {
    let config = serde_json::to_string(mae.config()).map_err(|e| TrainError::CheckpointConfig(e.to_string()))?;
    write_checkpoint(
        path,
        &Checkpoint {
            config,
            params: params.clone(),
        },
    )?;
    Ok(())
}

/// Loads a backbone checkpoint and rebuilds its model from the embedded config.
pub fn load_backbone(path: impl AsRef<Path>) -> Result<(Mae, ParamStore<f32>), TrainError> {
    let ck = read_checkpoint(path)?;
    let config: EncoderConfig =
        serde_json::from_str(&ck.config).map_err(|e| TrainError::CheckpointConfig(e.to_string()))?;
    let mae = Mae::new(config).map_err(TrainError::CheckpointConfig)?;
    mae.check_params(&ck.params)?;
    Ok((mae, ck.params))
}

/// Mean per-component reconstruction loss with nothing masked and every
/// entry covered by the loss.
pub fn eval_reconstruction(mae: &Mae, params: &ParamStore<f32>, data: &[Scenario]) -> Result<LossBreakdown, TrainError> {
    check_dataset(mae, data)?;
    let dims = mae.config().dims;
    let (none, all) = (MaskSet::none(&dims), MaskSet::all(&dims));
    let mut acc = LossBreakdown::default();
    for s in data {
        let mut g = Graph::new();
        let nodes = mae.loss(&mut g, params, &ModelInputs::from_scenario(s), &none, &all)?;
        let b = LossBreakdown::read(&g, &nodes);
        acc.total += b.total;
        acc.track += b.track;
        acc.signal += b.signal;
        acc.road += b.road;
        acc.ego += b.ego;
    }
    let n = data.len() as f64;
    acc.total /= n;
    acc.track /= n;
    acc.signal /= n;
    acc.road /= n;
    acc.ego /= n;
    Ok(acc)
}
