use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::difficulty::FinetuneConfig;
use crate::mae::{EncoderConfig, LossWeights};
use crate::metrics::DEFAULT_FRACTIONS;
use crate::pretrain::TrainConfig;
use crate::sampler::Scheme;
use crate::scene::ScenarioDims;
use crate::synth::{ArchetypeMix, EgoPolicyParams, WorldConfig};

/// A config problem located by its JSON path (`sampling.k0`, `world.dims.hidden`).
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn bad(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Evaluation corpus generator and the re-drive policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub seed: u64,
    /// Corpus size N_full.
    pub scenarios: usize,
    pub hazard: f64,
    pub dims: ScenarioDims,
    pub dt: f64,
    pub archetypes: ArchetypeMix,
    pub agents: [usize; 2],
    pub speed: [f64; 2],
    pub policy: EgoPolicyParams,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            seed: 0,
            scenarios: 20_000,
            hazard: 0.0056,
            dims: w.dims,
            dt: w.dt,
            archetypes: w.archetypes,
            agents: w.agents,
            speed: w.speed,
            policy: EgoPolicyParams::default(),
        }
    }
}

impl WorldSection {
    /// Generator sharing this section's scene settings with another seed and intensity.
    pub fn generator(&self, seed: u64, hazard: f64) -> WorldConfig {
        WorldConfig {
            seed,
            dims: self.dims,
            dt: self.dt,
            archetypes: self.archetypes,
            agents: self.agents,
            speed: self.speed,
            hazard,
        }
    }

    pub fn corpus(&self) -> WorldConfig {
        self.generator(self.seed, self.hazard)
    }
}

/// Encoder hyperparameters; the width D is `world.dims.hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub road_layers: usize,
    pub factorized_layers: usize,
    pub heads: usize,
    pub pointnet_widths: Vec<usize>,
    pub ffn_multiplier: usize,
    pub mask_ratio: f64,
    pub loss_mask_ratio: f64,
    pub loss_weights: LossWeights,
    pub object_encoding: bool,
    pub time_encoding: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EncoderConfig::for_dims(ScenarioDims::compact());
        Self {
            road_layers: e.road_layers,
            factorized_layers: e.factorized_layers,
            heads: e.heads,
            pointnet_widths: e.pointnet_widths,
            ffn_multiplier: e.ffn_multiplier,
            mask_ratio: e.mask_ratio,
            loss_mask_ratio: e.loss_mask_ratio,
            loss_weights: e.loss_weights,
            object_encoding: e.object_encoding,
            time_encoding: e.time_encoding,
        }
    }
}

impl ModelSection {
    pub fn encoder(&self, dims: ScenarioDims) -> EncoderConfig {
        EncoderConfig {
            dims,
            road_layers: self.road_layers,
            factorized_layers: self.factorized_layers,
            heads: self.heads,
            pointnet_widths: self.pointnet_widths.clone(),
            ffn_multiplier: self.ffn_multiplier,
            mask_ratio: self.mask_ratio,
            loss_mask_ratio: self.loss_mask_ratio,
            loss_weights: self.loss_weights,
            object_encoding: self.object_encoding,
            time_encoding: self.time_encoding,
        }
    }
}

/// Pretraining set and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Generated pretraining set: size, seed and hazard intensity.
    pub scenarios: usize,
    pub world_seed: u64,
    pub hazard: f64,
    /// Pretrain on this scenario file instead of the generated set.
    pub dataset: Option<PathBuf>,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub checkpoint_interval: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            scenarios: 512,
            world_seed: 512,
            hazard: 0.3,
            dataset: None,
            lr: t.lr,
            batch_size: t.batch_size,
            steps: t.steps,
            seed: t.seed,
            checkpoint_interval: t.checkpoint_interval,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            dataset: self.dataset.clone(),
        }
    }
}

/// Labeled pool for the difficulty head and its fine-tuning settings.
///
/// The pool is generated at a raised hazard intensity, simulated, and split in
/// index order: the first `train_per_class` collisions and non-collisions train
/// the head, the next `held_out_per_class` of each are held out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifficultySection {
    pub pool: usize,
    pub world_seed: u64,
    pub hazard: f64,
    pub train_per_class: usize,
    pub held_out_per_class: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for DifficultySection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            pool: 20_000,
            world_seed: 2024,
            hazard: 0.5,
            train_per_class: 2000,
            held_out_per_class: 500,
            lr: f.lr,
            batch_size: f.batch_size,
            steps: f.steps,
            seed: f.seed,
            hidden: f.hidden,
        }
    }
}

impl DifficultySection {
    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub w_d: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self { w_d: 1.0 }
    }
}

/// k-means settings shared by the DICE and the reference (w_d = 0) clusterings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub clusters: usize,
    pub seed: u64,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self { clusters: 50, seed: 1 }
    }
}

/// Sample size as an absolute budget or a corpus fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSize {
    Budget(usize),
    Fraction(f64),
}

impl SampleSize {
    pub fn budget(self, n: usize) -> usize {
        match self {
            SampleSize::Budget(b) => b.min(n),
            SampleSize::Fraction(f) => crate::metrics::budget_for(f, n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub scheme: Scheme,
    pub size: SampleSize,
    pub k0: f64,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Dice,
            size: SampleSize::Fraction(0.05),
            k0: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            seeds: (0..30).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Directory holding every stage artifact.
    pub dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/desk"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub world: WorldSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub difficulty: DifficultySection,
    pub embedding: EmbeddingSection,
    pub clustering: ClusteringSection,
    pub sampling: SamplingSection,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
}

/// Command-line values that replace config entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub budget: Option<usize>,
    pub fraction: Option<f64>,
    pub k0: Option<f64>,
    pub clusters: Option<usize>,
    pub scheme: Option<Scheme>,
}

impl PipelineConfig {
    /// Parses and validates; unknown keys and type errors report their JSON path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().to_string())
        })?;
        de.end().map_err(|e| bad(".", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| bad(".", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn encoder(&self) -> EncoderConfig {
        self.model.encoder(self.world.dims)
    }

    /// Applies overrides. `seed` goes to the seed owned by `stage`; stages
    /// without one ignore it.
    pub fn apply(&mut self, stage: super::Stage, o: &Overrides) {
        use super::Stage;
        if let Some(seed) = o.seed {
            match stage {
                Stage::GenData => self.world.seed = seed,
                Stage::Pretrain => self.train.seed = seed,
                Stage::Finetune => self.difficulty.seed = seed,
                Stage::Cluster => self.clustering.seed = seed,
                Stage::Sample => self.sampling.seed = seed,
                Stage::Evaluate => {
                    let n = self.evaluation.seeds.len() as u64;
                    self.evaluation.seeds = (seed..seed + n).collect();
                }
                Stage::Simulate | Stage::Embed => {}
            }
        }
        if let Some(dir) = &o.out {
            self.paths.dir = dir.clone();
        }
        if let Some(b) = o.budget {
            self.sampling.size = SampleSize::Budget(b);
        }
        if let Some(f) = o.fraction {
            self.sampling.size = SampleSize::Fraction(f);
        }
        if let Some(k0) = o.k0 {
            self.sampling.k0 = k0;
        }
        if let Some(m) = o.clusters {
            self.clustering.clusters = m;
        }
        if let Some(s) = o.scheme {
            self.sampling.scheme = s;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.world;
        w.corpus().check().map_err(|m| bad("world", m))?;
        if w.scenarios == 0 {
            return Err(bad("world.scenarios", "must be at least 1"));
        }
        self.encoder().check().map_err(|m| bad("model", m))?;

        let t = &self.train;
        if t.scenarios == 0 && t.dataset.is_none() {
            return Err(bad("train.scenarios", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&t.hazard) {
            return Err(bad("train.hazard", format!("{} outside [0, 1]", t.hazard)));
        }
        t.train_config().check().map_err(|e| bad("train", e.to_string()))?;

        let d = &self.difficulty;
        if !(0.0..=1.0).contains(&d.hazard) {
            return Err(bad("difficulty.hazard", format!("{} outside [0, 1]", d.hazard)));
        }
        for (path, v) in [
            ("difficulty.pool", d.pool),
            ("difficulty.train_per_class", d.train_per_class),
            ("difficulty.held_out_per_class", d.held_out_per_class),
            ("difficulty.batch_size", d.batch_size),
            ("difficulty.hidden", d.hidden),
        ] {
            if v == 0 {
                return Err(bad(path, "must be at least 1"));
            }
        }
        if 2 * (d.train_per_class + d.held_out_per_class) > d.pool {
            return Err(bad(
                "difficulty.pool",
                format!("{} scenarios cannot hold the requested balanced splits", d.pool),
            ));
        }
        if !(d.lr > 0.0 && d.lr.is_finite()) {
            return Err(bad("difficulty.lr", format!("must be positive, got {}", d.lr)));
        }

        let wd = self.embedding.w_d;
        if !(wd >= 0.0 && wd.is_finite()) {
            return Err(bad("embedding.w_d", format!("must be finite and >= 0, got {wd}")));
        }
        let m = self.clustering.clusters;
        if m == 0 || m > w.scenarios {
            return Err(bad(
                "clustering.clusters",
                format!("must lie in [1, world.scenarios = {}], got {m}", w.scenarios),
            ));
        }
        let k0 = self.sampling.k0;
        if !(k0 > 0.0 && k0.is_finite()) {
            return Err(bad("sampling.k0", format!("must be positive, got {k0}")));
        }
        if let SampleSize::Fraction(f) = self.sampling.size {
            if !(0.0..=1.0).contains(&f) {
                return Err(bad("sampling.size.fraction", format!("{f} outside [0, 1]")));
            }
        }
        let e = &self.evaluation;
        if e.fractions.is_empty() {
            return Err(bad("evaluation.fractions", "must not be empty"));
        }
        if let Some(i) = e.fractions.iter().position(|f| !(0.0..=1.0).contains(f)) {
            return Err(bad(&format!("evaluation.fractions[{i}]"), format!("{} outside [0, 1]", e.fractions[i])));
        }
        if e.seeds.is_empty() {
            return Err(bad("evaluation.seeds", "must not be empty"));
        }
        Ok(())
    }
}
