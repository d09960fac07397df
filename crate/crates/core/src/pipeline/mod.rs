//! Config-driven pipeline stages behind the `dice` command line.
//!
//! Every stage reads its inputs from and writes its outputs to `paths.dir`,
//! then writes `<stage>.manifest.json` holding the effective config, the
//! SHA-256 of each input and output, and a stage summary.

mod config;
mod stages;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::*;
pub use stages::run;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    GenData,
    Simulate,
    Pretrain,
    Finetune,
    Embed,
    Cluster,
    Sample,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::Simulate,
        Stage::Pretrain,
        Stage::Finetune,
        Stage::Embed,
        Stage::Cluster,
        Stage::Sample,
        Stage::Evaluate,
    ];

    /// Subcommand name.
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Simulate => "simulate",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Sample => "sample",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Artifact {
    CorpusScenarios,
    PretrainScenarios,
    LabeledScenarios,
    CorpusOutcomes,
    CorpusOutcomesCsv,
    LabeledOutcomes,
    Backbone,
    PretrainTrace,
    Head,
    FinetuneTrace,
    HeldOutScores,
    Embeddings,
    Scores,
    DiceAssignments,
    DiceCentroids,
    ReferenceAssignments,
    ReferenceCentroids,
    Sample,
    Report,
    Curves,
    Gnuplot,
}

impl Artifact {
    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::CorpusScenarios => "corpus.scn",
            Artifact::PretrainScenarios => "pretrain.scn",
            Artifact::LabeledScenarios => "labeled.scn",
            Artifact::CorpusOutcomes => "corpus.out",
            Artifact::CorpusOutcomesCsv => "corpus_outcomes.csv",
            Artifact::LabeledOutcomes => "labeled.out",
            Artifact::Backbone => "backbone.ckpt",
            Artifact::PretrainTrace => "pretrain_trace.csv",
            Artifact::Head => "head.ckpt",
            Artifact::FinetuneTrace => "finetune_trace.csv",
            Artifact::HeldOutScores => "held_out_scores.csv",
            Artifact::Embeddings => "embeddings.demb",
            Artifact::Scores => "scores.csv",
            Artifact::DiceAssignments => "clusters_dice.csv",
            Artifact::DiceCentroids => "centroids_dice.dcen",
            Artifact::ReferenceAssignments => "clusters_reference.csv",
            Artifact::ReferenceCentroids => "centroids_reference.dcen",
            Artifact::Sample => "sample.csv",
            Artifact::Report => "report.json",
            Artifact::Curves => "curves.csv",
            Artifact::Gnuplot => "curves.dat",
        }
    }

    /// The stage that writes this artifact.
    pub fn producer(self) -> Stage {
        use Artifact::*;
        match self {
            CorpusScenarios | PretrainScenarios | LabeledScenarios => Stage::GenData,
            CorpusOutcomes | CorpusOutcomesCsv | LabeledOutcomes => Stage::Simulate,
            Backbone | PretrainTrace => Stage::Pretrain,
            Head | FinetuneTrace | HeldOutScores => Stage::Finetune,
            Embeddings | Scores => Stage::Embed,
            DiceAssignments | DiceCentroids | ReferenceAssignments | ReferenceCentroids => Stage::Cluster,
            Sample => Stage::Sample,
            Report | Curves | Gnuplot => Stage::Evaluate,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config at {}: {}", .0.path, .0.message)]
    Config(#[from] ConfigError),
    #[error("missing artifact {}; run `dice {}` first", .path.display(), .produced_by.name())]
    MissingArtifact { path: PathBuf, produced_by: Stage },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    pub(crate) fn stage(stage: Stage, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage: stage.name(),
            message: e.to_string(),
        }
    }

    /// Machine-readable form written to stderr by the command line.
    pub fn to_json(&self) -> Value {
        let msg = self.to_string();
        match self {
            PipelineError::Config(c) => json!({"error": "config", "path": c.path, "message": msg}),
            PipelineError::MissingArtifact { path, produced_by } => json!({
                "error": "missing_artifact",
                "artifact": path.display().to_string(),
                "produced_by": produced_by.name(),
                "message": msg,
            }),
            PipelineError::Stage { stage, .. } => json!({"error": "stage", "stage": stage, "message": msg}),
            PipelineError::Io { path, .. } => {
                json!({"error": "io", "path": path.display().to_string(), "message": msg})
            }
        }
    }
}

/// Artifact paths under one run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.dir.join(a.file_name())
    }

    /// Path of an upstream artifact, or the error naming the command that makes it.
    pub fn require(&self, a: Artifact) -> Result<PathBuf, PipelineError> {
        let p = self.path(a);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact {
                path: p,
                produced_by: a.producer(),
            })
        }
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.dir.join(format!("{}.manifest.json", stage.name()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn read_manifest(layout: &Layout, stage: Stage) -> Result<Value, PipelineError> {
    let p = layout.manifest(stage);
    let text = std::fs::read_to_string(&p).map_err(|_| PipelineError::MissingArtifact {
        path: p.clone(),
        produced_by: stage,
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::stage(stage, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_artifact_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let l = Layout::new(dir.path());
        let e = l.require(Artifact::Backbone).unwrap_err();
        assert!(e.to_string().contains("run `dice pretrain` first"), "{e}");
        assert_eq!(e.to_json()["produced_by"], "pretrain");
    }

    #[test]
    fn artifact_names_are_distinct() {
        use std::collections::HashSet;
        let all = [
            Artifact::CorpusScenarios,
            Artifact::PretrainScenarios,
            Artifact::LabeledScenarios,
            Artifact::CorpusOutcomes,
            Artifact::CorpusOutcomesCsv,
            Artifact::LabeledOutcomes,
            Artifact::Backbone,
            Artifact::PretrainTrace,
            Artifact::Head,
            Artifact::FinetuneTrace,
            Artifact::HeldOutScores,
            Artifact::Embeddings,
            Artifact::Scores,
            Artifact::DiceAssignments,
            Artifact::DiceCentroids,
            Artifact::ReferenceAssignments,
            Artifact::ReferenceCentroids,
            Artifact::Sample,
            Artifact::Report,
            Artifact::Curves,
            Artifact::Gnuplot,
        ];
        let names: HashSet<_> = all.iter().map(|a| a.file_name()).collect();
        assert_eq!(names.len(), all.len());
    }
}
