use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{sha256_file, Artifact, Layout, PipelineConfig, PipelineError, Stage};
use crate::difficulty::{finetune, pool_concat, roc_auc, track_existence, write_scores_csv, DifficultyHead};
use crate::embedding::{dice_feature, ego_from_embeddings, read_embeddings, write_embeddings, EmbeddingTable, FeatureStats};
use crate::mae::Mae;
use crate::metrics::{evaluate, write_curves_csv, write_gnuplot_table, EvalCorpus, EvaluationReport};
use crate::pretrain::{load_backbone, pretrain_from, save_backbone, write_trace_csv};
use crate::sampler::{
    kmeans, read_assignments_csv, read_centroids, score_importance, write_assignments_csv, write_centroids,
    write_sample_csv, ClusterStat, Clustering,
};
use crate::scene::{read_scenarios, write_scenarios, Scenario};
use crate::synth::{generate_range, parallel_map, read_outcomes, simulate_all, write_outcomes, write_outcomes_csv};

trait OrStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::fmt::Display> OrStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::stage(stage, e))
    }
}

/// Tracks the files a stage read and wrote for its manifest.
struct Ctx<'a> {
    stage: Stage,
    cfg: &'a PipelineConfig,
    layout: Layout,
    jobs: usize,
    inputs: BTreeMap<String, PathBuf>,
    outputs: BTreeMap<String, PathBuf>,
}

impl<'a> Ctx<'a> {
    fn input(&mut self, a: Artifact) -> Result<PathBuf, PipelineError> {
        let p = self.layout.require(a)?;
        self.inputs.insert(a.file_name().to_string(), p.clone());
        Ok(p)
    }

    fn output(&mut self, a: Artifact) -> PathBuf {
        self.output_named(a.file_name())
    }

    fn output_named(&mut self, name: &str) -> PathBuf {
        let p = self.layout.dir.join(name);
        self.outputs.insert(name.to_string(), p.clone());
        p
    }

    fn fail(&self, message: impl Into<String>) -> PipelineError {
        PipelineError::Stage {
            stage: self.stage.name(),
            message: message.into(),
        }
    }

    fn create(&self, path: &Path) -> Result<BufWriter<File>, PipelineError> {
        File::create(path).map(BufWriter::new).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn finish(self, summary: Value) -> Result<Value, PipelineError> {
        let hashes = |m: &BTreeMap<String, PathBuf>| -> Result<BTreeMap<String, String>, PipelineError> {
            m.iter().map(|(k, p)| Ok((k.clone(), sha256_file(p)?))).collect()
        };
        let manifest = json!({
            "command": self.stage.name(),
            "config": serde_json::to_value(self.cfg).at(self.stage)?,
            "inputs": hashes(&self.inputs)?,
            "outputs": hashes(&self.outputs)?,
            "summary": summary,
        });
        let path = self.layout.manifest(self.stage);
        let mut w = self.create(&path)?;
        let text = serde_json::to_string_pretty(&manifest).at(self.stage)?;
        writeln!(w, "{text}")
            .and_then(|_| w.flush())
            .map_err(|source| PipelineError::Io { path, source })?;
        Ok(summary)
    }
}

/// Runs one stage with up to `jobs` worker threads and returns its summary.
pub fn run(stage: Stage, cfg: &PipelineConfig, jobs: usize) -> Result<Value, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.dir);
    std::fs::create_dir_all(&layout.dir).map_err(|source| PipelineError::Io {
        path: layout.dir.clone(),
        source,
    })?;
    let mut ctx = Ctx {
        stage,
        cfg,
        layout,
        jobs: jobs.max(1),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    let summary = match stage {
        Stage::GenData => gen_data(&mut ctx)?,
        Stage::Simulate => simulate(&mut ctx)?,
        Stage::Pretrain => pretrain(&mut ctx)?,
        Stage::Finetune => finetune_head(&mut ctx)?,
        Stage::Embed => embed(&mut ctx)?,
        Stage::Cluster => cluster(&mut ctx)?,
        Stage::Sample => sample(&mut ctx)?,
        Stage::Evaluate => evaluate_all(&mut ctx)?,
    };
    ctx.finish(summary)
}

fn gen_data(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let (w, t, d) = (&ctx.cfg.world, &ctx.cfg.train, &ctx.cfg.difficulty);
    let corpus = generate_range(&w.corpus(), 0, w.scenarios, ctx.jobs);
    write_scenarios(ctx.output(Artifact::CorpusScenarios), &corpus).at(ctx.stage)?;
    drop(corpus);
    let pretrain = if t.dataset.is_none() {
        let set = generate_range(&w.generator(t.world_seed, t.hazard), 0, t.scenarios, ctx.jobs);
        write_scenarios(ctx.output(Artifact::PretrainScenarios), &set).at(ctx.stage)?;
        Some(set.len())
    } else {
        None
    };
    let pool = generate_range(&w.generator(d.world_seed, d.hazard), 0, d.pool, ctx.jobs);
    write_scenarios(ctx.output(Artifact::LabeledScenarios), &pool).at(ctx.stage)?;
    Ok(json!({"corpus": w.scenarios, "pretrain": pretrain, "labeled_pool": pool.len()}))
}

fn simulate(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let policy = ctx.cfg.world.policy;
    let corpus = read_scenarios(ctx.input(Artifact::CorpusScenarios)?).at(ctx.stage)?;
    let out = simulate_all(&corpus, &policy, ctx.jobs).at(ctx.stage)?;
    drop(corpus);
    write_outcomes(ctx.output(Artifact::CorpusOutcomes), &out).at(ctx.stage)?;
    let csv_path = ctx.output(Artifact::CorpusOutcomesCsv);
    write_outcomes_csv(ctx.create(&csv_path)?, &out).at(ctx.stage)?;
    let c_full: usize = out.iter().map(|r| r.outcome.label as usize).sum();

    let pool = read_scenarios(ctx.input(Artifact::LabeledScenarios)?).at(ctx.stage)?;
    let labeled = simulate_all(&pool, &policy, ctx.jobs).at(ctx.stage)?;
    write_outcomes(ctx.output(Artifact::LabeledOutcomes), &labeled).at(ctx.stage)?;
    let positives: usize = labeled.iter().map(|r| r.outcome.label as usize).sum();
    Ok(json!({
        "corpus": out.len(),
        "c_full": c_full,
        "labeled_pool": labeled.len(),
        "labeled_positives": positives,
    }))
}

fn pretrain(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let data_path = match &ctx.cfg.train.dataset {
        Some(p) => {
            if !p.is_file() {
                return Err(ctx.fail(format!("train.dataset {} does not exist", p.display())));
            }
            ctx.inputs.insert(p.display().to_string(), p.clone());
            p.clone()
        }
        None => ctx.input(Artifact::PretrainScenarios)?,
    };
    let data = read_scenarios(&data_path).at(ctx.stage)?;
    let mae = Mae::new(ctx.cfg.encoder()).at(ctx.stage)?;
    let dir = ctx.layout.dir.clone();
    let mut checkpoints = Vec::new();
    let out = pretrain_from(&mae, &ctx.cfg.train.train_config(), &data, None, |step, params| {
        let name = format!("backbone_step{step}.ckpt");
        save_backbone(dir.join(&name), &mae, params)?;
        checkpoints.push(name);
        Ok(())
    })
    .at(ctx.stage)?;
    for name in &checkpoints {
        ctx.output_named(name);
    }
    save_backbone(ctx.output(Artifact::Backbone), &mae, &out.params).at(ctx.stage)?;
    let trace_path = ctx.output(Artifact::PretrainTrace);
    write_trace_csv(ctx.create(&trace_path)?, &out.trace).at(ctx.stage)?;
    let tail = &out.trace[out.trace.len().saturating_sub(20)..];
    Ok(json!({
        "steps": out.trace.len(),
        "scenarios": data.len(),
        "initial_loss": out.trace[0].total,
        "final_loss": tail.iter().map(|r| r.total).sum::<f64>() / tail.len() as f64,
        "backbone_sha256": out.params.hash(),
        "checkpoints": checkpoints,
    }))
}

fn load_model(ctx: &mut Ctx) -> Result<(Mae, crate::numeric::ParamStore<f32>), PipelineError> {
    let (mae, params) = load_backbone(ctx.input(Artifact::Backbone)?).at(ctx.stage)?;
    if *mae.config() != ctx.cfg.encoder() {
        return Err(ctx.fail("backbone was trained with a different world.dims or model section; rerun `dice pretrain`"));
    }
    Ok((mae, params))
}

#[derive(Serialize)]
struct HeldOutRow<'a> {
    id: &'a str,
    label: u8,
    d: f64,
}

fn finetune_head(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let d = &ctx.cfg.difficulty;
    let (mae, backbone) = load_model(ctx)?;
    let pool = read_scenarios(ctx.input(Artifact::LabeledScenarios)?).at(ctx.stage)?;
    let outcomes = read_outcomes(ctx.input(Artifact::LabeledOutcomes)?).at(ctx.stage)?;
    if outcomes.len() != pool.len() || pool.iter().zip(&outcomes).any(|(s, o)| s.id != o.id) {
        return Err(ctx.fail("labeled.out does not match labeled.scn; rerun `dice simulate`"));
    }

    // First train_per_class of each class train, the next held_out_per_class are held out.
    let (mut train, mut held) = (Vec::new(), Vec::new());
    let mut seen = [0usize; 2];
    for (i, o) in outcomes.iter().enumerate() {
        let c = o.outcome.label as usize;
        if seen[c] < d.train_per_class {
            train.push(i);
        } else if seen[c] < d.train_per_class + d.held_out_per_class {
            held.push(i);
        }
        seen[c] += 1;
    }
    let need = d.train_per_class + d.held_out_per_class;
    if seen[0] < need || seen[1] < need {
        return Err(ctx.fail(format!(
            "labeled pool has {} collisions and {} non-collisions, need {need} of each; raise difficulty.pool or difficulty.hazard",
            seen[1], seen[0]
        )));
    }

    let hash_before = backbone.hash();
    let feats = |idx: &[usize]| -> Result<Vec<Vec<f32>>, PipelineError> {
        parallel_map(idx.len(), ctx.jobs, |k| crate::difficulty::features(&mae, &backbone, &pool[idx[k]]))
            .into_iter()
            .collect::<Result<_, _>>()
            .at(ctx.stage)
    };
    let labels = |idx: &[usize]| -> Vec<u8> { idx.iter().map(|&i| outcomes[i].outcome.label).collect() };
    let (f_train, y_train) = (feats(&train)?, labels(&train));
    let (f_held, y_held) = (feats(&held)?, labels(&held));
    let (head, trace) = finetune(&f_train, &y_train, &d.finetune_config()).at(ctx.stage)?;
    let score = |f: &[Vec<f32>]| -> Result<Vec<f64>, PipelineError> {
        f.iter().map(|x| head.score_feature(x)).collect::<Result<_, _>>().at(ctx.stage)
    };
    let (s_train, s_held) = (score(&f_train)?, score(&f_held)?);
    let hash_after = backbone.hash();
    if hash_after != hash_before {
        return Err(ctx.fail("backbone parameters changed during fine-tuning"));
    }

    head.save(ctx.output(Artifact::Head)).at(ctx.stage)?;
    let trace_path = ctx.output(Artifact::FinetuneTrace);
    let mut w = csv::Writer::from_writer(ctx.create(&trace_path)?);
    w.write_record(["step", "loss"]).at(ctx.stage)?;
    for (step, l) in trace.iter().enumerate() {
        w.write_record([step.to_string(), l.to_string()]).at(ctx.stage)?;
    }
    w.flush().at(ctx.stage)?;
    let held_path = ctx.output(Artifact::HeldOutScores);
    let mut w = csv::Writer::from_writer(ctx.create(&held_path)?);
    for (k, &i) in held.iter().enumerate() {
        w.serialize(HeldOutRow {
            id: &pool[i].id,
            label: y_held[k],
            d: s_held[k],
        })
        .at(ctx.stage)?;
    }
    w.flush().at(ctx.stage)?;
    Ok(json!({
        "train_examples": train.len(),
        "held_out_examples": held.len(),
        "auc_train": roc_auc(&s_train, &y_train),
        "auc_held_out": roc_auc(&s_held, &y_held),
        "initial_loss": trace.first(),
        "final_loss": trace.last(),
        "backbone_sha256": hash_after,
    }))
}

fn embed(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let (mae, backbone) = load_model(ctx)?;
    let head = DifficultyHead::load(ctx.input(Artifact::Head)?).at(ctx.stage)?;
    let width = mae.config().hidden();
    if head.config.input != 4 * width {
        return Err(ctx.fail("difficulty head does not match the backbone width; rerun `dice finetune`"));
    }
    let corpus: Vec<Scenario> = read_scenarios(ctx.input(Artifact::CorpusScenarios)?).at(ctx.stage)?;
    let rows = parallel_map(corpus.len(), ctx.jobs, |i| -> Result<(Vec<f32>, f64), String> {
        let s = &corpus[i];
        let e = mae.embed(&backbone, s).map_err(|e| format!("{}: {e}", s.id))?;
        let d = head
            .score_feature(&pool_concat(&e, &s.dims, &track_existence(s)))
            .map_err(|e| format!("{}: {e}", s.id))?;
        Ok((ego_from_embeddings(&e, &s.dims), d))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .at(ctx.stage)?;
    let ids: Vec<String> = corpus.iter().map(|s| s.id.clone()).collect();
    let (z, d): (Vec<Vec<f32>>, Vec<f64>) = rows.into_iter().unzip();
    let table = EmbeddingTable { ids, width, rows: z };
    write_embeddings(ctx.output(Artifact::Embeddings), &table).at(ctx.stage)?;
    let scores_path = ctx.output(Artifact::Scores);
    write_scores_csv(ctx.create(&scores_path)?, &table.ids, &d).at(ctx.stage)?;
    Ok(json!({
        "scenarios": table.ids.len(),
        "width": width,
        "d_mean": d.iter().sum::<f64>() / d.len().max(1) as f64,
        "d_max": d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }))
}

#[derive(Deserialize)]
struct ScoreRow {
    id: String,
    d: f64,
}

fn read_scores(ctx: &mut Ctx) -> Result<(Vec<String>, Vec<f64>), PipelineError> {
    let path = ctx.input(Artifact::Scores)?;
    let mut r = csv::Reader::from_path(&path).at(ctx.stage)?;
    let mut ids = Vec::new();
    let mut d = Vec::new();
    for row in r.deserialize::<ScoreRow>() {
        let row = row.at(ctx.stage)?;
        ids.push(row.id);
        d.push(row.d);
    }
    Ok((ids, d))
}

fn load_clustering(
    ctx: &mut Ctx,
    assignments: Artifact,
    centroids: Artifact,
    ids: &[String],
) -> Result<Clustering, PipelineError> {
    let rows = read_assignments_csv(ctx.input(assignments)?).at(ctx.stage)?;
    let centroids = read_centroids(ctx.input(centroids)?).at(ctx.stage)?;
    if rows.len() != ids.len() || rows.iter().zip(ids).any(|((a, _), b)| a != b) {
        return Err(ctx.fail(format!("{} does not match scores.csv; rerun `dice cluster`", assignments.file_name())));
    }
    if let Some((id, c)) = rows.iter().find(|(_, c)| *c >= centroids.len()) {
        return Err(ctx.fail(format!("{id} assigned to cluster {c} of {}", centroids.len())));
    }
    Ok(Clustering::from_assignments(rows.into_iter().map(|(_, c)| c).collect(), centroids))
}

fn cluster(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let table = read_embeddings(ctx.input(Artifact::Embeddings)?).at(ctx.stage)?;
    let (ids, d) = read_scores(ctx)?;
    if ids != table.ids {
        return Err(ctx.fail("scores.csv and embeddings.demb list different scenarios; rerun `dice embed`"));
    }
    let c = &ctx.cfg.clustering;
    let stats = FeatureStats::fit(&table.rows);
    let points = |w_d: f64| -> Vec<Vec<f64>> {
        table.rows.iter().zip(&d).map(|(z, &d)| dice_feature(z, d, w_d, &stats)).collect()
    };
    let dice = kmeans(&points(ctx.cfg.embedding.w_d), c.clusters, c.seed).at(ctx.stage)?;
    let reference = kmeans(&points(0.0), c.clusters, c.seed).at(ctx.stage)?;
    let mut summary = serde_json::Map::new();
    for (name, cl, a, ce) in [
        ("dice", &dice, Artifact::DiceAssignments, Artifact::DiceCentroids),
        ("reference", &reference, Artifact::ReferenceAssignments, Artifact::ReferenceCentroids),
    ] {
        let path = ctx.output(a);
        write_assignments_csv(ctx.create(&path)?, &ids, cl).at(ctx.stage)?;
        write_centroids(ctx.output(ce), &cl.centroids).at(ctx.stage)?;
        let sizes: Vec<usize> = cl.members.iter().map(Vec::len).collect();
        summary.insert(
            name.into(),
            json!({
                "clusters": cl.m(),
                "iterations": cl.iterations,
                "smallest": sizes.iter().min(),
                "largest": sizes.iter().max(),
            }),
        );
    }
    summary.insert("degenerate_dims".into(), json!(stats.degenerate));
    Ok(Value::Object(summary))
}

/// Scores with the DICE and reference clusterings.
struct Strata {
    ids: Vec<String>,
    d: Vec<f64>,
    dice: Clustering,
    reference: Clustering,
}

fn load_strata(ctx: &mut Ctx) -> Result<Strata, PipelineError> {
    let (ids, d) = read_scores(ctx)?;
    let dice = load_clustering(ctx, Artifact::DiceAssignments, Artifact::DiceCentroids, &ids)?;
    let reference = load_clustering(ctx, Artifact::ReferenceAssignments, Artifact::ReferenceCentroids, &ids)?;
    Ok(Strata {
        ids,
        d,
        dice,
        reference,
    })
}

fn sample(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let st = load_strata(ctx)?;
    let s = &ctx.cfg.sampling;
    let weights = score_importance(&st.dice, &st.d, s.k0, ClusterStat::Mean).at(ctx.stage)?;
    // Sampling never reads labels; EvalCorpus is used so draws match `evaluate`.
    let no_labels = vec![0u8; st.ids.len()];
    let corpus = EvalCorpus {
        ids: &st.ids,
        labels: &no_labels,
        difficulties: &st.d,
        reference: &st.reference,
        dice: &st.dice,
        weights: &weights,
    };
    corpus.check().at(ctx.stage)?;
    let budget = s.size.budget(st.ids.len());
    let picked = corpus.sample(s.scheme, budget, s.seed);
    let strata = corpus.strata(s.scheme).map(|c| c.assignments.as_slice());
    let path = ctx.output(Artifact::Sample);
    write_sample_csv(ctx.create(&path)?, &picked, &st.ids, strata, Some(&st.d)).at(ctx.stage)?;
    Ok(json!({
        "scheme": s.scheme,
        "budget": budget,
        "corpus": st.ids.len(),
        "seed": s.seed,
        "k0": s.k0,
        "clusters_hit": crate::metrics::cluster_coverage(&picked, &st.reference),
    }))
}

fn evaluate_all(ctx: &mut Ctx) -> Result<Value, PipelineError> {
    let st = load_strata(ctx)?;
    let outcomes = read_outcomes(ctx.input(Artifact::CorpusOutcomes)?).at(ctx.stage)?;
    if outcomes.len() != st.ids.len() || outcomes.iter().zip(&st.ids).any(|(o, id)| &o.id != id) {
        return Err(ctx.fail("corpus.out does not match scores.csv; rerun `dice simulate` and `dice embed`"));
    }
    let labels: Vec<u8> = outcomes.iter().map(|r| r.outcome.label).collect();
    let weights = score_importance(&st.dice, &st.d, ctx.cfg.sampling.k0, ClusterStat::Mean).at(ctx.stage)?;
    let corpus = EvalCorpus {
        ids: &st.ids,
        labels: &labels,
        difficulties: &st.d,
        reference: &st.reference,
        dice: &st.dice,
        weights: &weights,
    };
    let e = &ctx.cfg.evaluation;
    let report = evaluate(&corpus, &e.fractions, &e.seeds).at(ctx.stage)?;

    let path = ctx.output(Artifact::Report);
    let mut w = ctx.create(&path)?;
    serde_json::to_writer_pretty(&mut w, &report).at(ctx.stage)?;
    writeln!(w).and_then(|_| w.flush()).at(ctx.stage)?;
    let path = ctx.output(Artifact::Curves);
    write_curves_csv(ctx.create(&path)?, &report).at(ctx.stage)?;
    for c in &report.curves {
        let one = EvaluationReport {
            curves: vec![c.clone()],
            ..report.clone()
        };
        let path = ctx.output_named(&format!("curve_{}.csv", c.scheme.name()));
        write_curves_csv(ctx.create(&path)?, &one).at(ctx.stage)?;
    }
    let path = ctx.output(Artifact::Gnuplot);
    let mut w = ctx.create(&path)?;
    write_gnuplot_table(&mut w, &report).and_then(|_| w.flush()).at(ctx.stage)?;

    let curves: serde_json::Map<String, Value> = report
        .curves
        .iter()
        .map(|c| (c.scheme.name().to_string(), json!({"mean": c.mean, "coverage_min": c.coverage_min})))
        .collect();
    Ok(json!({
        "n_full": report.n_full,
        "c_full": report.c_full,
        "fractions": report.fractions,
        "seeds": report.seeds.len(),
        "sensitivity": curves,
    }))
}
