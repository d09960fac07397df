//! Acceptance suite: one PASS/FAIL line per criterion. Runs the full desk
//! pipeline, so expect several minutes on one core.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use dice::difficulty::roc_auc;
use dice::embedding::read_embeddings;
use dice::mae::{apply_masks, sample_masks, EncoderConfig, Mae, MaskSet, ModelInputs};
use dice::metrics::{budget_for, cost_model, estimate_total_collisions, expected_random_collisions, total_variation, EvaluationReport};
use dice::numeric::grad_check;
use dice::pipeline::{sha256_file, Artifact, Stage};
use dice::pretrain::{load_backbone, pretrain, read_trace_csv, TraceRow, TrainConfig};
use dice::sampler::{
    read_assignments_csv, read_centroids, sample_dice, sample_uniform_clusters, score_importance, ClusterStat,
    Clustering, ImportanceWeights, Scheme,
};
use dice::scene::{read_scenarios, validate, ScenarioDims};
use dice::synth::{generate_range, generate_scenario, read_outcomes, WorldConfig};

const GRAD_TOL: f64 = 1e-4;
const GRAD_DELTA: f64 = 1e-3;
const GRAD_SECONDS: f64 = 60.0;
const MASK_DRAWS: usize = 100_000;
const SIGMAS: f64 = 3.0;
const LOSS_RATIO: f64 = 0.5;
/// Trailing steps averaged for the final loss (batch means are noisy).
const LOSS_TAIL: usize = 20;
const AUC_MIN: f64 = 0.75;
const BALANCED_SET: usize = 4000;
const COST_TARGET: f64 = 23_200.0;
const COST_TOL: f64 = 50.0;
const TV_TOL: f64 = 1e-5;
const CHI_TRIALS: u64 = 10_000;
/// Chi-square critical value, 49 degrees of freedom, p = 0.001.
const CHI2_CRIT_DF49: f64 = 85.35;
const ORDER_FRACTIONS: [f64; 3] = [0.05, 0.1, 0.2];
const MIN_SEEDS: usize = 30;
const DICE_OVER_RANDOM: f64 = 1.5;
const COVERAGE_FRACTION: f64 = 0.05;
const CLUSTERS: usize = 50;
const ESTIMATOR_RUNS: u64 = 200;
const ESTIMATOR_FRACTION: f64 = 0.1;
const ESTIMATOR_REL: f64 = 0.10;
const SMOKE_SCENARIOS: usize = 2000;
const SMOKE_LIMIT: Duration = Duration::from_secs(15 * 60);

const BIN: &str = env!("CARGO_BIN_EXE_dice");

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn guard<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn criterion_1() -> Outcome {
    let mae = Mae::new(EncoderConfig::for_dims(ScenarioDims::tiny())).map_err(|e| e.to_string())?;
    let dims = mae.config().dims;
    ensure!(dims.hidden == 8, "model width {} != 8", dims.hidden);
    let params = mae.init_params(3).cast::<f64>();
    let target = ModelInputs::from_scenario(&common::random_scenario(dims, 5));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let masks = sample_masks(&dims, 0.5, &mut rng);
    let loss_mask = sample_masks(&dims, 1.0, &mut rng);
    let start = Instant::now();
    let r = grad_check(|p, g| Ok(mae.loss(g, p, &target, &masks, &loss_mask)?.total), &params, GRAD_DELTA)
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(r.max_rel_error < GRAD_TOL, "max relative error {:.3e} (worst {:?})", r.max_rel_error, r.worst);
    ensure!(secs < GRAD_SECONDS, "took {secs:.1} s");
    Ok(format!(
        "max relative error {:.2e} over {} coordinates ({} at kinks excluded), {secs:.1} s",
        r.max_rel_error, r.checked, r.excluded
    ))
}

fn criterion_2() -> Outcome {
    let dims = ScenarioDims::default();
    let mut parts = Vec::new();
    for r in [0.25, 0.5, 0.75] {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + (r * 100.0) as u64);
        let (mut n, mut hits) = (0usize, 0usize);
        while n < MASK_DRAWS {
            let m = sample_masks(&dims, r, &mut rng);
            n += m.total();
            hits += m.masked_count();
        }
        let z = (hits as f64 - n as f64 * r) / (n as f64 * r * (1.0 - r)).sqrt();
        ensure!(z.abs() < SIGMAS, "r = {r}: {hits}/{n} masked, z = {z:.2}");
        parts.push(format!("r={r}: z={z:+.2}"));
    }

    let compact = ScenarioDims::compact();
    let s = generate_scenario(&WorldConfig::default(), 11);
    let inputs = ModelInputs::from_scenario(&s);
    let mut m = MaskSet::none(&compact);
    for z in (0..compact.polylines).step_by(2) {
        m.polylines[z] = true;
    }
    let out = apply_masks(&inputs, &m);
    ensure!(out.frames == inputs.frames, "frames changed");
    let (lw, pw) = (compact.label_classes, compact.points_per_polyline * compact.point_width);
    for z in 0..compact.polylines {
        let (l, p) = (&out.labels[z * lw..(z + 1) * lw], &out.points[z * pw..(z + 1) * pw]);
        if m.polylines[z] {
            ensure!(l.iter().chain(p).all(|&v| v == 0.0), "masked polyline {z} not zeroed");
        } else {
            ensure!(
                l == &inputs.labels[z * lw..(z + 1) * lw] && p == &inputs.points[z * pw..(z + 1) * pw],
                "unmasked polyline {z} changed"
            );
        }
    }
    parts.push(format!("{} masked polylines zeroed, frames intact", compact.polylines / 2));
    Ok(parts.join("; "))
}

fn criterion_5() -> Outcome {
    let e = expected_random_collisions(1300, 80_000, 800_000).map_err(|e| e.to_string())?;
    ensure!(e == 130.0, "expected random collisions {e}");
    let c = cost_model(50_000.0, 35.0, 1.624, 10.0).map_err(|e| e.to_string())?;
    ensure!((c.dollars - COST_TARGET).abs() <= COST_TOL, "cost ${:.2}", c.dollars);

    let mut members = Vec::new();
    let mut d = Vec::new();
    for (j, &dj) in [0.0, 0.5, 1.0].iter().enumerate() {
        for _ in 0..10 {
            members.push(j);
            d.push(dj);
        }
    }
    let c3 = Clustering::from_assignments(members, vec![vec![0.0]; 3]);
    let w = score_importance(&c3, &d, 1.0, ClusterStat::Mean).map_err(|e| e.to_string())?;
    let (lo, hi) = w.w.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    ensure!(hi / lo == 2.0, "weight ratio {} at K0 = 1", hi / lo);
    let w = score_importance(&c3, &d, 1e6, ClusterStat::Mean).map_err(|e| e.to_string())?;
    let tv = total_variation(&w.probabilities(), &[1.0 / 3.0; 3]);
    ensure!(tv < TV_TOL, "TV {tv:.3e} at K0 = 1e6");
    Ok(format!("130 exactly; ${:.2}; ratio 2; TV {tv:.1e}", c.dollars))
}

struct LibPretrain {
    trace: Vec<TraceRow>,
    hash: String,
    seconds: f64,
}

fn pretrain_fixture() -> Result<LibPretrain, String> {
    let data = generate_range(
        &WorldConfig {
            seed: 512,
            ..WorldConfig::default()
        },
        0,
        512,
        1,
    );
    let mae = Mae::new(EncoderConfig::for_dims(ScenarioDims::compact())).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = pretrain(&mae, &TrainConfig::default(), &data).map_err(|e| e.to_string())?;
    Ok(LibPretrain {
        trace: out.trace,
        hash: out.params.hash(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn cli(stage: &str, config: &Path, out: &Path) -> Result<(Value, Duration), String> {
    let start = Instant::now();
    let o = Command::new(BIN)
        .args([stage, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(o.status.success(), "dice {stage} failed: {}", String::from_utf8_lossy(&o.stderr));
    let v = serde_json::from_slice(&o.stdout).map_err(|e| format!("dice {stage} stdout: {e}"))?;
    Ok((v, took))
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

struct SmokeRun {
    dir: PathBuf,
    elapsed: Duration,
    summaries: BTreeMap<&'static str, Value>,
}

/// Runs every stage on the 2,000-scenario config and checks each stage's invariants.
fn smoke(root: &Path) -> Result<SmokeRun, String> {
    let cfg = configs().join("smoke.json");
    let dir = root.join("smoke");
    let mut elapsed = Duration::ZERO;
    let mut summaries = BTreeMap::new();
    for stage in Stage::ALL {
        eprintln!("  smoke: dice {}", stage.name());
        let (v, took) = cli(stage.name(), &cfg, &dir)?;
        elapsed += took;
        check_stage(stage, &v, &dir).map_err(|e| format!("{} invariant: {e}", stage.name()))?;
        summaries.insert(stage.name(), v);
    }
    Ok(SmokeRun {
        dir,
        elapsed,
        summaries,
    })
}

fn check_stage(stage: Stage, v: &Value, dir: &Path) -> Result<(), String> {
    let n = SMOKE_SCENARIOS;
    let path = |a: Artifact| dir.join(a.file_name());
    match stage {
        Stage::GenData => {
            ensure!(v["corpus"] == n && v["pretrain"] == 512, "counts {v}");
            let scs = read_scenarios(path(Artifact::CorpusScenarios)).map_err(|e| e.to_string())?;
            ensure!(scs.len() == n, "{} scenarios", scs.len());
            let bad = scs.iter().filter(|s| !validate(s).is_empty()).count();
            ensure!(bad == 0, "{bad} scenarios fail validation");
        }
        Stage::Simulate => {
            let scs = read_scenarios(path(Artifact::CorpusScenarios)).map_err(|e| e.to_string())?;
            let out = read_outcomes(path(Artifact::CorpusOutcomes)).map_err(|e| e.to_string())?;
            ensure!(
                out.len() == n && out.iter().zip(&scs).all(|(o, s)| o.id == s.id),
                "outcomes do not line up with scenarios"
            );
            ensure!(num(&v["labeled_positives"]) >= 2500.0, "labeled pool positives {}", v["labeled_positives"]);
        }
        Stage::Pretrain => {
            let t = read_trace_csv(path(Artifact::PretrainTrace)).map_err(|e| e.to_string())?;
            ensure!(t.len() == 2000, "{} trace rows", t.len());
            ensure!(t.iter().all(|r| r.total.is_finite()), "non-finite trace");
        }
        Stage::Finetune => {
            let (_, params) = load_backbone(path(Artifact::Backbone)).map_err(|e| e.to_string())?;
            ensure!(v["backbone_sha256"] == params.hash().as_str(), "backbone hash moved");
            ensure!(num(&v["auc_held_out"]) > 0.5, "held-out AUC {}", v["auc_held_out"]);
        }
        Stage::Embed => {
            let t = read_embeddings(path(Artifact::Embeddings)).map_err(|e| e.to_string())?;
            ensure!(t.rows.len() == n && t.width == 16, "{} x {}", t.rows.len(), t.width);
            ensure!(t.rows.iter().flatten().all(|x| x.is_finite()), "non-finite embedding");
            let scores = std::fs::read(path(Artifact::Scores)).map_err(|e| e.to_string())?;
            let emb = std::fs::read(path(Artifact::Embeddings)).map_err(|e| e.to_string())?;
            let cfg = configs().join("smoke.json");
            cli("embed", &cfg, dir)?;
            ensure!(
                std::fs::read(path(Artifact::Embeddings)).ok() == Some(emb)
                    && std::fs::read(path(Artifact::Scores)).ok() == Some(scores),
                "second embed differs"
            );
            ensure!(num(&v["d_max"]) < 1.0 && num(&v["d_mean"]) > 0.0, "scores outside (0, 1)");
        }
        Stage::Cluster => {
            for k in ["dice", "reference"] {
                ensure!(v[k]["clusters"] == CLUSTERS, "{k} clusters {}", v[k]["clusters"]);
                ensure!(num(&v[k]["smallest"]) >= 1.0, "{k} has an empty cluster");
            }
        }
        Stage::Sample => {
            let text = std::fs::read_to_string(path(Artifact::Sample)).map_err(|e| e.to_string())?;
            let ids: std::collections::HashSet<_> = text.lines().skip(1).map(|l| l.split(',').nth(1)).collect();
            let b = budget_for(0.05, n);
            ensure!(text.lines().count() == b + 1 && ids.len() == b, "sample of {} distinct", ids.len());
        }
        Stage::Evaluate => {
            let r = load_report(dir)?;
            for c in &r.curves {
                let k = r.fractions.iter().position(|&f| f == 1.0).ok_or("no f = 1")?;
                ensure!(c.mean[k] == 1.0, "{} sensitivity {} at f = 1", c.scheme.name(), c.mean[k]);
            }
        }
    }
    Ok(())
}

fn load_report(dir: &Path) -> Result<EvaluationReport, String> {
    let text = std::fs::read_to_string(dir.join(Artifact::Report.file_name())).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn criterion_3(lib: &Result<LibPretrain, String>, smoke: &Result<SmokeRun, String>) -> Outcome {
    let lib = lib.as_ref().map_err(|e| format!("library pretraining: {e}"))?;
    let initial = lib.trace[0].total;
    let tail = &lib.trace[lib.trace.len() - LOSS_TAIL..];
    let last = tail.iter().map(|r| r.total).sum::<f64>() / tail.len() as f64;
    ensure!(last < LOSS_RATIO * initial, "loss {initial:.3} -> {last:.3}");
    let smoke = smoke.as_ref().map_err(|e| format!("repeat run (CLI pretrain): {e}"))?;
    let again = read_trace_csv(smoke.dir.join(Artifact::PretrainTrace.file_name())).map_err(|e| e.to_string())?;
    ensure!(again == lib.trace, "traces of the two runs differ");
    ensure!(
        smoke.summaries["pretrain"]["backbone_sha256"] == lib.hash.as_str(),
        "backbone hashes of the two runs differ"
    );
    Ok(format!(
        "loss {initial:.2} -> {last:.3} (mean of last {LOSS_TAIL}), ratio {:.3}; second run bit-identical over {} steps; {:.0} s",
        last / initial,
        lib.trace.len(),
        lib.seconds
    ))
}

fn criterion_4(smoke: &Result<SmokeRun, String>) -> Outcome {
    let smoke = smoke.as_ref().map_err(|e| format!("smoke run: {e}"))?;
    let (pre, fin) = (&smoke.summaries["pretrain"], &smoke.summaries["finetune"]);
    let backbone = smoke.dir.join(Artifact::Backbone.file_name());
    let (_, params) = load_backbone(&backbone).map_err(|e| e.to_string())?;
    let hash = params.hash();
    ensure!(
        pre["backbone_sha256"] == hash.as_str() && fin["backbone_sha256"] == hash.as_str(),
        "parameter hash changed"
    );
    let m: Value = serde_json::from_str(&std::fs::read_to_string(smoke.dir.join("finetune.manifest.json")).unwrap())
        .map_err(|e| e.to_string())?;
    let file_hash = sha256_file(&backbone).map_err(|e| e.to_string())?;
    ensure!(m["inputs"]["backbone.ckpt"] == file_hash.as_str(), "checkpoint file changed");
    ensure!(fin["train_examples"] == BALANCED_SET, "{} training examples", fin["train_examples"]);

    let mut r = csv::Reader::from_path(smoke.dir.join(Artifact::HeldOutScores.file_name())).map_err(|e| e.to_string())?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for row in r.deserialize::<(String, u8, f64)>() {
        let (_, l, d) = row.map_err(|e| e.to_string())?;
        labels.push(l);
        scores.push(d);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    ensure!(pos * 2 == labels.len(), "held-out set not balanced: {pos}/{}", labels.len());
    let auc = roc_auc(&scores, &labels).ok_or("AUC undefined")?;
    ensure!(auc >= AUC_MIN, "held-out AUC {auc:.3}");
    Ok(format!(
        "backbone hash {} unchanged; held-out AUC {auc:.3} on {} ({pos}+{pos}); trained on {BALANCED_SET} balanced",
        &hash[..12],
        labels.len()
    ))
}

struct DeskRun {
    report: EvaluationReport,
    labels: Vec<u8>,
    reference: Clustering,
    dice: Clustering,
}

fn load_clustering(dir: &Path, a: Artifact, c: Artifact) -> Result<Clustering, String> {
    let rows = read_assignments_csv(dir.join(a.file_name())).map_err(|e| e.to_string())?;
    let cents = read_centroids(dir.join(c.file_name())).map_err(|e| e.to_string())?;
    Ok(Clustering::from_assignments(rows.into_iter().map(|(_, k)| k).collect(), cents))
}

/// The 20,000-scenario corpus through the CLI, reusing the smoke run's backbone and head.
fn desk(root: &Path, smoke: &Result<SmokeRun, String>) -> Result<DeskRun, String> {
    let smoke = smoke.as_ref().map_err(|e| format!("smoke run: {e}"))?;
    let cfg = configs().join("desk.json");
    let dir = root.join("desk");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    for a in [Artifact::Backbone, Artifact::Head] {
        std::fs::copy(smoke.dir.join(a.file_name()), dir.join(a.file_name())).map_err(|e| e.to_string())?;
    }
    for stage in [Stage::GenData, Stage::Simulate, Stage::Embed, Stage::Cluster, Stage::Evaluate] {
        eprintln!("  desk: dice {}", stage.name());
        cli(stage.name(), &cfg, &dir)?;
    }
    let outcomes = read_outcomes(dir.join(Artifact::CorpusOutcomes.file_name())).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        report: load_report(&dir)?,
        labels: outcomes.iter().map(|o| o.outcome.label).collect(),
        reference: load_clustering(&dir, Artifact::ReferenceAssignments, Artifact::ReferenceCentroids)?,
        dice: load_clustering(&dir, Artifact::DiceAssignments, Artifact::DiceCentroids)?,
    })
}

fn curve(r: &EvaluationReport, s: Scheme) -> &dice::metrics::SensitivityCurve {
    r.curves.iter().find(|c| c.scheme == s).expect("every scheme is evaluated")
}

fn at(r: &EvaluationReport, f: f64) -> Result<usize, String> {
    r.fractions
        .iter()
        .position(|&x| (x - f).abs() < 1e-12)
        .ok_or(format!("fraction {f} not evaluated"))
}

fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let (mut chi, mut bins) = (0.0, 0);
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        bins += 1;
        let (ea, eb) = (col * na / (na + nb), col * nb / (na + nb));
        chi += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    (chi, bins.max(1) - 1)
}

fn criterion_6(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk run: {e}"))?;
    let r = &desk.report;
    let random = curve(r, Scheme::Random);
    let (n, k, s) = (r.n_full as f64, r.c_full as f64, r.seeds.len() as f64);
    ensure!(k > 0.0, "corpus has no collisions");
    let mut worst: f64 = 0.0;
    for (i, &f) in r.fractions.iter().enumerate() {
        let b = budget_for(f, r.n_full) as f64;
        let var = b * k * (n - k) * (n - b) / (n * n * (n - 1.0));
        let sd_mean = var.sqrt() / k / s.sqrt();
        let gap = (random.mean[i] - r.random_diagonal[i]).abs();
        if sd_mean == 0.0 {
            ensure!(gap < 1e-12, "f = {f}: {} vs diagonal {}", random.mean[i], r.random_diagonal[i]);
        } else {
            ensure!(gap <= SIGMAS * sd_mean, "f = {f}: {:.4} vs {:.4} ({:.1} sigma)", random.mean[i], r.random_diagonal[i], gap / sd_mean);
            worst = worst.max(gap / sd_mean);
        }
    }

    let m = desk.reference.m();
    let uniform = ImportanceWeights {
        w: vec![1.0; m],
        k0: 1.0,
    };
    let b = budget_for(COVERAGE_FRACTION, r.n_full);
    let (mut x, mut y) = (vec![0u64; m], vec![0u64; m]);
    for seed in 0..CHI_TRIALS {
        let s1 = sample_uniform_clusters(&desk.reference, b, &mut ChaCha8Rng::seed_from_u64(seed));
        x[desk.reference.assignments[s1[b - 1]]] += 1;
        let s2 = sample_dice(&desk.reference, &uniform, b, &mut ChaCha8Rng::seed_from_u64(seed + 1_000_000));
        y[desk.reference.assignments[s2[b - 1]]] += 1;
    }
    let (chi, df) = chi_square_homogeneity(&x, &y);
    ensure!(df == 49, "{df} degrees of freedom; critical value is pinned for 49");
    ensure!(chi < CHI2_CRIT_DF49, "chi-square {chi:.1} >= {CHI2_CRIT_DF49} (df {df})");
    Ok(format!(
        "random within {worst:.2} sigma of the diagonal at {} fractions; uniform-weight DICE vs uniform-over-clusters chi-square {chi:.1} (df {df}, crit {CHI2_CRIT_DF49})",
        r.fractions.len()
    ))
}

fn criterion_7(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk run: {e}"))?;
    let r = &desk.report;
    ensure!(r.n_full == 20_000, "corpus of {}", r.n_full);
    ensure!(r.seeds.len() >= MIN_SEEDS, "{} seeds", r.seeds.len());
    let mut parts = Vec::new();
    for f in ORDER_FRACTIONS {
        let i = at(r, f)?;
        let m = |s| curve(r, s).mean[i];
        let (a3, dice, a1, rnd) = (m(Scheme::TopDifficulty), m(Scheme::Dice), m(Scheme::UniformClusters), m(Scheme::Random));
        ensure!(
            a3 >= dice && dice >= a1 && a1 >= rnd,
            "f = {f}: top {a3:.3}, dice {dice:.3}, uniform {a1:.3}, random {rnd:.3}"
        );
        if f == 0.05 {
            ensure!(dice >= DICE_OVER_RANDOM * rnd, "f = 0.05: dice {dice:.3} < 1.5 x random {rnd:.3}");
        }
        parts.push(format!("f={f}: {a3:.3} >= {dice:.3} >= {a1:.3} >= {rnd:.3}"));
    }
    Ok(format!(
        "C_full {} ({:.2} per mille), {} seeds; {}",
        r.c_full,
        1000.0 * r.c_full as f64 / r.n_full as f64,
        r.seeds.len(),
        parts.join("; ")
    ))
}

fn criterion_8(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk run: {e}"))?;
    let r = &desk.report;
    let i = at(r, COVERAGE_FRACTION)?;
    ensure!(desk.reference.m() == CLUSTERS, "M = {}", desk.reference.m());
    let b = budget_for(COVERAGE_FRACTION, r.n_full);
    ensure!(b >= CLUSTERS, "budget {b} < M");
    let top = curve(r, Scheme::TopDifficulty).coverage_mean[i];
    let missed = ((1.0 - top) * CLUSTERS as f64).round();
    ensure!(missed >= 1.0, "top-difficulty coverage {top}");
    for s in [Scheme::Dice, Scheme::UniformClusters] {
        let c = curve(r, s).coverage_min[i];
        ensure!(c == 1.0, "{} minimum coverage {c}", s.name());
    }
    Ok(format!(
        "B = {b}: top-difficulty coverage {top:.2} ({missed} of {CLUSTERS} clusters unsampled); DICE and uniform-over-clusters coverage 1.0 on every seed"
    ))
}

fn criterion_9(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(|e| format!("desk run: {e}"))?;
    let n = desk.labels.len();
    let c_full = desk.labels.iter().map(|&l| l as u64).sum::<u64>() as f64;
    let all: Vec<usize> = (0..n).collect();
    for (name, c) in [("reference", &desk.reference), ("dice", &desk.dice)] {
        let e = estimate_total_collisions(c, &all, &desk.labels).estimate;
        ensure!(e == c_full, "{name} full-sample estimate {e} != {c_full}");
    }
    let b = budget_for(ESTIMATOR_FRACTION, n);
    let mean = (0..ESTIMATOR_RUNS)
        .map(|seed| {
            let s = sample_uniform_clusters(&desk.reference, b, &mut ChaCha8Rng::seed_from_u64(seed));
            estimate_total_collisions(&desk.reference, &s, &desk.labels).estimate
        })
        .sum::<f64>()
        / ESTIMATOR_RUNS as f64;
    let rel = (mean - c_full).abs() / c_full;
    ensure!(rel <= ESTIMATOR_REL, "mean estimate {mean:.2} vs C_full {c_full} ({:.1}%)", 100.0 * rel);
    Ok(format!(
        "exact at full sampling; mean of {ESTIMATOR_RUNS} uniform-over-clusters runs at f = {ESTIMATOR_FRACTION}: {mean:.2} vs {c_full} ({:.1}%)",
        100.0 * rel
    ))
}

fn criterion_10(smoke: &Result<SmokeRun, String>) -> Outcome {
    let smoke = smoke.as_ref().map_err(|e| e.clone())?;
    ensure!(smoke.elapsed < SMOKE_LIMIT, "pipeline took {:.0} s", smoke.elapsed.as_secs_f64());
    Ok(format!(
        "{} stages on {SMOKE_SCENARIOS} scenarios in {:.0} s, every stage invariant holds; sensitivity 1.0 at f = 1 for all schemes",
        Stage::ALL.len(),
        smoke.elapsed.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results: BTreeMap<u32, Outcome> = BTreeMap::new();
    eprintln!("criterion 1");
    results.insert(1, guard(criterion_1));
    eprintln!("criterion 2");
    results.insert(2, guard(criterion_2));
    eprintln!("criterion 5");
    results.insert(5, guard(criterion_5));
    eprintln!("pretraining the 512-scenario fixture (2,000 steps)");
    let lib = guard(pretrain_fixture);
    eprintln!("smoke pipeline");
    let smoke_run = guard(|| smoke(root.path()));
    results.insert(3, guard(|| criterion_3(&lib, &smoke_run)));
    results.insert(4, guard(|| criterion_4(&smoke_run)));
    results.insert(10, guard(|| criterion_10(&smoke_run)));
    eprintln!("desk corpus");
    let desk_run = guard(|| desk(root.path(), &smoke_run));
    results.insert(6, guard(|| criterion_6(&desk_run)));
    results.insert(7, guard(|| criterion_7(&desk_run)));
    results.insert(8, guard(|| criterion_8(&desk_run)));
    results.insert(9, guard(|| criterion_9(&desk_run)));

    let mut failed = 0;
    for (k, r) in &results {
        match r {
            Ok(msg) => println!("criterion {k:>2}: PASS  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {k:>2}: FAIL  {msg}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
