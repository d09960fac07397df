//! Evaluation: expected random yield, sensitivity curves, cluster coverage,
//! the per-cluster inverse-fraction estimator and the driving cost model.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sampler::{
    sample_dice, sample_random, sample_top_difficulty, sample_uniform_clusters, Clustering, ImportanceWeights, Scheme,
};

pub const DEFAULT_FRACTIONS: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("corpus size N_full must be positive")]
    EmptyCorpus,
    #[error("N_random = {n_random} exceeds N_full = {n_full}")]
    SampleTooLarge { n_random: u64, n_full: u64 },
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("{what} has {found} entries, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// `C_full · N_random / N_full`.
pub fn expected_random_collisions(c_full: u64, n_random: u64, n_full: u64) -> Result<f64, MetricsError> {
    if n_full == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    if n_random > n_full {
        return Err(MetricsError::SampleTooLarge { n_random, n_full });
    }
    Ok(c_full as f64 * n_random as f64 / n_full as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub hours: f64,
    pub dollars: f64,
}

/// Driving hours `factor · miles / speed` and their cost.
pub fn cost_model(miles: f64, speed_mph: f64, cost_per_hour: f64, factor: f64) -> Result<CostEstimate, MetricsError> {
    if !(speed_mph > 0.0 && speed_mph.is_finite()) {
        return Err(MetricsError::NonPositive("speed"));
    }
    for (name, v) in [("miles", miles), ("cost per hour", cost_per_hour), ("confidence factor", factor)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(MetricsError::NonPositive(name));
        }
    }
    let hours = factor * miles / speed_mph;
    Ok(CostEstimate {
        hours,
        dollars: hours * cost_per_hour,
    })
}

/// Half the L1 distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Everything a sampling scheme may read. Labels are only used for scoring.
#[derive(Clone, Copy, Debug)]
pub struct EvalCorpus<'a> {
    pub ids: &'a [String],
    pub labels: &'a [u8],
    pub difficulties: &'a [f64],
    /// Similarity-only clustering (w_d = 0), used by uniform-over-clusters sampling and for coverage.
    pub reference: &'a Clustering,
    /// Clustering of the DICE features.
    pub dice: &'a Clustering,
    pub weights: &'a ImportanceWeights,
}

impl EvalCorpus<'_> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn c_full(&self) -> u64 {
        self.labels.iter().map(|&l| l as u64).sum()
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        let n = self.ids.len();
        let lens = [
            ("labels", self.labels.len()),
            ("difficulties", self.difficulties.len()),
            ("reference clustering", self.reference.assignments.len()),
            ("dice clustering", self.dice.assignments.len()),
        ];
        for (what, found) in lens {
            if found != n {
                return Err(MetricsError::Length {
                    what,
                    expected: n,
                    found,
                });
            }
        }
        if self.weights.w.len() != self.dice.m() {
            return Err(MetricsError::Length {
                what: "importance weights",
                expected: self.dice.m(),
                found: self.weights.w.len(),
            });
        }
        Ok(())
    }

    /// Runs `scheme` with its own RNG stream derived from `seed`.
    pub fn sample(&self, scheme: Scheme, budget: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match scheme {
            Scheme::Random => sample_random(self.len(), budget, &mut rng),
            Scheme::UniformClusters => sample_uniform_clusters(self.reference, budget, &mut rng),
            Scheme::Dice => sample_dice(self.dice, self.weights, budget, &mut rng),
            Scheme::TopDifficulty => sample_top_difficulty(self.ids, self.difficulties, budget),
        }
    }

    /// Clustering a scheme stratifies by, if any.
    pub fn strata(&self, scheme: Scheme) -> Option<&Clustering> {
        match scheme {
            Scheme::UniformClusters => Some(self.reference),
            Scheme::Dice => Some(self.dice),
            _ => None,
        }
    }
}

pub fn budget_for(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Share of corpus collisions present in `sample`; 1 when the corpus has none.
pub fn sensitivity(sample: &[usize], labels: &[u8]) -> f64 {
    let c_full: u64 = labels.iter().map(|&l| l as u64).sum();
    if c_full == 0 {
        return 1.0;
    }
    sample.iter().map(|&i| labels[i] as u64).sum::<u64>() as f64 / c_full as f64
}

/// Fraction of reference clusters with at least one sampled member.
pub fn cluster_coverage(sample: &[usize], reference: &Clustering) -> f64 {
    if sample.is_empty() || reference.m() == 0 {
        return 0.0;
    }
    let mut hit = vec![false; reference.m()];
    for &i in sample {
        hit[reference.assignments[i]] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / reference.m() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub estimate: f64,
    pub observed: u64,
    pub contributions: Vec<f64>,
    /// Clusters with no sampled member; imputed at the global sampled rate.
    pub unsampled_clusters: usize,
}

/// Per-cluster inverse-fraction scaling of observed collisions.
pub fn estimate_total_collisions(clustering: &Clustering, sample: &[usize], labels: &[u8]) -> RateEstimate {
    let m = clustering.m();
    let mut n = vec![0usize; m];
    let mut c = vec![0u64; m];
    for &i in sample {
        let j = clustering.assignments[i];
        n[j] += 1;
        c[j] += labels[i] as u64;
    }
    let observed: u64 = c.iter().sum();
    let global = if sample.is_empty() {
        0.0
    } else {
        observed as f64 / sample.len() as f64
    };
    let mut unsampled_clusters = 0;
    let contributions: Vec<f64> = (0..m)
        .map(|j| {
            let size = clustering.members[j].len() as f64;
            if n[j] > 0 {
                c[j] as f64 * size / n[j] as f64
            } else {
                if size > 0.0 {
                    unsampled_clusters += 1;
                }
                size * global
            }
        })
        .collect();
    RateEstimate {
        estimate: contributions.iter().sum(),
        observed,
        contributions,
        unsampled_clusters,
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub scheme: Scheme,
    pub fractions: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `per_seed[k][s]`: fraction `k`, seed `s`.
    pub per_seed: Vec<Vec<f64>>,
    pub coverage_mean: Vec<f64>,
    pub coverage_min: Vec<f64>,
    /// Mean inverse-fraction estimate of C_full for stratified schemes.
    pub estimate_mean: Option<Vec<f64>>,
}

pub fn sensitivity_curve(
    corpus: &EvalCorpus,
    scheme: Scheme,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<SensitivityCurve, MetricsError> {
    corpus.check()?;
    if let Some(&f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(MetricsError::Fraction(f));
    }
    let mut curve = SensitivityCurve {
        scheme,
        fractions: fractions.to_vec(),
        mean: vec![],
        std: vec![],
        per_seed: vec![],
        coverage_mean: vec![],
        coverage_min: vec![],
        estimate_mean: corpus.strata(scheme).map(|_| vec![]),
    };
    for &f in fractions {
        let b = budget_for(f, corpus.len());
        let mut sens = Vec::with_capacity(seeds.len());
        let mut cov = Vec::with_capacity(seeds.len());
        let mut est = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let s = corpus.sample(scheme, b, seed);
            sens.push(sensitivity(&s, corpus.labels));
            cov.push(cluster_coverage(&s, corpus.reference));
            if let Some(c) = corpus.strata(scheme) {
                est.push(estimate_total_collisions(c, &s, corpus.labels).estimate);
            }
        }
        let (m, sd) = mean_std(&sens);
        curve.mean.push(m);
        curve.std.push(sd);
        curve.per_seed.push(sens);
        curve.coverage_mean.push(mean_std(&cov).0);
        curve.coverage_min.push(cov.iter().copied().fold(f64::INFINITY, f64::min));
        if let Some(e) = curve.estimate_mean.as_mut() {
            e.push(mean_std(&est).0);
        }
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_full: usize,
    pub c_full: u64,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    /// E[C_random] / C_full at each fraction.
    pub random_diagonal: Vec<f64>,
    pub curves: Vec<SensitivityCurve>,
}

/// Runs all four schemes.
pub fn evaluate(corpus: &EvalCorpus, fractions: &[f64], seeds: &[u64]) -> Result<EvaluationReport, MetricsError> {
    let n = corpus.len();
    if n == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    let c_full = corpus.c_full();
    let random_diagonal = fractions
        .iter()
        .map(|&f| {
            let e = expected_random_collisions(c_full, budget_for(f, n) as u64, n as u64)?;
            Ok(if c_full == 0 { 1.0 } else { e / c_full as f64 })
        })
        .collect::<Result<_, MetricsError>>()?;
    let curves = Scheme::ALL
        .into_iter()
        .map(|s| sensitivity_curve(corpus, s, fractions, seeds))
        .collect::<Result<_, _>>()?;
    Ok(EvaluationReport {
        n_full: n,
        c_full,
        seeds: seeds.to_vec(),
        fractions: fractions.to_vec(),
        random_diagonal,
        curves,
    })
}

#[derive(Serialize)]
struct CurveRow {
    scheme: &'static str,
    fraction: f64,
    mean: f64,
    std: f64,
    coverage_mean: f64,
    coverage_min: f64,
}

pub fn write_curves_csv<W: Write>(out: W, report: &EvaluationReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in &report.curves {
        for k in 0..c.fractions.len() {
            w.serialize(CurveRow {
                scheme: c.scheme.name(),
                fraction: c.fractions[k],
                mean: c.mean[k],
                std: c.std[k],
                coverage_mean: c.coverage_mean[k],
                coverage_min: c.coverage_min[k],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated table: fraction, diagonal, then one mean column per scheme.
pub fn write_gnuplot_table<W: Write>(mut out: W, report: &EvaluationReport) -> std::io::Result<()> {
    write!(out, "# fraction random_expected")?;
    for c in &report.curves {
        write!(out, " {}", c.scheme.name())?;
    }
    writeln!(out)?;
    for (k, f) in report.fractions.iter().enumerate() {
        write!(out, "{f} {}", report.random_diagonal[k])?;
        for c in &report.curves {
            write!(out, " {}", c.mean[k])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
