//! k-means clustering and the four sampling schemes, all without replacement.
//!
//! Samples are record indices into the corpus order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{BinReader, BinWriter, FormatError};

pub const CENTROID_MAGIC: &[u8; 4] = b"DCEN";
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("cannot form {m} clusters from {n} points")]
    TooFewPoints { n: usize, m: usize },
    #[error("K_0 must be positive, got {0}")]
    NonPositiveK0(f64),
    #[error("percentile must be in [0, 100], got {0}")]
    Percentile(f64),
    #[error("{what} has {found} entries, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unknown sampling scheme {0:?} (expected random, uniform_clusters, dice or top_difficulty)")]
    UnknownScheme(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Member record indices of each cluster, ascending.
    pub members: Vec<Vec<usize>>,
    pub iterations: usize,
}

impl Clustering {
    pub fn m(&self) -> usize {
        self.centroids.len()
    }

    pub fn from_assignments(assignments: Vec<usize>, centroids: Vec<Vec<f64>>) -> Self {
        let mut members = vec![Vec::new(); centroids.len()];
        for (i, &a) in assignments.iter().enumerate() {
            members[a].push(i);
        }
        Self {
            assignments,
            centroids,
            members,
            iterations: 0,
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// k-means++ seeding, then Lloyd iterations until the assignment stops
/// changing or [`MAX_ITERATIONS`]. An empty cluster takes the member of the
/// largest cluster farthest from that cluster's centroid.
pub fn kmeans(points: &[Vec<f64>], m: usize, seed: u64) -> Result<Clustering, SamplerError> {
    let n = points.len();
    if m == 0 || n < m {
        return Err(SamplerError::TooFewPoints { n, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(m);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(points[first].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut k = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    k = i;
                    break;
                }
                u -= w;
            }
            // guard against round-off landing on a zero-weight tail
            if d2[k] == 0.0 {
                (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(k)
            } else {
                k
            }
        } else {
            (0..n).find(|&i| !chosen[i]).expect("n >= m")
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        let c = centroids.last().expect("just pushed");
        for (dv, p) in d2.iter_mut().zip(points) {
            *dv = dv.min(dist2(p, c));
        }
    }

    let width = points[0].len();
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        repair_empty(points, &mut next, &centroids, m);
        let changed = next != assignments;
        assignments = next;
        let mut sums = vec![vec![0.0; width]; m];
        let mut counts = vec![0usize; m];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &k) in centroids.iter_mut().zip(sums).zip(&counts) {
            *c = s.into_iter().map(|v| v / k as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let mut out = Clustering::from_assignments(assignments, centroids);
    out.iterations = iterations;
    Ok(out)
}

fn repair_empty(points: &[Vec<f64>], assign: &mut [usize], centroids: &[Vec<f64>], m: usize) {
    loop {
        let mut counts = vec![0usize; m];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..m).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("m >= 1");
        let far = (0..points.len())
            .filter(|&i| assign[i] == largest)
            .max_by(|&a, &b| {
                dist2(&points[a], &centroids[largest])
                    .total_cmp(&dist2(&points[b], &centroids[largest]))
                    .then(b.cmp(&a))
            })
            .expect("largest cluster is non-empty");
        assign[far] = empty;
    }
}

/// Cluster statistic fed into the importance weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStat {
    Mean,
    /// Linear-interpolated percentile in `[0, 100]`.
    Percentile(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights {
    pub w: Vec<f64>,
    pub k0: f64,
}

impl ImportanceWeights {
    /// Cluster draw probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let s: f64 = self.w.iter().sum();
        self.w.iter().map(|w| w / s).collect()
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `w_j = K_0 + stat(d over cluster j)`; an empty cluster gets `K_0`.
pub fn score_importance(
    clustering: &Clustering,
    difficulties: &[f64],
    k0: f64,
    stat: ClusterStat,
) -> Result<ImportanceWeights, SamplerError> {
    if !(k0 > 0.0) {
        return Err(SamplerError::NonPositiveK0(k0));
    }
    if let ClusterStat::Percentile(p) = stat {
        if !(0.0..=100.0).contains(&p) {
            return Err(SamplerError::Percentile(p));
        }
    }
    if difficulties.len() != clustering.assignments.len() {
        return Err(SamplerError::Length {
            what: "difficulty scores",
            expected: clustering.assignments.len(),
            found: difficulties.len(),
        });
    }
    let w = clustering
        .members
        .iter()
        .map(|c| {
            if c.is_empty() {
                return k0;
            }
            let mut d: Vec<f64> = c.iter().map(|&i| difficulties[i]).collect();
            k0 + match stat {
                ClusterStat::Mean => d.iter().sum::<f64>() / d.len() as f64,
                ClusterStat::Percentile(p) => {
                    d.sort_by(f64::total_cmp);
                    percentile(&d, p)
                }
            }
        })
        .collect();
    Ok(ImportanceWeights { w, k0 })
}

fn draw_from_clusters<G: Rng + ?Sized>(
    clustering: &Clustering,
    budget: usize,
    rng: &mut G,
    mut pick_cluster: impl FnMut(&mut G) -> usize,
) -> Vec<usize> {
    let mut pools = clustering.members.clone();
    let mut remaining: usize = pools.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(budget.min(remaining));
    while out.len() < budget && remaining > 0 {
        let j = pick_cluster(rng);
        let pool = &mut pools[j];
        if pool.is_empty() {
            continue;
        }
        let k = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(k));
        remaining -= 1;
    }
    out
}

/// Cluster uniformly at random, then a member uniformly.
pub fn sample_uniform_clusters<G: Rng + ?Sized>(clustering: &Clustering, budget: usize, rng: &mut G) -> Vec<usize> {
    let m = clustering.m();
    draw_from_clusters(clustering, budget, rng, |r| r.random_range(0..m))
}

/// DICE draw: cluster drawn with probability `w_j / Σ w`.
pub fn sample_dice<G: Rng + ?Sized>(
    clustering: &Clustering,
    weights: &ImportanceWeights,
    budget: usize,
    rng: &mut G,
) -> Vec<usize> {
    let dist = WeightedIndex::new(&weights.w).expect("importance weights are positive");
    draw_from_clusters(clustering, budget, rng, |r| dist.sample(r))
}

/// The `budget` largest scores, ties broken by id ascending.
pub fn sample_top_difficulty(ids: &[String], difficulties: &[f64], budget: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| difficulties[b].total_cmp(&difficulties[a]).then_with(|| ids[a].cmp(&ids[b])));
    idx.truncate(budget);
    idx
}

/// Uniform without replacement via a partial Fisher-Yates shuffle, so a
/// smaller budget under the same seed yields a prefix of a larger one.
pub fn sample_random<G: Rng + ?Sized>(n: usize, budget: usize, rng: &mut G) -> Vec<usize> {
    let b = budget.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..b {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(b);
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Random,
    UniformClusters,
    Dice,
    TopDifficulty,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Random, Scheme::UniformClusters, Scheme::Dice, Scheme::TopDifficulty];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Random => "random",
            Scheme::UniformClusters => "uniform_clusters",
            Scheme::Dice => "dice",
            Scheme::TopDifficulty => "top_difficulty",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, SamplerError> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SamplerError::UnknownScheme(s.to_string()))
    }
}

#[derive(Serialize)]
struct SampleRow<'a> {
    rank: usize,
    id: &'a str,
    cluster: Option<usize>,
    d: Option<f64>,
}

/// `rank, id, cluster, d`; cluster and d are left empty when unknown.
pub fn write_sample_csv<W: Write>(
    out: W,
    sample: &[usize],
    ids: &[String],
    clusters: Option<&[usize]>,
    difficulties: Option<&[f64]>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (rank, &i) in sample.iter().enumerate() {
        w.serialize(SampleRow {
            rank,
            id: &ids[i],
            cluster: clusters.map(|c| c[i]),
            d: difficulties.map(|d| d[i]),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct AssignmentRow {
    id: String,
    cluster: usize,
}

pub fn write_assignments_csv<W: Write>(out: W, ids: &[String], c: &Clustering) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (id, &cluster) in ids.iter().zip(&c.assignments) {
        w.serialize(AssignmentRow { id: id.clone(), cluster })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments_csv(path: impl AsRef<Path>) -> csv::Result<Vec<(String, usize)>> {
    csv::Reader::from_path(path)?
        .deserialize::<AssignmentRow>()
        .map(|r| r.map(|r| (r.id, r.cluster)))
        .collect()
}

/// Centroids: magic `DCEN`, `u32` version, `u32` M, `u32` width, `f32` rows.
pub fn write_centroids_to<W: Write>(out: W, centroids: &[Vec<f64>]) -> Result<(), FormatError> {
    let mut w = BinWriter::new(out);
    w.header(CENTROID_MAGIC, centroids.len() as u32)?;
    w.u32(centroids.first().map_or(0, Vec::len) as u32)?;
    for c in centroids {
        let row: Vec<f32> = c.iter().map(|&v| v as f32).collect();
        w.f32s(&row)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn write_centroids(path: impl AsRef<Path>, centroids: &[Vec<f64>]) -> Result<(), FormatError> {
    write_centroids_to(BufWriter::new(File::create(path)?), centroids)
}

pub fn read_centroids_from<R: Read>(input: R) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut r = BinReader::new(input);
    let m = r.header(CENTROID_MAGIC)? as usize;
    let width = r.u32()? as usize;
    let mut out = Vec::with_capacity(m.min(1 << 16));
    for _ in 0..m {
        let at = r.offset();
        let row = r.f32s(width)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::InvalidRecord {
                offset: at,
                reason: "non-finite centroid".into(),
            });
        }
        out.push(row.into_iter().map(f64::from).collect());
    }
    r.expect_eof()?;
    Ok(out)
}

pub fn read_centroids(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>, FormatError> {
    read_centroids_from(BufReader::new(File::open(path)?))
}
