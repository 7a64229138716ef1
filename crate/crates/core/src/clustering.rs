//! K-Means over latent codes and the cluster → class lookup table.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CltsError, Result};
use crate::rng::{derive_seed, rng_from, Rng};

pub const MIN_CLUSTERS: usize = 2;
pub const MAX_CLUSTERS: usize = 20;
pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 30;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCentroids", into = "RawCentroids")]
pub struct Centroids {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawCentroids {
    vectors: Vec<Vec<f64>>,
}

impl TryFrom<RawCentroids> for Centroids {
    type Error = CltsError;
    fn try_from(raw: RawCentroids) -> Result<Self> {
        Centroids::new(raw.vectors)
    }
}

impl From<Centroids> for RawCentroids {
    fn from(c: Centroids) -> Self {
        RawCentroids { vectors: c.vectors }
    }
}

impl Centroids {
    /// Validates K ∈ [2, 20], equal non-zero lengths, finiteness and
    /// pairwise distinctness.
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let k = vectors.len();
        if !(MIN_CLUSTERS..=MAX_CLUSTERS).contains(&k) {
            return Err(CltsError::Clustering(format!(
                "K = {k} outside [{MIN_CLUSTERS}, {MAX_CLUSTERS}]"
            )));
        }
        let d = vectors[0].len();
        if d == 0 {
            return Err(CltsError::Clustering("centroids must be non-empty".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(CltsError::dimension(format!("centroid {i}"), d, v.len()));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(CltsError::Numeric {
                    block: format!("centroid {i}"),
                });
            }
            if vectors[..i].contains(v) {
                return Err(CltsError::Clustering(format!("centroid {i} duplicates an earlier one")));
            }
        }
        Ok(Centroids { vectors })
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Nearest centroid by squared distance; ties go to the lowest id.
    pub fn assign(&self, z: &[f64]) -> Result<usize> {
        if z.len() != self.dim() {
            return Err(CltsError::dimension("cluster assignment", self.dim(), z.len()));
        }
        Ok(nearest(&self.vectors, z).0)
    }
}

fn nearest(vectors: &[Vec<f64>], z: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in vectors.iter().enumerate() {
        let d = squared_distance(c, z);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Mean squared distance of each latent to its assigned centroid.
pub fn clustering_loss(centroids: &Centroids, latents: &[Vec<f64>]) -> Result<f64> {
    if latents.is_empty() {
        return Err(CltsError::Clustering("clustering loss of an empty set".into()));
    }
    let mut total = 0.0;
    for z in latents {
        let c = centroids.assign(z)?;
        total += squared_distance(&centroids.vectors[c], z);
    }
    Ok(total / latents.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: DEFAULT_RESTARTS,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// An empty cluster moved onto the point farthest from its centroid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reseed {
    pub iteration: usize,
    pub cluster: usize,
    pub point: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Centroids,
    /// WCSS after every assignment step of the winning restart.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    /// Empty-cluster events across all restarts.
    pub reseeds: Vec<Reseed>,
}

impl KMeansFit {
    pub fn wcss(&self) -> f64 {
        *self.wcss_trace.last().expect("trace holds at least one entry")
    }
}

pub fn kmeans_fit(latents: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_fit_with(latents, k, &KMeansOptions::default(), seed)
}

/// k-means++ seeding followed by Lloyd iterations, repeated `restarts`
/// times; the run with the lowest final WCSS wins (earliest on ties).
pub fn kmeans_fit_with(latents: &[Vec<f64>], k: usize, options: &KMeansOptions, seed: u64) -> Result<KMeansFit> {
    if !(MIN_CLUSTERS..=MAX_CLUSTERS).contains(&k) {
        return Err(CltsError::Clustering(format!(
            "K = {k} outside [{MIN_CLUSTERS}, {MAX_CLUSTERS}]"
        )));
    }
    if latents.len() < k {
        return Err(CltsError::Clustering(format!(
            "{} points cannot form {k} clusters",
            latents.len()
        )));
    }
    if options.restarts == 0 || options.max_iterations == 0 {
        return Err(CltsError::Config("K-Means needs at least one restart and iteration".into()));
    }
    let d = latents[0].len();
    for (i, z) in latents.iter().enumerate() {
        if z.len() != d {
            return Err(CltsError::dimension(format!("latent {i}"), d, z.len()));
        }
        if !z.iter().all(|x| x.is_finite()) {
            return Err(CltsError::Numeric {
                block: format!("latent {i}"),
            });
        }
    }

    let mut best: Option<KMeansFit> = None;
    let mut reseeds = Vec::new();
    for restart in 0..options.restarts {
        let mut rng = rng_from(derive_seed(seed, "kmeans-restart", restart as u64));
        let init = plus_plus(latents, k, &mut rng)?;
        let run = lloyd(latents, init, options.max_iterations, &mut reseeds)?;
        let better = best.as_ref().is_none_or(|b| run.wcss() < b.wcss());
        if better {
            best = Some(KMeansFit { restart, ..run });
        }
    }
    let mut best = best.expect("at least one restart");
    best.reseeds = reseeds;
    Ok(best)
}

fn plus_plus(latents: &[Vec<f64>], k: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers = vec![latents[rng.random_range(0..latents.len())].clone()];
    let mut dist: Vec<f64> = latents.iter().map(|z| squared_distance(z, &centers[0])).collect();
    while centers.len() < k {
        let pick = WeightedIndex::new(&dist)
            .map_err(|_| {
                CltsError::Clustering(format!("fewer than {k} distinct points among the latents"))
            })?
            .sample(rng);
        centers.push(latents[pick].clone());
        let c = centers.last().unwrap();
        for (dz, z) in dist.iter_mut().zip(latents) {
            *dz = dz.min(squared_distance(z, c));
        }
    }
    Ok(centers)
}

fn lloyd(
    latents: &[Vec<f64>],
    mut centers: Vec<Vec<f64>>,
    max_iterations: usize,
    reseeds: &mut Vec<Reseed>,
) -> Result<KMeansFit> {
    let k = centers.len();
    let d = centers[0].len();
    let mut trace = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let (labels, wcss) = assign_all(latents, &mut centers, iterations, reseeds)?;
        trace.push(wcss);
        if previous.as_ref() == Some(&labels) {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (z, &c) in latents.iter().zip(&labels) {
            sums[c].iter_mut().zip(z).for_each(|(s, x)| *s += x);
            counts[c] += 1;
        }
        for ((center, sum), n) in centers.iter_mut().zip(sums).zip(counts) {
            *center = sum.into_iter().map(|s| s / n as f64).collect();
        }
        previous = Some(labels);
    }
    Ok(KMeansFit {
        centroids: Centroids::new(centers)?,
        wcss_trace: trace,
        iterations,
        converged,
        restart: 0,
        reseeds: Vec::new(),
    })
}

/// Assignment step. Empty clusters are moved onto the point farthest from
/// its current centroid until none remain.
fn assign_all(
    latents: &[Vec<f64>],
    centers: &mut [Vec<f64>],
    iteration: usize,
    reseeds: &mut Vec<Reseed>,
) -> Result<(Vec<usize>, f64)> {
    loop {
        let nearest: Vec<(usize, f64)> = latents.iter().map(|z| nearest(centers, z)).collect();
        let mut counts = vec![0usize; centers.len()];
        nearest.iter().for_each(|&(c, _)| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            let wcss = nearest.iter().map(|&(_, d)| d).sum();
            return Ok((nearest.into_iter().map(|(c, _)| c).collect(), wcss));
        };
        let (point, far) = nearest
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &(_, d))| if d > acc.1 { (i, d) } else { acc });
        if far <= 0.0 {
            return Err(CltsError::Clustering("fewer distinct points than clusters".into()));
        }
        centers[empty] = latents[point].clone();
        reseeds.push(Reseed {
            iteration,
            cluster: empty,
            point,
        });
    }
}

/// Cluster id → class id, one entry per cluster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTable {
    pub classes: Vec<u32>,
}

impl LookupTable {
    pub fn new(classes: Vec<u32>, class_set: &[u32]) -> Result<Self> {
        if let Some(c) = classes.iter().find(|c| !class_set.contains(c)) {
            return Err(CltsError::Contract(format!(
                "lookup maps to class {c} outside the task's classes {class_set:?}"
            )));
        }
        Ok(LookupTable { classes })
    }

    pub fn class_of(&self, cluster: usize) -> u32 {
        self.classes[cluster]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Majority vote of labelled latents per cluster. Ties go to the lowest
/// class id; clusters that receive no point take the batch's majority class.
pub fn build_lookup(centroids: &Centroids, labelled: &[(Vec<f64>, u32)], class_set: &[u32]) -> Result<LookupTable> {
    if labelled.is_empty() {
        return Err(CltsError::Initialization("labelled batch is empty".into()));
    }
    if let Some((_, c)) = labelled.iter().find(|(_, c)| !class_set.contains(c)) {
        return Err(CltsError::Initialization(format!(
            "label {c} is not among the task's classes {class_set:?}"
        )));
    }
    if let Some(c) = class_set.iter().find(|c| !labelled.iter().any(|(_, l)| l == *c)) {
        return Err(CltsError::Initialization(format!("labelled batch has no sample of class {c}")));
    }
    let mut votes = vec![std::collections::BTreeMap::<u32, usize>::new(); centroids.k()];
    let mut global = std::collections::BTreeMap::<u32, usize>::new();
    for (z, class) in labelled {
        *votes[centroids.assign(z)?].entry(*class).or_default() += 1;
        *global.entry(*class).or_default() += 1;
    }
    let fallback = majority(&global).expect("batch is non-empty");
    let classes = votes.iter().map(|v| majority(v).unwrap_or(fallback)).collect();
    LookupTable::new(classes, class_set)
}

// BTreeMap iterates in ascending class order, so keeping the first strict
// maximum resolves ties toward the lowest id.
fn majority(counts: &std::collections::BTreeMap<u32, usize>) -> Option<u32> {
    let mut best: Option<(u32, usize)> = None;
    for (&c, &n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}
