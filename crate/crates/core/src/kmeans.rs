//! Seeded k-means: k-means++ seeding, Lloyd iterations and nearest-centroid
//! assignment under squared Euclidean distance.
//!
//! Work over frames is split into fixed-size chunks that may run on any
//! number of threads; per-chunk partial sums are always reduced in chunk
//! order, so results do not depend on the size of the thread pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const CHUNK_ROWS: usize = 512;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Stopping rule for Lloyd iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub max_iter: usize,
    /// Relative distortion improvement below which training stops.
    pub tol: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// The centroids of one k-means model.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: FeatureMatrix,
    train_distortion: Option<f64>,
}

impl Codebook {
    pub fn new(centroids: FeatureMatrix) -> Self {
        Self {
            centroids,
            train_distortion: None,
        }
    }

    /// Number of centroids (K).
    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &FeatureMatrix {
        &self.centroids
    }

    pub fn centroid(&self, k: usize) -> &[f32] {
        self.centroids.row(k)
    }

    /// Mean squared distance per frame at the end of training; `None` for
    /// codebooks that were loaded rather than trained.
    pub fn train_distortion(&self) -> Option<f64> {
        self.train_distortion
    }

    /// Index and squared distance of the closest centroid; ties go to the
    /// lowest index.
    pub fn nearest(&self, frame: &[f32]) -> (usize, f64) {
        nearest(self.centroids.as_slice(), self.dim(), frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub distortion_trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub indices: Vec<u32>,
    /// Mean squared distance between each frame and its assigned centroid.
    pub distortion: f64,
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn nearest(centroids: &[f32], dim: usize, frame: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(c, frame);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn check_k(data: &FeatureMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "cluster count must be at least 1".into(),
        ));
    }
    if k > data.rows() {
        return Err(Error::Shape(format!(
            "cannot train {k} clusters on {} frames",
            data.rows()
        )));
    }
    Ok(())
}

/// k-means++ seeding: the first centroid is a uniformly drawn frame, each
/// further one is drawn with probability proportional to its squared
/// distance from the nearest centroid chosen so far.
pub fn kmeanspp_init(data: &FeatureMatrix, k: usize, seed: u64) -> Result<Codebook> {
    check_k(data, k)?;
    let n = data.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));

    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|r| squared_distance(r, data.row(chosen[0])))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every frame coincides with a chosen centroid; fall back to an
            // unused frame so the K centroids stay distinct frames.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        let c = data.row(next);
        for (w, r) in d2.iter_mut().zip(data.iter_rows()) {
            *w = w.min(squared_distance(r, c));
        }
    }

    let values = chosen
        .iter()
        .flat_map(|&i| data.row(i).iter().copied())
        .collect();
    Ok(Codebook::new(FeatureMatrix::new(k, data.cols(), values)?))
}

struct ChunkStats {
    indices: Vec<u32>,
    distances: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

struct Pass {
    indices: Vec<u32>,
    distances: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    total: f64,
}

fn assignment_pass(data: &FeatureMatrix, centroids: &[f32], k: usize, with_sums: bool) -> Pass {
    let dim = data.cols();
    let chunks: Vec<ChunkStats> = data
        .as_slice()
        .par_chunks(CHUNK_ROWS * dim)
        .map(|chunk| {
            let rows = chunk.len() / dim;
            let mut stats = ChunkStats {
                indices: Vec::with_capacity(rows),
                distances: Vec::with_capacity(rows),
                sums: if with_sums {
                    vec![0.0; k * dim]
                } else {
                    Vec::new()
                },
                counts: vec![0; k],
            };
            for frame in chunk.chunks_exact(dim) {
                let (idx, d) = nearest(centroids, dim, frame);
                stats.indices.push(idx as u32);
                stats.distances.push(d);
                stats.counts[idx] += 1;
                if with_sums {
                    for (s, &v) in stats.sums[idx * dim..(idx + 1) * dim].iter_mut().zip(frame) {
                        *s += v as f64;
                    }
                }
            }
            stats
        })
        .collect();

    let mut pass = Pass {
        indices: Vec::with_capacity(data.rows()),
        distances: Vec::with_capacity(data.rows()),
        sums: if with_sums {
            vec![0.0; k * dim]
        } else {
            Vec::new()
        },
        counts: vec![0; k],
        total: 0.0,
    };
    for c in chunks {
        // Chunk-local total first, then fold; keeps the summation tree fixed.
        pass.total += c.distances.iter().sum::<f64>();
        pass.indices.extend(c.indices);
        pass.distances.extend(c.distances);
        for (a, b) in pass.sums.iter_mut().zip(&c.sums) {
            *a += b;
        }
        for (a, b) in pass.counts.iter_mut().zip(&c.counts) {
            *a += b;
        }
    }
    pass
}

/// Nearest-centroid assignment of every frame.
pub fn assign(codebook: &Codebook, data: &FeatureMatrix) -> Result<Assignment> {
    if data.cols() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            found: data.cols(),
        });
    }
    let pass = assignment_pass(data, codebook.centroids.as_slice(), codebook.size(), false);
    Ok(Assignment {
        indices: pass.indices,
        distortion: pass.total / data.rows() as f64,
    })
}

/// Mean of the assigned frames for each cluster. An empty cluster takes over
/// the frame farthest from its current centroid (ties to the lowest frame
/// index), each frame donating at most once.
fn update_centroids(data: &FeatureMatrix, pass: &Pass, k: usize) -> Vec<f32> {
    let dim = data.cols();
    let mut centroids = vec![0.0f32; k * dim];
    let mut distances = pass.distances.clone();
    for j in 0..k {
        let target = &mut centroids[j * dim..(j + 1) * dim];
        let count = pass.counts[j];
        if count > 0 {
            let sums = &pass.sums[j * dim..(j + 1) * dim];
            for (c, &s) in target.iter_mut().zip(sums) {
                *c = (s / count as f64) as f32;
            }
        } else {
            let mut far = 0;
            for (i, &d) in distances.iter().enumerate() {
                if d > distances[far] {
                    far = i;
                }
            }
            target.copy_from_slice(data.row(far));
            distances[far] = f64::NEG_INFINITY;
        }
    }
    centroids
}

/// Trains a `k`-centroid codebook with k-means++ seeding followed by Lloyd
/// iterations.
///
/// Each trace entry is the mean distortion after one centroid update and
/// reassignment. Training stops once the relative improvement drops below
/// `tol` or after `max_iter` iterations; an update that would raise the
/// distortion (possible only through `f32` rounding of centroids) is
/// discarded and ends training.
pub fn lloyd_train(
    data: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(Codebook, TrainReport)> {
    if max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be >= 0, got {tol}"
        )));
    }
    let init = kmeanspp_init(data, k, seed)?;
    let mut centroids = init.centroids.as_slice().to_vec();
    let mut pass = assignment_pass(data, &centroids, k, true);
    let n = data.rows() as f64;
    let mut distortion = pass.total / n;
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter {
        let candidate = update_centroids(data, &pass, k);
        let next = assignment_pass(data, &candidate, k, true);
        let next_distortion = next.total / n;
        if next_distortion > distortion {
            converged = true;
            break;
        }
        let improvement = distortion - next_distortion;
        centroids = candidate;
        pass = next;
        trace.push(next_distortion);
        let done = improvement <= tol * distortion;
        distortion = next_distortion;
        if done {
            converged = true;
            break;
        }
    }

    let codebook = Codebook {
        centroids: FeatureMatrix::new(k, data.cols(), centroids)?,
        train_distortion: Some(distortion),
    };
    let report = TrainReport {
        iterations: trace.len(),
        distortion_trace: trace,
        converged,
    };
    Ok((codebook, report))
}

/// [`lloyd_train`] with [`TrainParams`].
pub fn train(
    data: &FeatureMatrix,
    k: usize,
    seed: u64,
    params: TrainParams,
) -> Result<(Codebook, TrainReport)> {
    lloyd_train(data, k, seed, params.max_iter, params.tol)
}
