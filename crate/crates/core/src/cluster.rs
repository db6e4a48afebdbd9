//! Spherical k-means over unit-norm embeddings.
//!
//! Assignment is by maximal cosine similarity (ties broken toward the lowest
//! cluster index) and centroids are normalized member means, so the mean
//! cosine distance to the assigned centroid is non-increasing per iteration
//! in exact mode. Corpora above [`MINI_BATCH_THRESHOLD`] samples switch to
//! mini-batch updates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seed;

/// Above this many samples, `fit` uses mini-batch centroid updates.
pub const MINI_BATCH_THRESHOLD: usize = 1_000_000;
/// Mini-batch size.
pub const MINI_BATCH_SIZE: usize = 16_384;
/// Samples per parallel reduction chunk; fixed so float sums are
/// order-stable regardless of scheduling.
const REDUCE_CHUNK: usize = 8_192;

/// A fitted partition: unit-norm centroids plus the assignment of the corpus
/// (or corpus subset) the model was fit or re-assigned on.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub dim: usize,
    /// Row-major `k * dim` unit-norm centroid matrix.
    pub centroids: Vec<f32>,
    /// Per-sample cluster index, aligned with the fitted sample order.
    pub assignments: Vec<u32>,
    /// Per-cluster sample ids.
    pub members: Vec<Vec<u64>>,
    pub sizes: Vec<usize>,
    /// Mean cosine distance to the assigned centroid after each assignment
    /// pass (mini-batch mode records only the final full-corpus value).
    pub objective_trace: Vec<f64>,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize_f64_into(sum: &[f64], out: &mut [f32]) -> bool {
    let norm: f64 = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return false;
    }
    for (o, v) in out.iter_mut().zip(sum) {
        *o = (v / norm) as f32;
    }
    true
}

/// Nearest centroid by cosine; ties resolve to the lowest index.
fn nearest(centroids: &[f32], dim: usize, x: &[f32]) -> (u32, f32) {
    let mut best = 0u32;
    let mut best_cos = f32::NEG_INFINITY;
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let cos = dot(c, x);
        if cos > best_cos {
            best_cos = cos;
            best = j as u32;
        }
    }
    (best, best_cos)
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// Fit on the whole corpus.
    pub fn fit(corpus: &Corpus, k: usize, iters: usize, seed_value: u64) -> Result<ClusterModel> {
        let indices: Vec<usize> = (0..corpus.len()).collect();
        Self::fit_subset(corpus, &indices, k, iters, seed_value)
    }

    /// Fit on a subset of corpus rows. Assignments align with `indices` order.
    pub fn fit_subset(
        corpus: &Corpus,
        indices: &[usize],
        k: usize,
        iters: usize,
        seed_value: u64,
    ) -> Result<ClusterModel> {
        let n = indices.len();
        if k == 0 || k > n {
            return Err(Error::TooManyClusters { k, n });
        }
        if iters == 0 {
            return Err(Error::InvalidConfig("iters must be >= 1".into()));
        }
        let dim = corpus.dim();
        let mut rng = seed::rng(seed_value, "kmeans");

        let mini_batch = n > MINI_BATCH_THRESHOLD;
        let init_pool: Vec<usize> = if mini_batch {
            // Seeding on the full corpus would dominate runtime at this scale.
            let cap = (16 * k).max(MINI_BATCH_SIZE).min(n);
            rand::seq::index::sample(&mut rng, n, cap)
                .into_iter()
                .map(|p| indices[p])
                .collect()
        } else {
            indices.to_vec()
        };
        let mut centroids = plusplus_init(corpus, &init_pool, k, dim, &mut rng);

        let mut assignments = vec![0u32; n];
        let mut dists = vec![0f32; n];
        let mut trace = Vec::new();

        if mini_batch {
            let mut sums = vec![0f64; k * dim];
            let mut counts = vec![0usize; k];
            for _ in 0..iters {
                let batch: Vec<usize> = (0..MINI_BATCH_SIZE)
                    .map(|_| indices[rng.gen_range(0..n)])
                    .collect();
                let assigned: Vec<u32> = batch
                    .par_iter()
                    .map(|&i| nearest(&centroids, dim, corpus.embedding(i)).0)
                    .collect();
                for (&i, &j) in batch.iter().zip(&assigned) {
                    let row = &mut sums[j as usize * dim..(j as usize + 1) * dim];
                    for (s, &v) in row.iter_mut().zip(corpus.embedding(i)) {
                        *s += v as f64;
                    }
                    counts[j as usize] += 1;
                }
                for j in 0..k {
                    if counts[j] > 0 {
                        let sum = &sums[j * dim..(j + 1) * dim];
                        let out = &mut centroids[j * dim..(j + 1) * dim];
                        normalize_f64_into(sum, out);
                    }
                }
            }
            assign_into(corpus, indices, &centroids, dim, &mut assignments, &mut dists);
            trace.push(mean_f64(&dists));
        } else {
            let mut prev_assignments: Option<Vec<u32>> = None;
            for _ in 0..iters {
                assign_into(corpus, indices, &centroids, dim, &mut assignments, &mut dists);
                trace.push(mean_f64(&dists));
                if prev_assignments.as_deref() == Some(assignments.as_slice()) {
                    break;
                }
                prev_assignments = Some(assignments.clone());
                update_centroids(corpus, indices, &assignments, &dists, k, dim, &mut centroids);
            }
            // Reflect the final centroid update in the returned assignment.
            assign_into(corpus, indices, &centroids, dim, &mut assignments, &mut dists);
            trace.push(mean_f64(&dists));
        }

        Ok(finalize(corpus, indices, centroids, assignments, dim, k, trace))
    }

    /// Best of `restarts` independently seeded fits by final objective
    /// (first winner on ties, so the choice is deterministic).
    ///
    /// Exact k-means regularly converges to merge-and-split local optima at
    /// small K; restarting is the standard cure and keeps downstream
    /// stability comparisons about the data rather than optimizer luck.
    pub fn fit_best(
        corpus: &Corpus,
        indices: &[usize],
        k: usize,
        iters: usize,
        restarts: usize,
        seed_value: u64,
    ) -> Result<ClusterModel> {
        let mut best: Option<ClusterModel> = None;
        for r in 0..restarts.max(1) {
            let model = Self::fit_subset(
                corpus,
                indices,
                k,
                iters,
                seed::derive(seed_value, &format!("restart-{r}")),
            )?;
            let objective = model.objective_trace.last().copied().unwrap_or(f64::INFINITY);
            let improves = best
                .as_ref()
                .map_or(true, |b| {
                    objective < b.objective_trace.last().copied().unwrap_or(f64::INFINITY)
                });
            if improves {
                best = Some(model);
            }
        }
        Ok(best.expect("restarts >= 1"))
    }

    /// Map every corpus sample to its argmax-cosine centroid.
    pub fn assign(&self, corpus: &Corpus) -> Result<Vec<u32>> {
        if corpus.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: corpus.dim(),
            });
        }
        Ok((0..corpus.len())
            .into_par_iter()
            .map(|i| nearest(&self.centroids, self.dim, corpus.embedding(i)).0)
            .collect())
    }

    /// Same centroids, re-assigned over `corpus`; empty clusters are dropped
    /// (with the drop logged) so downstream per-cluster statistics are
    /// always over non-empty clusters.
    pub fn reassigned(&self, corpus: &Corpus) -> Result<ClusterModel> {
        let assignments = self.assign(corpus)?;
        let k = self.k();
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a as usize] += 1;
        }
        let empties = sizes.iter().filter(|&&s| s == 0).count();
        if empties > 0 {
            log::warn!("reassignment left {empties} empty clusters; dropping them");
        }
        let mut centroids = self.centroids.clone();
        let mut assignments = assignments;
        drop_empty(&mut centroids, &mut assignments, &sizes, self.dim);
        Ok(finalize_from_assignment(
            corpus,
            &(0..corpus.len()).collect::<Vec<_>>(),
            centroids,
            assignments,
            self.dim,
        ))
    }

    /// Fit a child model over one cluster's members with
    /// `k_sub = max(1, floor(sqrt(size)))` and 5 iterations.
    pub fn subcluster(&self, cluster_id: usize, corpus: &Corpus, seed_value: u64) -> Result<ClusterModel> {
        let members = self
            .members
            .get(cluster_id)
            .ok_or(Error::UnknownCluster {
                id: cluster_id,
                k: self.k(),
            })?;
        let indices: Vec<usize> = members
            .iter()
            .map(|&id| {
                corpus.index_of(id).ok_or_else(|| {
                    Error::Other(format!("member id {id} not found in corpus"))
                })
            })
            .collect::<Result<_>>()?;
        let k_sub = ((indices.len() as f64).sqrt().floor() as usize).max(1);
        Self::fit_subset(corpus, &indices, k_sub, 5, seed_value)
    }

    /// Persist as `[k u64][dim u64][centroids f32*k*dim][assignments u32*n]`,
    /// all little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&(self.k() as u64).to_le_bytes())
            .and_then(|_| w.write_all(&(self.dim as u64).to_le_bytes()))
            .map_err(|e| Error::io(path, e))?;
        for v in &self.centroids {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        for a in &self.assignments {
            w.write_all(&a.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a model persisted by [`ClusterModel::save`]. Members are rebuilt
    /// from the stored assignment against `corpus`.
    pub fn load(path: &Path, corpus: &Corpus) -> Result<ClusterModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
        let k = u64::from_le_bytes(header[0..8].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let cent_bytes = k * dim * 4;
        if bytes.len() < cent_bytes || (bytes.len() - cent_bytes) % 4 != 0 {
            return Err(Error::InvalidEmbeddingFile {
                path: path.into(),
                reason: "truncated cluster model".into(),
            });
        }
        let centroids: Vec<f32> = bytes[..cent_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let assignments: Vec<u32> = bytes[cent_bytes..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if assignments.len() != corpus.len() {
            return Err(Error::RecordCountMismatch {
                meta: corpus.len(),
                emb: assignments.len(),
            });
        }
        let indices: Vec<usize> = (0..corpus.len()).collect();
        Ok(finalize_from_assignment(corpus, &indices, centroids, assignments, dim))
    }
}

fn mean_f64(dists: &[f32]) -> f64 {
    dists.iter().map(|&d| d as f64).sum::<f64>() / dists.len() as f64
}

/// k-means++ seeding with D^2 sampling on `1 - cos`.
fn plusplus_init(
    corpus: &Corpus,
    pool: &[usize],
    k: usize,
    dim: usize,
    rng: &mut impl Rng,
) -> Vec<f32> {
    let n = pool.len();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = pool[rng.gen_range(0..n)];
    centroids.extend_from_slice(corpus.embedding(first));

    let mut d2: Vec<f64> = pool
        .par_iter()
        .map(|&i| {
            let cos = dot(&centroids[..dim], corpus.embedding(i)) as f64;
            let d = (1.0 - cos).max(0.0);
            d * d
        })
        .collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (pos, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= r {
                    chosen = pos;
                    break;
                }
            }
            chosen
        } else {
            // All residual distances zero (e.g. duplicated points): any pick
            // works, empties get repaired or dropped later.
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(corpus.embedding(pool[pick]));
        let new_c = centroids[start..].to_vec();
        d2.par_iter_mut().zip(pool.par_iter()).for_each(|(w, &i)| {
            let cos = dot(&new_c, corpus.embedding(i)) as f64;
            let d = (1.0 - cos).max(0.0);
            *w = w.min(d * d);
        });
    }
    centroids
}

fn assign_into(
    corpus: &Corpus,
    indices: &[usize],
    centroids: &[f32],
    dim: usize,
    assignments: &mut [u32],
    dists: &mut [f32],
) {
    assignments
        .par_iter_mut()
        .zip(dists.par_iter_mut())
        .zip(indices.par_iter())
        .for_each(|((a, d), &i)| {
            let (j, cos) = nearest(centroids, dim, corpus.embedding(i));
            *a = j;
            *d = 1.0 - cos;
        });
}

/// Normalized member means, with empty clusters reseeded at the sample
/// farthest from its assigned centroid.
fn update_centroids(
    corpus: &Corpus,
    indices: &[usize],
    assignments: &[u32],
    dists: &[f32],
    k: usize,
    dim: usize,
    centroids: &mut [f32],
) {
    // Fixed-size chunks keep the f64 reduction order independent of the
    // rayon schedule.
    let partials: Vec<(Vec<f64>, Vec<usize>)> = indices
        .par_chunks(REDUCE_CHUNK)
        .zip(assignments.par_chunks(REDUCE_CHUNK))
        .map(|(idx_chunk, a_chunk)| {
            let mut sums = vec![0f64; k * dim];
            let mut counts = vec![0usize; k];
            for (&i, &j) in idx_chunk.iter().zip(a_chunk) {
                let row = &mut sums[j as usize * dim..(j as usize + 1) * dim];
                for (s, &v) in row.iter_mut().zip(corpus.embedding(i)) {
                    *s += v as f64;
                }
                counts[j as usize] += 1;
            }
            (sums, counts)
        })
        .collect();

    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (ps, pc) in partials {
        for (s, v) in sums.iter_mut().zip(ps) {
            *s += v;
        }
        for (c, v) in counts.iter_mut().zip(pc) {
            *c += v;
        }
    }

    let mut reseed_order: Option<Vec<usize>> = None;
    let mut reseed_cursor = 0usize;
    for j in 0..k {
        if counts[j] > 0 {
            let sum = &sums[j * dim..(j + 1) * dim];
            let out = &mut centroids[j * dim..(j + 1) * dim];
            if !normalize_f64_into(sum, out) {
                // Members cancel out; keep the previous centroid.
                log::warn!("cluster {j}: member sum has zero norm, keeping centroid");
            }
        } else {
            let order = reseed_order.get_or_insert_with(|| {
                let mut o: Vec<usize> = (0..indices.len()).collect();
                o.sort_by(|&a, &b| dists[b].partial_cmp(&dists[a]).unwrap().then(a.cmp(&b)));
                o
            });
            if reseed_cursor < order.len() {
                let pos = order[reseed_cursor];
                reseed_cursor += 1;
                let x = corpus.embedding(indices[pos]);
                centroids[j * dim..(j + 1) * dim].copy_from_slice(x);
            }
        }
    }
}

fn finalize(
    corpus: &Corpus,
    indices: &[usize],
    mut centroids: Vec<f32>,
    mut assignments: Vec<u32>,
    dim: usize,
    k: usize,
    trace: Vec<f64>,
) -> ClusterModel {
    let mut sizes = vec![0usize; k];
    for &a in &assignments {
        sizes[a as usize] += 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        let dropped = sizes.iter().filter(|&&s| s == 0).count();
        log::warn!("dropping {dropped} empty clusters after final iteration");
        drop_empty(&mut centroids, &mut assignments, &sizes, dim);
    }
    let mut model = finalize_from_assignment(corpus, indices, centroids, assignments, dim);
    model.objective_trace = trace;
    model
}

/// Remove empty clusters and renumber assignments to the compacted ids.
fn drop_empty(centroids: &mut Vec<f32>, assignments: &mut [u32], sizes: &[usize], dim: usize) {
    let k = sizes.len();
    let mut remap = vec![u32::MAX; k];
    let mut new_centroids = Vec::with_capacity(centroids.len());
    let mut next = 0u32;
    for j in 0..k {
        if sizes[j] > 0 {
            remap[j] = next;
            new_centroids.extend_from_slice(&centroids[j * dim..(j + 1) * dim]);
            next += 1;
        }
    }
    for a in assignments.iter_mut() {
        *a = remap[*a as usize];
    }
    *centroids = new_centroids;
}

fn finalize_from_assignment(
    corpus: &Corpus,
    indices: &[usize],
    centroids: Vec<f32>,
    assignments: Vec<u32>,
    dim: usize,
) -> ClusterModel {
    let k = centroids.len() / dim;
    let mut members = vec![Vec::new(); k];
    let mut sizes = vec![0usize; k];
    for (&i, &a) in indices.iter().zip(&assignments) {
        members[a as usize].push(corpus.id(i));
        sizes[a as usize] += 1;
    }
    ClusterModel {
        dim,
        centroids,
        assignments,
        members,
        sizes,
        objective_trace: Vec::new(),
    }
}
