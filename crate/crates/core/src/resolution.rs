//! Intrinsic resolution selection by cross-resolution rank stability.
//!
//! For each candidate K, geometric scores at K are compared with scores
//! reconstructed from finer resolutions K+h through a row-stochastic soft
//! bridge (centroid-cosine softmax). Stability is Kendall's tau averaged
//! over hop strides and damped by an atanh shrinkage that discounts
//! small-K optimism; the selected K* maximizes the shrunk stability.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features;
use crate::seed;

/// Row-stochastic transition matrix between two centroid sets.
#[derive(Debug, Clone)]
pub struct SoftBridge {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols` transition probabilities.
    pub pi: Vec<f64>,
    pub t_scale: f64,
}

impl SoftBridge {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.pi[i * self.cols..(i + 1) * self.cols]
    }
}

/// Stability numbers for one candidate resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KStability {
    pub k: usize,
    /// `(stride, raw tau)` per hop.
    pub tau_hops: Vec<(usize, f64)>,
    /// Hop-weighted average of the raw taus.
    pub j_raw: f64,
    /// Shrunk stability actually used for selection.
    pub j_final: f64,
    /// Clusters with at least `min_members` members at this resolution.
    pub n_valid: usize,
}

/// Result of a resolution sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub per_k: Vec<KStability>,
    pub k_star: usize,
    pub hop_strides: Vec<usize>,
    pub hop_weights: Vec<f64>,
    pub lambda_shrink: f64,
}

/// Sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectKOptions {
    pub k_range: Vec<usize>,
    pub strides: Vec<usize>,
    pub hop_weights: Vec<f64>,
    pub t_scale: f64,
    pub lambda_shrink: f64,
    /// Minimum members for a cluster to count toward `n_valid`.
    pub min_members: usize,
    /// Fits run on this fraction of the corpus.
    pub probe_fraction: f64,
    pub iters: usize,
    /// Independent k-means starts per fit; best objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SelectKOptions {
    fn default() -> Self {
        SelectKOptions {
            k_range: Vec::new(),
            strides: vec![2, 4, 6],
            hop_weights: vec![0.5, 0.3, 0.2],
            t_scale: 20.0,
            lambda_shrink: 1.0,
            min_members: 3,
            probe_fraction: 0.2,
            iters: 10,
            restarts: 4,
            seed: 0,
        }
    }
}

/// Build the soft bridge from centroid set `a` (rows) to `b` (columns):
/// row i is `softmax_j(t_scale * cos(a_i, b_j))`, computed with
/// max-subtraction.
pub fn soft_bridge(a: &[f32], b: &[f32], dim: usize, t_scale: f64) -> Result<SoftBridge> {
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if a.len() % dim != 0 { a.len() } else { b.len() },
        });
    }
    let rows = a.len() / dim;
    let cols = b.len() / dim;
    let mut pi = vec![0f64; rows * cols];
    for (i, row) in pi.chunks_exact_mut(cols).enumerate() {
        let ai = &a[i * dim..(i + 1) * dim];
        let mut max_logit = f64::NEG_INFINITY;
        for (j, cell) in row.iter_mut().enumerate() {
            let bj = &b[j * dim..(j + 1) * dim];
            let cos: f32 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
            let logit = t_scale * cos as f64;
            *cell = logit;
            max_logit = max_logit.max(logit);
        }
        let mut total = 0f64;
        for cell in row.iter_mut() {
            *cell = (*cell - max_logit).exp();
            total += *cell;
        }
        for cell in row.iter_mut() {
            *cell /= total;
        }
    }
    Ok(SoftBridge {
        rows,
        cols,
        pi,
        t_scale,
    })
}

/// Project finer-resolution scores back through the bridge:
/// `s_hat_i = sum_j pi(j|i) * s_j`.
pub fn reconstruct(bridge: &SoftBridge, scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != bridge.cols {
        return Err(Error::LengthMismatch {
            left: bridge.cols,
            right: scores.len(),
        });
    }
    Ok((0..bridge.rows)
        .map(|i| bridge.row(i).iter().zip(scores).map(|(p, s)| p * s).sum())
        .collect())
}

/// Kendall's tau-a: `2 (N_conc - N_disc) / (K (K-1))`; tied pairs count for
/// neither.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let k = a.len();
    if k < 2 {
        return Err(Error::TooFewForRank { n: k });
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..k {
        for j in (i + 1)..k {
            let prod = (a[i] - a[j]) * (b[i] - b[j]);
            if prod > 0.0 {
                concordant += 1;
            } else if prod < 0.0 {
                discordant += 1;
            }
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    Ok((concordant - discordant) as f64 / pairs)
}

/// Damp a tau estimate toward zero when few clusters support it:
/// `tanh(arctanh(tau) * tanh(lambda * sqrt(n_valid - 3)))`.
///
/// Returns 0 (with a warning) when `n_valid < 4`; the evidence is too thin
/// to rank anything.
pub fn shrink(tau: f64, n_valid: usize, lambda_shrink: f64) -> f64 {
    if n_valid < 4 {
        log::warn!("shrink: n_valid = {n_valid} < 4, returning 0");
        return 0.0;
    }
    let clamped = tau.clamp(-(1.0 - 1e-12), 1.0 - 1e-12);
    let z = clamped.atanh();
    let damp = (lambda_shrink * ((n_valid - 3) as f64).sqrt()).tanh();
    (z * damp).tanh()
}

/// Sweep candidate resolutions and pick `k_star = argmax J_final`
/// (smallest K on ties).
///
/// Fits run on a probe subset; every fit draws its seed from a named
/// substream so the profile is deterministic for a fixed option set.
pub fn select_k(corpus: &Corpus, opts: &SelectKOptions) -> Result<StabilityProfile> {
    if opts.k_range.is_empty() {
        return Err(Error::InvalidConfig("k_range must be non-empty".into()));
    }
    if opts.strides.is_empty() || opts.strides.len() != opts.hop_weights.len() {
        return Err(Error::InvalidConfig(
            "strides and hop_weights must be non-empty and equal length".into(),
        ));
    }
    if opts.hop_weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidConfig("hop_weights must be positive".into()));
    }

    let probe;
    let probe_ref: &Corpus = if opts.probe_fraction < 1.0 {
        probe = corpus.probe_subset(opts.probe_fraction, seed::derive(opts.seed, "sweep-probe"))?;
        &probe
    } else {
        corpus
    };

    let max_k = opts.k_range.iter().copied().max().unwrap();
    let max_stride = opts.strides.iter().copied().max().unwrap();
    if max_k + max_stride > probe_ref.len() {
        return Err(Error::TooManyClusters {
            k: max_k + max_stride,
            n: probe_ref.len(),
        });
    }

    // One fit per distinct resolution, shared across hops.
    let mut needed: BTreeSet<usize> = BTreeSet::new();
    for &k in &opts.k_range {
        needed.insert(k);
        for &h in &opts.strides {
            needed.insert(k + h);
        }
    }

    let fitted: BTreeMap<usize, (ClusterModel, features::ClusterFeatures)> = needed
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let fit_seed = seed::derive(opts.seed, &format!("sweep-fit-k{k}"));
            let indices: Vec<usize> = (0..probe_ref.len()).collect();
            let model = ClusterModel::fit_best(probe_ref, &indices, k, opts.iters, opts.restarts, fit_seed)?;
            let raw = features::extract_raw(&model, probe_ref)?;
            let feats = features::stabilize_standardize(&raw)?;
            Ok((k, (model, feats)))
        })
        .collect::<Result<_>>()?;

    let weight_total: f64 = opts.hop_weights.iter().sum();
    let mut per_k = Vec::with_capacity(opts.k_range.len());
    for &k in &opts.k_range {
        let (model_k, feats_k) = &fitted[&k];
        // Weights are derived once at the base resolution and applied to
        // both sides of every hop. Re-deriving them at K+h lets the
        // split-half covariance artifact redirect the consensus direction
        // and scramble the rank comparison.
        let weights_k = features::spectral_weights_or_uniform(feats_k);
        let scores_k = features::score(feats_k, &weights_k).s;
        let mut tau_hops = Vec::with_capacity(opts.strides.len());
        let mut j_raw = 0f64;
        for (&h, &gamma) in opts.strides.iter().zip(&opts.hop_weights) {
            let (model_kh, feats_kh) = &fitted[&(k + h)];
            let scores_kh = features::score(feats_kh, &weights_k).s;
            let bridge = soft_bridge(
                &model_k.centroids,
                &model_kh.centroids,
                model_k.dim,
                opts.t_scale,
            )?;
            let reconstructed = reconstruct(&bridge, &scores_kh)?;
            let tau = kendall_tau(&scores_k, &reconstructed)?;
            tau_hops.push((h, tau));
            j_raw += gamma * tau;
        }
        j_raw /= weight_total;
        let n_valid = model_k.sizes.iter().filter(|&&s| s >= opts.min_members).count();
        let j_final = shrink(j_raw, n_valid, opts.lambda_shrink);
        per_k.push(KStability {
            k,
            tau_hops,
            j_raw,
            j_final,
            n_valid,
        });
    }

    let mut k_star = per_k[0].k;
    let mut best = per_k[0].j_final;
    for e in &per_k[1..] {
        if e.j_final > best {
            best = e.j_final;
            k_star = e.k;
        }
    }

    Ok(StabilityProfile {
        per_k,
        k_star,
        hop_strides: opts.strides.clone(),
        hop_weights: opts.hop_weights.clone(),
        lambda_shrink: opts.lambda_shrink,
    })
}

impl StabilityProfile {
    /// Comma-separated rows `(K, tau per stride.., J_raw, J_final, n_valid)`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let tau_cols: Vec<String> = self
            .hop_strides
            .iter()
            .map(|h| format!("tau_h{h}"))
            .collect();
        writeln!(out, "K,{},J_raw,J_final,n_valid", tau_cols.join(","))?;
        for e in &self.per_k {
            let taus: Vec<String> = e.tau_hops.iter().map(|(_, t)| t.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                e.k,
                taus.join(","),
                e.j_raw,
                e.j_final,
                e.n_valid
            )?;
        }
        Ok(())
    }

    /// Plot data `(K, J_final, marginal delta J)`.
    pub fn write_plot_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "K,J_final,delta_J")?;
        let mut prev: Option<f64> = None;
        for e in &self.per_k {
            let delta = prev.map(|p| e.j_final - p).unwrap_or(0.0);
            writeln!(out, "{},{},{}", e.k, e.j_final, delta)?;
            prev = Some(e.j_final);
        }
        Ok(())
    }
}
