//! Per-cluster geometric features and the spectral consensus score.
//!
//! Each cluster gets a raw feature vector (cohesion, size, mean length,
//! language entropy). Extensive features (size, length) are log-stabilized,
//! all columns are Z-scored, and a consensus weight vector is taken from the
//! first principal eigenvector of the polarity-aligned covariance. The
//! scalar score contrasts weighted cohesion against the weighted penalties.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Canonical feature column order.
pub const COH: usize = 0;
pub const SIZE: usize = 1;
pub const LEN: usize = 2;
pub const ENT: usize = 3;
pub const FEATURE_NAMES: [&str; 4] = ["coh", "size", "len", "ent"];

/// Cohesion denominator floor; the inverse distance is singular at zero spread.
const COHESION_DELTA: f64 = 1e-6;
/// Cohesion cap for singletons.
const COHESION_CAP: f64 = 1e6;
/// Eigenvalue ratio under which no consensus direction exists.
const EIGEN_TIE_RATIO: f64 = 1.05;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Raw, stabilized, and standardized per-cluster feature matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterFeatures {
    pub raw: Vec<[f64; 4]>,
    pub stabilized: Vec<[f64; 4]>,
    pub standardized: Vec<[f64; 4]>,
    /// Column moments of the stabilized matrix (sample std, ddof = 1).
    pub feature_means: [f64; 4],
    pub feature_stds: [f64; 4],
}

impl ClusterFeatures {
    pub fn k(&self) -> usize {
        self.raw.len()
    }
}

/// L1-normalized consensus weights over (coh, size, len, ent).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusWeights {
    pub w: [f64; 4],
    /// Covariance of the polarity-aligned standardized features.
    pub covariance: [[f64; 4]; 4],
    pub principal: [f64; 4],
    pub eigenvalue: f64,
    pub second_eigenvalue: f64,
    /// True when eigenvalues were near-tied and `w` fell back to uniform.
    pub degenerate: bool,
}

impl ConsensusWeights {
    pub fn uniform() -> Self {
        ConsensusWeights {
            w: [0.25; 4],
            covariance: [[0.0; 4]; 4],
            principal: [0.5; 4],
            eigenvalue: 0.0,
            second_eigenvalue: 0.0,
            degenerate: true,
        }
    }
}

/// Per-cluster scalar geometric scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricScores {
    pub s: Vec<f64>,
}

/// Raw geometric proxies per cluster.
///
/// - cohesion: `1 / (1e-6 + mean cosine distance to centroid)`, capped at 1e6
/// - size: member count
/// - len: mean token length
/// - ent: natural-log Shannon entropy of the member language distribution
pub fn extract_raw(model: &ClusterModel, corpus: &Corpus) -> Result<Vec<[f64; 4]>> {
    let vocab = corpus.language_vocab().len();
    model
        .members
        .par_iter()
        .enumerate()
        .map(|(j, members)| {
            let centroid = model.centroid(j);
            let mut dist_sum = 0f64;
            let mut len_sum = 0f64;
            let mut lang_counts = vec![0usize; vocab];
            for &id in members {
                let i = corpus
                    .index_of(id)
                    .ok_or_else(|| Error::Other(format!("member id {id} not in corpus")))?;
                let cos: f32 = corpus
                    .embedding(i)
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| a * b)
                    .sum();
                dist_sum += (1.0 - cos as f64).max(0.0);
                len_sum += corpus.token_length(i) as f64;
                lang_counts[corpus.language_ix(i) as usize] += 1;
            }
            let m = members.len() as f64;
            let mean_dist = dist_sum / m;
            let coh = (1.0 / (COHESION_DELTA + mean_dist)).min(COHESION_CAP);
            let ent = entropy(&lang_counts, members.len());
            Ok([coh, m, len_sum / m, ent])
        })
        .collect()
}

/// Natural-log Shannon entropy of label counts.
pub fn entropy(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Log-stabilize the extensive columns and Z-score everything.
///
/// Zero-variance columns standardize to all-zeros rather than erroring, so
/// degenerate sweeps can proceed.
pub fn stabilize_standardize(raw: &[[f64; 4]]) -> Result<ClusterFeatures> {
    let k = raw.len();
    let mut stabilized = Vec::with_capacity(k);
    for row in raw {
        if row[SIZE] <= 0.0 {
            return Err(Error::NonPositiveFeature {
                feature: "size",
                value: row[SIZE],
            });
        }
        if row[LEN] <= 0.0 {
            return Err(Error::NonPositiveFeature {
                feature: "len",
                value: row[LEN],
            });
        }
        stabilized.push([row[COH], row[SIZE].ln(), row[LEN].ln(), row[ENT]]);
    }

    let mut means = [0f64; 4];
    let mut stds = [0f64; 4];
    for f in 0..4 {
        let mean = stabilized.iter().map(|r| r[f]).sum::<f64>() / k as f64;
        means[f] = mean;
        stds[f] = if k >= 2 {
            let ss: f64 = stabilized.iter().map(|r| (r[f] - mean).powi(2)).sum();
            (ss / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
    }

    let standardized = stabilized
        .iter()
        .map(|row| {
            let mut out = [0f64; 4];
            for f in 0..4 {
                let scale = stds[f];
                out[f] = if scale > 1e-12 * means[f].abs().max(1.0) {
                    (row[f] - means[f]) / scale
                } else {
                    0.0
                };
            }
            out
        })
        .collect();

    Ok(ClusterFeatures {
        raw: raw.to_vec(),
        stabilized,
        standardized,
        feature_means: means,
        feature_stds: stds,
    })
}

/// Consensus weights from the first principal eigenvector of the
/// polarity-aligned covariance.
///
/// The penalty columns (size, len, ent) are negated so every column points
/// toward quality, the covariance is `X'X / (K-1)`, and the eigenvector comes
/// from power iteration. Near-tied top eigenvalues mean no consensus
/// direction exists; the weights then fall back to uniform.
pub fn spectral_weights(features: &ClusterFeatures) -> Result<ConsensusWeights> {
    let k = features.k();
    if k < 5 {
        return Err(Error::TooFewClustersForConsensus { k });
    }

    let aligned: Vec<[f64; 4]> = features
        .standardized
        .iter()
        .map(|r| [r[COH], -r[SIZE], -r[LEN], -r[ENT]])
        .collect();

    let mut cov = [[0f64; 4]; 4];
    for row in &aligned {
        for a in 0..4 {
            for b in 0..4 {
                cov[a][b] += row[a] * row[b];
            }
        }
    }
    let denom = (k - 1) as f64;
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= denom;
        }
    }

    let (v1, lambda1) = power_iteration(&cov, None)?;
    if lambda1 <= 1e-12 {
        log::warn!("aligned covariance is numerically zero; using uniform consensus weights");
        let mut out = ConsensusWeights::uniform();
        out.covariance = cov;
        return Ok(out);
    }
    let (_, lambda2) = power_iteration(&cov, Some((&v1, lambda1)))?;
    let lambda2 = lambda2.max(0.0);

    let degenerate = lambda2 > 0.0 && lambda1 / lambda2 < EIGEN_TIE_RATIO;

    let mut principal = v1;
    if principal[COH] < 0.0 {
        for v in principal.iter_mut() {
            *v = -*v;
        }
    }

    let w = if degenerate {
        log::warn!(
            "near-tied eigenvalues ({lambda1:.6} vs {lambda2:.6}); no consensus direction, using uniform weights"
        );
        [0.25; 4]
    } else {
        let l1: f64 = principal.iter().map(|v| v.abs()).sum();
        let mut w = principal;
        for v in w.iter_mut() {
            *v /= l1;
        }
        if w.iter().any(|&v| v < 0.0) {
            log::warn!("consensus weights have mixed signs: {w:?}");
        }
        w
    };

    Ok(ConsensusWeights {
        w,
        covariance: cov,
        principal,
        eigenvalue: lambda1,
        second_eigenvalue: lambda2,
        degenerate,
    })
}

/// `spectral_weights`, degrading to uniform weights (with a warning) instead
/// of failing when fewer than 5 clusters are available. Used inside sweeps.
pub fn spectral_weights_or_uniform(features: &ClusterFeatures) -> ConsensusWeights {
    match spectral_weights(features) {
        Ok(w) => w,
        Err(e) => {
            log::warn!("consensus degraded to uniform weights: {e}");
            ConsensusWeights::uniform()
        }
    }
}

/// Top eigenpair of a symmetric 4x4 matrix, optionally after deflating a
/// known eigenpair.
fn power_iteration(
    matrix: &[[f64; 4]; 4],
    deflate: Option<(&[f64; 4], f64)>,
) -> Result<([f64; 4], f64)> {
    let mut m = *matrix;
    if let Some((v, lambda)) = deflate {
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] -= lambda * v[a] * v[b];
            }
        }
    }

    let mut v = [1.0f64, 0.75, 0.5, 0.25];
    normalize4(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut next = [0f64; 4];
        for a in 0..4 {
            next[a] = (0..4).map(|b| m[a][b] * v[b]).sum();
        }
        let norm = normalize4(&mut next);
        if norm <= 1e-300 {
            // Matrix annihilates the iterate: eigenvalue is zero.
            return Ok((v, 0.0));
        }
        // Fix orientation before measuring the step.
        if dot4(&next, &v) < 0.0 {
            for x in next.iter_mut() {
                *x = -*x;
            }
        }
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        lambda = quadratic_form(&m, &v);
        if delta <= POWER_TOL {
            return Ok((v, lambda));
        }
    }
    // Near-tied eigenvalues rotate forever in the invariant plane; report the
    // current estimate rather than failing, the tie check downstream handles it.
    let gap = (quadratic_form(&m, &v) - lambda).abs();
    if gap > 1e-6 {
        return Err(Error::PowerIterationDiverged {
            iters: POWER_MAX_ITERS,
        });
    }
    Ok((v, lambda))
}

fn normalize4(v: &mut [f64; 4]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quadratic_form(m: &[[f64; 4]; 4], v: &[f64; 4]) -> f64 {
    let mut out = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            out += v[a] * m[a][b] * v[b];
        }
    }
    out
}

/// `s_k = w_coh * z_coh - (w_size * z_size + w_len * z_len + w_ent * z_ent)`
/// over the standardized features.
pub fn score(features: &ClusterFeatures, weights: &ConsensusWeights) -> GeometricScores {
    debug_assert!((weights.w.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-6);
    let s = features
        .standardized
        .iter()
        .map(|z| {
            weights.w[COH] * z[COH]
                - (weights.w[SIZE] * z[SIZE] + weights.w[LEN] * z[LEN] + weights.w[ENT] * z[ENT])
        })
        .collect();
    GeometricScores { s }
}

/// Full Stage-I scoring for a fitted model: extract, stabilize, weight, score.
/// Falls back to uniform weights when consensus is unavailable.
pub fn score_model(
    model: &ClusterModel,
    corpus: &Corpus,
) -> Result<(ClusterFeatures, ConsensusWeights, GeometricScores)> {
    let raw = extract_raw(model, corpus)?;
    let features = stabilize_standardize(&raw)?;
    let weights = spectral_weights_or_uniform(&features);
    let scores = score(&features, &weights);
    Ok((features, weights, scores))
}

/// Feature table as comma-separated text for report tooling.
pub fn write_features_csv<W: std::io::Write>(
    mut out: W,
    features: &ClusterFeatures,
    scores: &GeometricScores,
) -> std::io::Result<()> {
    writeln!(
        out,
        "cluster_id,coh,size,len,ent,coh_std,size_std,len_std,ent_std,score"
    )?;
    for (i, (raw, std)) in features.raw.iter().zip(&features.standardized).enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{},{}",
            raw[COH], raw[SIZE], raw[LEN], raw[ENT], std[COH], std[SIZE], std[LEN], std[ENT], scores.s[i]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MetaRecord;

    fn corpus_with(points: &[Vec<f32>], lengths: &[u64], langs: &[&str]) -> Corpus {
        let dim = points[0].len();
        let emb: Vec<f32> = points.iter().flatten().copied().collect();
        let recs = (0..points.len())
            .map(|i| MetaRecord {
                id: i as u64,
                token_length: lengths[i],
                language: langs[i].to_string(),
            })
            .collect();
        Corpus::from_parts(dim, emb, recs).unwrap()
    }

    fn model_single_cluster(corpus: &Corpus, centroid: Vec<f32>) -> ClusterModel {
        ClusterModel {
            dim: corpus.dim(),
            centroids: centroid,
            assignments: vec![0; corpus.len()],
            members: vec![(0..corpus.len() as u64).collect()],
            sizes: vec![corpus.len()],
            objective_trace: vec![],
        }
    }

    #[test]
    fn singleton_cluster_hits_cohesion_cap_and_zero_entropy() {
        let corpus = corpus_with(&[vec![1.0, 0.0]], &[5], &["rust"]);
        let model = model_single_cluster(&corpus, vec![1.0, 0.0]);
        let raw = extract_raw(&model, &corpus).unwrap();
        assert_eq!(raw[0][COH], 1e6);
        assert_eq!(raw[0][ENT], 0.0);
        assert_eq!(raw[0][SIZE], 1.0);
        assert_eq!(raw[0][LEN], 5.0);
    }

    #[test]
    fn even_two_language_split_gives_ln2_entropy() {
        let corpus = corpus_with(
            &[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
            &[5, 5, 5, 5],
            &["rust", "go", "rust", "go"],
        );
        let model = model_single_cluster(&corpus, vec![1.0, 0.0]);
        let raw = extract_raw(&model, &corpus).unwrap();
        assert!((raw[0][ENT] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cohesion_matches_brute_force_mean_distance() {
        // 50 points on a cone at cos = 0.9 around e1: mean distance 0.1.
        let mut points = Vec::new();
        let (c, s) = (0.9f32, (1.0f32 - 0.81).sqrt());
        for i in 0..50 {
            let angle = i as f32 * 0.12566371; // around the orthogonal circle
            points.push(vec![c, s * angle.cos(), s * angle.sin()]);
        }
        let lengths = vec![7u64; 50];
        let langs = vec!["rust"; 50];
        let corpus = corpus_with(&points, &lengths, &langs);
        let model = model_single_cluster(&corpus, vec![1.0, 0.0, 0.0]);
        let raw = extract_raw(&model, &corpus).unwrap();

        let mut brute = 0f64;
        for i in 0..50 {
            let cos: f32 = corpus.embedding(i)[0];
            brute += 1.0 - cos as f64;
        }
        brute /= 50.0;
        assert!((brute - 0.1).abs() < 1e-5);
        assert!((raw[0][COH] - 1.0 / (1e-6 + brute)).abs() < 1e-6);
    }

    #[test]
    fn identical_clusters_standardize_to_zero() {
        let raw = vec![[2.0, 10.0, 30.0, 0.5]; 6];
        let f = stabilize_standardize(&raw).unwrap();
        for row in &f.standardized {
            assert_eq!(row, &[0.0; 4]);
        }
    }

    #[test]
    fn log_stabilization_spaces_powers_evenly() {
        let raw = vec![
            [1.0, 10.0, 2.0, 0.0],
            [1.0, 100.0, 2.0, 0.0],
            [1.0, 1000.0, 2.0, 0.0],
        ];
        let f = stabilize_standardize(&raw).unwrap();
        let s: Vec<f64> = f.stabilized.iter().map(|r| r[SIZE]).collect();
        assert!((s[0] - 10f64.ln()).abs() < 1e-12);
        assert!((s[1] - 100f64.ln()).abs() < 1e-12);
        assert!((s[2] - 1000f64.ln()).abs() < 1e-12);
        assert!(((s[1] - s[0]) - (s[2] - s[1])).abs() < 1e-12);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let raw: Vec<[f64; 4]> = (0..40)
            .map(|i| {
                let x = i as f64;
                [1.0 + (x * 0.37).sin().abs(), 10.0 + x, 5.0 + (x * 1.7) % 13.0, (x * 0.11) % 1.0]
            })
            .collect();
        let f = stabilize_standardize(&raw).unwrap();
        for col in 0..4 {
            let vals: Vec<f64> = f.standardized.iter().map(|r| r[col]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std =
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
            assert!(mean.abs() < 1e-9, "col {col} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "col {col} std {std}");
        }
    }

    #[test]
    fn non_positive_length_is_rejected() {
        let raw = vec![[1.0, 3.0, 0.0, 0.0]];
        assert!(matches!(
            stabilize_standardize(&raw),
            Err(Error::NonPositiveFeature { feature: "len", .. })
        ));
    }

    fn single_factor_features(k: usize, noise: f64, seed: u64) -> ClusterFeatures {
        use rand::Rng;
        // Construct standardized features whose aligned covariance is close
        // to rank one with positive loadings.
        let loadings = [0.55, 0.30, 0.35, 0.65]; // coh, size, len, ent
        let mut rng = crate::seed::rng(seed, "factor");
        let mut standardized = Vec::with_capacity(k);
        for _ in 0..k {
            let f: f64 = rng.gen_range(-1.5..1.5);
            let mut row = [0f64; 4];
            for c in 0..4 {
                let aligned = loadings[c] * f + noise * rng.gen_range(-1.0..1.0);
                // un-align: penalties are stored with flipped sign
                row[c] = if c == COH { aligned } else { -aligned };
            }
            standardized.push(row);
        }
        ClusterFeatures {
            raw: vec![[1.0, 1.0, 1.0, 0.0]; k],
            stabilized: vec![[0.0; 4]; k],
            standardized,
            feature_means: [0.0; 4],
            feature_stds: [1.0; 4],
        }
    }

    #[test]
    fn single_factor_yields_all_positive_weights() {
        let f = single_factor_features(72, 0.01, 1);
        let w = spectral_weights(&f).unwrap();
        assert!(!w.degenerate);
        for v in w.w {
            assert!(v >= 0.05, "weights {:?}", w.w);
        }
        let l1: f64 = w.w.iter().map(|v| v.abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-9);
        // entropy and cohesion carry the largest loadings
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| w.w[b].partial_cmp(&w.w[a]).unwrap());
        assert_eq!(
            {
                let mut top = [order[0], order[1]];
                top.sort_unstable();
                top
            },
            [COH, ENT]
        );
    }

    #[test]
    fn eigen_residual_is_small() {
        let f = single_factor_features(72, 0.05, 3);
        let w = spectral_weights(&f).unwrap();
        let mut residual = 0f64;
        for a in 0..4 {
            let mv: f64 = (0..4).map(|b| w.covariance[a][b] * w.principal[b]).sum();
            residual += (mv - w.eigenvalue * w.principal[a]).powi(2);
        }
        let rel = residual.sqrt() / w.eigenvalue;
        assert!(rel <= 1e-8, "relative residual {rel}");
    }

    #[test]
    fn exactly_tied_eigenvalues_fall_back_to_uniform() {
        // Rows of [H; -H] for a 4x4 Hadamard matrix: X'X = 8I exactly.
        let h: [[f64; 4]; 4] = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let mut standardized: Vec<[f64; 4]> = Vec::new();
        for row in h {
            standardized.push(row);
            standardized.push(row.map(|v| -v));
        }
        // un-align penalties so the aligned matrix is the Hadamard stack
        for row in standardized.iter_mut() {
            for c in [SIZE, LEN, ENT] {
                row[c] = -row[c];
            }
        }
        let f = ClusterFeatures {
            raw: vec![[1.0, 1.0, 1.0, 0.0]; 8],
            stabilized: vec![[0.0; 4]; 8],
            standardized,
            feature_means: [0.0; 4],
            feature_stds: [1.0; 4],
        };
        let w = spectral_weights(&f).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.w, [0.25; 4]);
    }

    #[test]
    fn too_few_clusters_is_an_error() {
        let f = single_factor_features(4, 0.01, 0);
        assert!(matches!(
            spectral_weights(&f),
            Err(Error::TooFewClustersForConsensus { k: 4 })
        ));
    }

    #[test]
    fn score_matches_hand_evaluation() {
        let features = ClusterFeatures {
            raw: vec![[1.0, 1.0, 1.0, 0.0]; 2],
            stabilized: vec![[0.0; 4]; 2],
            standardized: vec![[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]],
            feature_means: [0.0; 4],
            feature_stds: [1.0; 4],
        };
        let uniform = ConsensusWeights {
            w: [0.25; 4],
            ..ConsensusWeights::uniform()
        };
        let s = score(&features, &uniform);
        assert!((s.s[0] - (-0.5)).abs() < 1e-12);
        assert_eq!(s.s[1], 0.0);

        let isolating = ConsensusWeights {
            w: [1.0, 0.0, 0.0, 0.0],
            ..ConsensusWeights::uniform()
        };
        let s = score(&features, &isolating);
        assert_eq!(s.s[0], 1.0);
    }

    #[test]
    fn shift_and_scale_invariance_of_standardized_scores() {
        let raw: Vec<[f64; 4]> = (0..12)
            .map(|i| {
                let x = i as f64;
                [1.0 + 0.1 * x, 10.0 + 3.0 * x, 20.0 + 2.0 * x, 0.05 * x]
            })
            .collect();
        let base = stabilize_standardize(&raw).unwrap();

        // shift the entropy column (a pass-through column) by a constant
        let shifted: Vec<[f64; 4]> = raw
            .iter()
            .map(|r| [r[COH], r[SIZE], r[LEN], r[ENT] + 5.0])
            .collect();
        let f2 = stabilize_standardize(&shifted).unwrap();
        for (a, b) in base.standardized.iter().zip(&f2.standardized) {
            for c in 0..4 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }

        // scale an extensive column by a positive constant: log turns it into a shift
        let scaled: Vec<[f64; 4]> = raw
            .iter()
            .map(|r| [r[COH], r[SIZE] * 7.5, r[LEN], r[ENT]])
            .collect();
        let f3 = stabilize_standardize(&scaled).unwrap();
        for (a, b) in base.standardized.iter().zip(&f3.standardized) {
            assert!((a[SIZE] - b[SIZE]).abs() < 1e-9);
        }

        let w = spectral_weights_or_uniform(&base);
        let s1 = score(&base, &w);
        let w2 = spectral_weights_or_uniform(&f2);
        let s2 = score(&f2, &w2);
        for (a, b) in s1.s.iter().zip(&s2.s) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn score_is_linear_in_standardized_matrix() {
        let f = single_factor_features(10, 0.2, 9);
        let w = ConsensusWeights {
            w: [0.4, 0.2, 0.2, 0.2],
            ..ConsensusWeights::uniform()
        };
        let s1 = score(&f, &w);
        let mut scaled = f.clone();
        for row in scaled.standardized.iter_mut() {
            for v in row.iter_mut() {
                *v *= 3.5;
            }
        }
        let s2 = score(&scaled, &w);
        for (a, b) in s1.s.iter().zip(&s2.s) {
            assert!((3.5 * a - b).abs() < 1e-9);
        }
    }
}
