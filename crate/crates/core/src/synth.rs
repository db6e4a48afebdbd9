//! Synthetic corpora with planted manifold structure.
//!
//! Components are quasi-orthogonal directions on the sphere with
//! von Mises–Fisher-like angular spread, log-normal token lengths, and a
//! configurable number of languages per component. Off-manifold outliers are
//! uniform on the sphere with lengths pinned at the 99th percentile, so both
//! the cohesion gate and the structural penalty have signal to detect them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MetaRecord};
use crate::error::{Error, Result};
use crate::seed;

/// 99th-percentile z-value of the standard normal.
const Z_99: f64 = 2.3263478740408408;
/// Pairwise |cos| ceiling for planted component directions.
const MAX_DIRECTION_COS: f64 = 0.3;

/// Specification of a planted synthetic corpus.
///
/// `concentration`, `length_log_mean`, and `length_log_std` hold one entry
/// per component; [`SynthSpec::uniform`] broadcasts scalars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dim: usize,
    pub k_true: usize,
    pub concentration: Vec<f64>,
    pub n: usize,
    pub outlier_fraction: f64,
    pub length_log_mean: Vec<f64>,
    pub length_log_std: Vec<f64>,
    /// 1 = every component uses a single language.
    pub languages_per_component: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Spec with the same concentration and length parameters for every
    /// component.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        dim: usize,
        k_true: usize,
        concentration: f64,
        n: usize,
        outlier_fraction: f64,
        length_log_mean: f64,
        length_log_std: f64,
        languages_per_component: usize,
        seed: u64,
    ) -> Self {
        SynthSpec {
            dim,
            k_true,
            concentration: vec![concentration; k_true],
            n,
            outlier_fraction,
            length_log_mean: vec![length_log_mean; k_true],
            length_log_std: vec![length_log_std; k_true],
            languages_per_component,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_true == 0 {
            return Err(Error::InvalidConfig("k_true must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if !(0.0..=0.5).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(format!(
                "outlier_fraction must be in [0, 0.5], got {}",
                self.outlier_fraction
            )));
        }
        for (name, v) in [
            ("concentration", &self.concentration),
            ("length_log_mean", &self.length_log_mean),
            ("length_log_std", &self.length_log_std),
        ] {
            if v.len() != self.k_true {
                return Err(Error::InvalidConfig(format!(
                    "{name} must have one entry per component ({} != {})",
                    v.len(),
                    self.k_true
                )));
            }
        }
        if self.languages_per_component == 0 {
            return Err(Error::InvalidConfig("languages_per_component must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-sample planted truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GroundTruth {
    pub id: u64,
    /// Planted component; `None` for off-manifold outliers.
    pub component: Option<usize>,
    pub is_outlier: bool,
}

/// Generate a corpus and its ground-truth labels.
pub fn generate(spec: &SynthSpec) -> Result<(Corpus, Vec<GroundTruth>)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, "synth");
    let dim = spec.dim;

    let directions = place_directions(spec.k_true, dim, &mut rng)?;

    let n_outliers = (spec.outlier_fraction * spec.n as f64).round() as usize;
    let n_clean = spec.n - n_outliers;

    let outlier_length = spec
        .length_log_mean
        .iter()
        .zip(&spec.length_log_std)
        .map(|(&m, &s)| (m + Z_99 * s).exp())
        .fold(f64::MIN, f64::max)
        .round()
        .max(1.0) as u64;

    let mut embeddings = Vec::with_capacity(spec.n * dim);
    let mut records = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    let mut next_id = 0u64;

    for c in 0..spec.k_true {
        let count = n_clean / spec.k_true + usize::from(c < n_clean % spec.k_true);
        let kappa = spec.concentration[c];
        let len_dist = Normal::new(spec.length_log_mean[c], spec.length_log_std[c])
            .map_err(|e| Error::InvalidConfig(format!("bad length parameters: {e}")))?;
        let mu = &directions[c * dim..(c + 1) * dim];
        for _ in 0..count {
            let x = vmf_like(mu, kappa, dim, &mut rng);
            embeddings.extend(x.iter().map(|&v| v as f32));
            let token_length = len_dist.sample(&mut rng).exp().round().max(1.0) as u64;
            let lang_slot = c * spec.languages_per_component + rng.gen_range(0..spec.languages_per_component);
            records.push(MetaRecord {
                id: next_id,
                token_length,
                language: format!("lang{lang_slot}"),
            });
            truth.push(GroundTruth {
                id: next_id,
                component: Some(c),
                is_outlier: false,
            });
            next_id += 1;
        }
    }

    let vocab_size = spec.k_true * spec.languages_per_component;
    for _ in 0..n_outliers {
        let x = random_unit(dim, &mut rng);
        embeddings.extend(x.iter().map(|&v| v as f32));
        records.push(MetaRecord {
            id: next_id,
            token_length: outlier_length,
            language: format!("lang{}", rng.gen_range(0..vocab_size)),
        });
        truth.push(GroundTruth {
            id: next_id,
            component: None,
            is_outlier: true,
        });
        next_id += 1;
    }

    let corpus = Corpus::from_parts(dim, embeddings, records)?;
    Ok((corpus, truth))
}

/// Write the corpus store plus the `ground_truth.json` sidecar.
pub fn export(dir: &Path, corpus: &Corpus, truth: &[GroundTruth]) -> Result<()> {
    corpus.export(dir)?;
    write_ground_truth(&dir.join("ground_truth.json"), truth)
}

#[derive(Serialize, Deserialize)]
struct TruthEntry {
    component: Option<usize>,
    is_outlier: bool,
}

pub fn write_ground_truth(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    let map: BTreeMap<u64, TruthEntry> = truth
        .iter()
        .map(|t| {
            (
                t.id,
                TruthEntry {
                    component: t.component,
                    is_outlier: t.is_outlier,
                },
            )
        })
        .collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, &map).map_err(|e| Error::Other(e.to_string()))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<u64, TruthEntry> =
        serde_json::from_reader(file).map_err(|e| Error::Other(e.to_string()))?;
    Ok(map
        .into_iter()
        .map(|(id, e)| GroundTruth {
            id,
            component: e.component,
            is_outlier: e.is_outlier,
        })
        .collect())
}

/// Rejection-sample `k` unit directions with pairwise |cos| below 0.3.
fn place_directions(k: usize, dim: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut directions: Vec<f64> = Vec::with_capacity(k * dim);
    let max_attempts = 10_000 * k.max(1);
    let mut attempts = 0;
    let mut placed = 0;
    while placed < k {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::DirectionPlacement { k, dim });
        }
        let cand = random_unit(dim, rng);
        let ok = (0..placed).all(|j| {
            let d = &directions[j * dim..(j + 1) * dim];
            let cos: f64 = d.iter().zip(&cand).map(|(a, b)| a * b).sum();
            cos.abs() < MAX_DIRECTION_COS
        });
        if ok {
            directions.extend_from_slice(&cand);
            placed += 1;
        }
    }
    Ok(directions)
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Perturbed direction with angular spread shrinking as `1/sqrt(kappa)`:
/// `normalize(sqrt(kappa) * mu + g)` with standard normal `g`.
fn vmf_like(mu: &[f64], kappa: f64, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let scale = kappa.max(0.0).sqrt();
    let mut v: Vec<f64> = (0..dim)
        .map(|j| scale * mu[j] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return mu.to_vec();
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterModel;

    /// Fraction of samples whose cluster's majority component matches their own.
    pub(crate) fn purity(assignments: &[u32], truth: &[GroundTruth], k: usize) -> f64 {
        let mut tables: Vec<std::collections::HashMap<usize, usize>> = vec![Default::default(); k];
        for (a, t) in assignments.iter().zip(truth) {
            if let Some(c) = t.component {
                *tables[*a as usize].entry(c).or_insert(0) += 1;
            }
        }
        let agree: usize = tables
            .iter()
            .map(|t| t.values().copied().max().unwrap_or(0))
            .sum();
        let total: usize = truth.iter().filter(|t| !t.is_outlier).count();
        agree as f64 / total as f64
    }

    #[test]
    fn high_concentration_keeps_members_near_direction() {
        let spec = SynthSpec::uniform(32, 3, 1e4, 300, 0.0, 4.0, 0.5, 1, 0);
        let (corpus, truth) = generate(&spec).unwrap();
        // regenerate directions the same way generate() does
        let mut rng = seed::rng(spec.seed, "synth");
        let dirs = place_directions(3, 32, &mut rng).unwrap();
        for (i, t) in truth.iter().enumerate() {
            let c = t.component.unwrap();
            let d = &dirs[c * 32..(c + 1) * 32];
            let cos: f64 = corpus
                .embedding(i)
                .iter()
                .zip(d)
                .map(|(&a, &b)| a as f64 * b)
                .sum();
            assert!(cos > 0.99, "sample {i} cos {cos}");
        }
    }

    #[test]
    fn zero_outlier_fraction_means_no_flags() {
        let spec = SynthSpec::uniform(8, 2, 50.0, 100, 0.0, 4.0, 0.5, 1, 1);
        let (_, truth) = generate(&spec).unwrap();
        assert!(truth.iter().all(|t| !t.is_outlier));
        assert_eq!(truth.len(), 100);
    }

    #[test]
    fn outlier_count_and_flags() {
        let spec = SynthSpec::uniform(8, 2, 50.0, 200, 0.15, 4.0, 0.5, 1, 1);
        let (corpus, truth) = generate(&spec).unwrap();
        assert_eq!(corpus.len(), 200);
        let outliers = truth.iter().filter(|t| t.is_outlier).count();
        assert_eq!(outliers, 30);
        for t in truth.iter().filter(|t| t.is_outlier) {
            assert!(t.component.is_none());
        }
    }

    #[test]
    fn planted_structure_is_recoverable() {
        let spec = SynthSpec::uniform(32, 12, 100.0, 6000, 0.0, 4.0, 0.5, 1, 0);
        let (corpus, truth) = generate(&spec).unwrap();
        let model = ClusterModel::fit(&corpus, 12, 10, 0).unwrap();
        let p = purity(&model.assignments, &truth, model.k());
        assert!(p >= 0.95, "purity {p}");
    }

    #[test]
    fn lengths_match_log_normal_parameters() {
        let spec = SynthSpec::uniform(8, 2, 50.0, 2000, 0.0, 5.0, 0.4, 1, 6);
        let (corpus, truth) = generate(&spec).unwrap();
        for c in 0..2 {
            let logs: Vec<f64> = truth
                .iter()
                .enumerate()
                .filter(|(_, t)| t.component == Some(c))
                .map(|(i, _)| (corpus.token_length(i) as f64).ln())
                .collect();
            let m = logs.iter().sum::<f64>() / logs.len() as f64;
            let se = 0.4 / (logs.len() as f64).sqrt();
            assert!((m - 5.0).abs() < 3.0 * se, "component {c}: mean {m}");
        }
        assert!((0..corpus.len()).all(|i| corpus.token_length(i) >= 1));
    }

    #[test]
    fn determinism_per_seed() {
        let spec = SynthSpec::uniform(8, 3, 30.0, 150, 0.1, 4.0, 0.5, 2, 5);
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(ta, tb);
        for i in 0..a.len() {
            assert_eq!(a.embedding(i), b.embedding(i));
            assert_eq!(a.token_length(i), b.token_length(i));
        }
    }

    #[test]
    fn ground_truth_sidecar_round_trips() {
        let spec = SynthSpec::uniform(4, 2, 30.0, 40, 0.1, 4.0, 0.5, 1, 8);
        let (corpus, truth) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export(dir.path(), &corpus, &truth).unwrap();
        let back = read_ground_truth(&dir.path().join("ground_truth.json")).unwrap();
        assert_eq!(back, truth);
        let corpus_back = Corpus::load_store(dir.path()).unwrap();
        assert_eq!(corpus_back.len(), corpus.len());
    }

    #[test]
    fn direction_placement_fails_in_tiny_dim() {
        let spec = SynthSpec::uniform(2, 8, 30.0, 100, 0.0, 4.0, 0.5, 1, 0);
        assert!(matches!(
            generate(&spec),
            Err(Error::DirectionPlacement { .. })
        ));
    }
}
