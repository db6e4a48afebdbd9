//! Exact small-instance Wasserstein-2 machinery.
//!
//! `w2_exact` solves the discrete transport program to optimality with a
//! successive-shortest-path min-cost flow (Dijkstra with node potentials),
//! capped at 500 points per side — this module is the oracle the rest of the
//! pipeline is judged against, so no approximate solver is allowed behind it.
//! On top of it sit the quantization/pruning decomposition, per-cluster
//! moments and pruning gains, and the quantization-error trend over K.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seed;

/// Hard cap for the exact solver.
pub const MAX_EXACT_POINTS: usize = 500;

const MASS_TOL: f64 = 1e-9;
/// Residual supply below this is considered shipped.
const SUPPLY_EPS: f64 = 1e-13;
/// Flow below this does not create a residual backward edge.
const FLOW_EPS: f64 = 1e-15;

/// A finitely supported probability measure.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    masses: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::InvalidMeasure("points not a multiple of dim".into()));
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::InvalidMeasure("measure needs at least one point".into()));
        }
        if masses.len() != n {
            return Err(Error::InvalidMeasure(format!(
                "{} masses for {} points",
                masses.len(),
                n
            )));
        }
        if masses.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(Error::InvalidMeasure("masses must be nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("masses sum to {total}, expected 1")));
        }
        Ok(EmpiricalMeasure { dim, points, masses })
    }

    /// Equal masses `1/n`.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        let masses = vec![1.0 / n as f64; n];
        Self::new(dim, points, masses)
    }

    /// Measure over the given corpus rows, masses proportional to sample
    /// weights.
    pub fn from_corpus(corpus: &Corpus, indices: &[usize]) -> Result<Self> {
        let dim = corpus.dim();
        let mut points = Vec::with_capacity(indices.len() * dim);
        let mut masses = Vec::with_capacity(indices.len());
        for &i in indices {
            points.extend(corpus.embedding(i).iter().map(|&v| v as f64));
            masses.push(corpus.weight(i));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("zero total weight".into()));
        }
        for m in masses.iter_mut() {
            *m /= total;
        }
        Self::new(dim, points, masses)
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact squared Wasserstein-2 distance between two small measures.
pub fn w2_exact(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    for m in [a, b] {
        if m.n() > MAX_EXACT_POINTS {
            return Err(Error::MeasureTooLarge {
                n: m.n(),
                cap: MAX_EXACT_POINTS,
            });
        }
    }

    let m = a.n();
    let n = b.n();
    let mut cost = vec![0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            cost[i * n + j] = sq_dist(a.point(i), b.point(j));
        }
    }
    let flow = transported_plan(&a.masses, &b.masses, &cost, n)?;
    Ok(flow
        .iter()
        .zip(&cost)
        .map(|(f, c)| f * c)
        .sum())
}

/// Min-cost transportation plan by successive shortest augmenting paths with
/// node potentials. Returns the row-major `m x n` flow matrix.
fn transported_plan(supply: &[f64], demand: &[f64], cost: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = supply.len();
    let v_count = m + n;
    let mut flow = vec![0f64; m * n];
    let mut residual_supply = supply.to_vec();
    let mut residual_demand = demand.to_vec();
    let mut potential = vec![0f64; v_count];

    let mut remaining: f64 = residual_supply.iter().sum();
    let max_augmentations = 100 * v_count + 1000;
    let mut augmentations = 0usize;

    let mut dist = vec![f64::INFINITY; v_count];
    let mut done = vec![false; v_count];
    let mut parent = vec![usize::MAX; v_count];

    while remaining > SUPPLY_EPS {
        augmentations += 1;
        if augmentations > max_augmentations {
            return Err(Error::TransportDiverged {
                iters: max_augmentations,
            });
        }

        dist.fill(f64::INFINITY);
        done.fill(false);
        parent.fill(usize::MAX);
        // Shortest paths must emanate from a single excess node per
        // augmentation for the potential update to preserve reduced-cost
        // optimality.
        let source = (0..m)
            .find(|&i| residual_supply[i] > SUPPLY_EPS)
            .expect("remaining supply implies an unsent source");
        dist[source] = 0.0;

        // Dense Dijkstra, stopping at the nearest sink with residual demand.
        let mut target = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for x in 0..v_count {
                if !done[x] && dist[x] < best {
                    best = dist[x];
                    u = x;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= m && residual_demand[u - m] > SUPPLY_EPS {
                target = u;
                break;
            }
            if u < m {
                let i = u;
                for j in 0..n {
                    let y = m + j;
                    if done[y] {
                        continue;
                    }
                    let rc = (cost[i * n + j] + potential[i] - potential[y]).max(0.0);
                    if dist[i] + rc < dist[y] {
                        dist[y] = dist[i] + rc;
                        parent[y] = i;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if done[i] || flow[i * n + j] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (-cost[i * n + j] + potential[u] - potential[i]).max(0.0);
                    if dist[u] + rc < dist[i] {
                        dist[i] = dist[u] + rc;
                        parent[i] = u;
                    }
                }
            }
        }

        if target == usize::MAX {
            // No residual demand reachable; masses were consistent, so this
            // is numerical starvation.
            return Err(Error::TransportDiverged {
                iters: augmentations,
            });
        }

        let dist_t = dist[target];
        for x in 0..v_count {
            potential[x] += dist[x].min(dist_t);
        }

        // Trace the path and find the bottleneck.
        let mut path = vec![target];
        let mut x = target;
        while parent[x] != usize::MAX {
            x = parent[x];
            path.push(x);
        }
        path.reverse();
        let source = path[0];
        let mut delta = residual_supply[source].min(residual_demand[target - m]);
        for w in path.windows(2) {
            if w[0] >= m {
                // backward edge sink -> source carries existing flow
                let (j, i) = (w[0] - m, w[1]);
                delta = delta.min(flow[i * n + j]);
            }
        }

        for w in path.windows(2) {
            if w[0] < m {
                let (i, j) = (w[0], w[1] - m);
                flow[i * n + j] += delta;
            } else {
                let (j, i) = (w[0] - m, w[1]);
                flow[i * n + j] = (flow[i * n + j] - delta).max(0.0);
            }
        }
        residual_supply[source] -= delta;
        residual_demand[target - m] -= delta;
        remaining -= delta;
    }

    Ok(flow)
}

/// Per-cluster mass and second moment about the centroid under the model's
/// nearest-centroid rule.
pub fn cluster_moments(model: &ClusterModel, measure: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    let k = model.k();
    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|j| model.centroid(j).iter().map(|&v| v as f64).collect())
        .collect();
    let mut alpha = vec![0f64; k];
    let mut second = vec![0f64; k];
    for i in 0..measure.n() {
        let p = measure.point(i);
        let (j, d2) = nearest_centroid(&centroids, p);
        alpha[j] += measure.mass(i);
        second[j] += measure.mass(i) * d2;
    }
    (0..k)
        .map(|j| {
            let sigma_sq = if alpha[j] > 0.0 { second[j] / alpha[j] } else { 0.0 };
            (alpha[j], sigma_sq)
        })
        .collect()
}

fn nearest_centroid(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTerm {
    pub alpha: f64,
    pub sigma_sq: f64,
    pub delta_gain: f64,
}

/// Two-term transport decomposition of the selection error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// Exact squared W2 between the full and selected measures.
    pub e_s: f64,
    /// Quantization term: mass-weighted squared distance to centroids.
    pub t1: f64,
    /// Pruning term: cluster-mass-weighted selected second moments.
    pub t2: f64,
    pub bound_2t1_2t2: f64,
    pub per_cluster: Vec<ClusterTerm>,
}

/// Compute the decomposition and verify `e_s <= 2*t1 + 2*t2`.
///
/// The selected measure must put mass in every cluster that carries full
/// mass, matching the cluster-wise mixture the bound is stated for.
pub fn decomposition(
    measure: &EmpiricalMeasure,
    model: &ClusterModel,
    selected: &EmpiricalMeasure,
) -> Result<DecompositionReport> {
    let k = model.k();
    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|j| model.centroid(j).iter().map(|&v| v as f64).collect())
        .collect();

    let moments = cluster_moments(model, measure);
    let t1: f64 = (0..measure.n())
        .map(|i| {
            let (_, d2) = nearest_centroid(&centroids, measure.point(i));
            measure.mass(i) * d2
        })
        .sum();

    let mut sel_mass = vec![0f64; k];
    let mut sel_second = vec![0f64; k];
    for i in 0..selected.n() {
        let p = selected.point(i);
        let (j, d2) = nearest_centroid(&centroids, p);
        sel_mass[j] += selected.mass(i);
        sel_second[j] += selected.mass(i) * d2;
    }

    let mut t2 = 0f64;
    let mut per_cluster = Vec::with_capacity(k);
    for j in 0..k {
        let (alpha, sigma_sq) = moments[j];
        if alpha > 0.0 && sel_mass[j] <= 0.0 {
            return Err(Error::UnrepresentedCluster {
                cluster: j,
                mass: alpha,
            });
        }
        let sel_moment = if sel_mass[j] > 0.0 {
            sel_second[j] / sel_mass[j]
        } else {
            0.0
        };
        t2 += alpha * sel_moment;
        per_cluster.push(ClusterTerm {
            alpha,
            sigma_sq,
            delta_gain: if alpha > 0.0 { sigma_sq - sel_moment } else { 0.0 },
        });
    }

    let e_s = w2_exact(measure, selected)?;
    let bound = 2.0 * t1 + 2.0 * t2;
    if e_s > bound + 1e-9 {
        return Err(Error::BoundViolated { e_s, bound });
    }

    Ok(DecompositionReport {
        e_s,
        t1,
        t2,
        bound_2t1_2t2: bound,
        per_cluster,
    })
}

impl DecompositionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Quantization term `t1(K)` for Euclidean k-means on uniform data in
/// `[0,1]^dim`, one value per requested K.
pub fn zador_trend(dim: usize, k_list: &[usize], n: usize, seed_value: u64) -> Result<Vec<(usize, f64)>> {
    for &k in k_list {
        if k == 0 || k > n / 10 {
            return Err(Error::InvalidConfig(format!(
                "k = {k} out of range for n = {n} (need 1 <= k <= n/10)"
            )));
        }
    }
    let mut rng = seed::rng(seed_value, "zador");
    let points: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    k_list
        .iter()
        .map(|&k| {
            let centroids = euclidean_kmeans(
                &points,
                dim,
                k,
                30,
                seed::derive(seed_value, &format!("zador-k{k}")),
            );
            let cvecs: Vec<Vec<f64>> = centroids.chunks_exact(dim).map(|c| c.to_vec()).collect();
            let t1: f64 = points
                .chunks_exact(dim)
                .map(|p| nearest_centroid(&cvecs, p).1)
                .sum::<f64>()
                / n as f64;
            Ok((k, t1))
        })
        .collect()
}

/// Plain Lloyd's k-means with k-means++ seeding, used only for the
/// quantization trend (quantization error is Euclidean, not spherical).
fn euclidean_kmeans(points: &[f64], dim: usize, k: usize, iters: usize, seed_value: u64) -> Vec<f64> {
    let n = points.len() / dim;
    let mut rng = seed::rng(seed_value, "euclid-kmeans");
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    // ++ seeding
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= r {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(pick));
        let c = centroids[start..].to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(point(i), &c));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        let cvecs: Vec<Vec<f64>> = centroids.chunks_exact(dim).map(|c| c.to_vec()).collect();
        let mut dists = vec![0f64; n];
        for i in 0..n {
            let (j, d) = nearest_centroid(&cvecs, point(i));
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
            dists[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignment[i];
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        let mut far_order: Option<Vec<usize>> = None;
        let mut cursor = 0;
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *c = s / counts[j] as f64;
                }
            } else {
                let order = far_order.get_or_insert_with(|| {
                    let mut o: Vec<usize> = (0..n).collect();
                    o.sort_by(|&a, &b| dists[b].partial_cmp(&dists[a]).unwrap());
                    o
                });
                if cursor < order.len() {
                    centroids[j * dim..(j + 1) * dim].copy_from_slice(point(order[cursor]));
                    cursor += 1;
                }
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure_1d(xs: &[f64], masses: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(1, xs.to_vec(), masses.to_vec()).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let m = measure_1d(&[0.0, 1.0, 3.0], &[0.2, 0.3, 0.5]);
        let d = w2_exact(&m, &m).unwrap();
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn single_pair_transport() {
        let a = measure_1d(&[0.0], &[1.0]);
        let b = measure_1d(&[2.0], &[1.0]);
        assert!((w2_exact(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_quantile_shift() {
        // both mass 0.5 pairs shifted right by 1: W2^2 = 1
        let a = measure_1d(&[0.0, 1.0], &[0.5, 0.5]);
        let b = measure_1d(&[1.0, 2.0], &[0.5, 0.5]);
        assert!((w2_exact(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_mass_transport() {
        let a = measure_1d(&[0.0], &[1.0]);
        let b = measure_1d(&[0.0, 2.0], &[0.5, 0.5]);
        assert!((w2_exact(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetry() {
        let a = measure_1d(&[0.0, 0.7, 2.0], &[0.3, 0.4, 0.3]);
        let b = measure_1d(&[0.5, 1.5], &[0.6, 0.4]);
        let ab = w2_exact(&a, &b).unwrap();
        let ba = w2_exact(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-10);
    }

    #[test]
    fn unequal_masses_match_hand_lp() {
        // supply (0.7 at 0, 0.3 at 10), demand (0.2 at 0, 0.8 at 1)
        // optimal: 0.2 of the left mass stays (cost 0), 0.5 moves to 1
        // (cost 0.5), 0.3 moves from 10 to 1 (cost 0.3 * 81)
        let a = measure_1d(&[0.0, 10.0], &[0.7, 0.3]);
        let b = measure_1d(&[0.0, 1.0], &[0.2, 0.8]);
        let expected = 0.5 * 1.0 + 0.3 * 81.0;
        assert!((w2_exact(&a, &b).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn oversized_measure_is_rejected() {
        let n = MAX_EXACT_POINTS + 1;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let masses = vec![1.0 / n as f64; n];
        // build without the constructor cap by summing to 1
        let m = EmpiricalMeasure::new(1, xs, masses).unwrap();
        let small = measure_1d(&[0.0], &[1.0]);
        assert!(matches!(
            w2_exact(&m, &small),
            Err(Error::MeasureTooLarge { .. })
        ));
    }

    #[test]
    fn moments_single_cluster_is_total_second_moment() {
        let model = ClusterModel {
            dim: 2,
            centroids: vec![1.0, 0.0],
            assignments: vec![],
            members: vec![vec![]],
            sizes: vec![1],
            objective_trace: vec![],
        };
        let m = EmpiricalMeasure::new(
            2,
            vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0],
            vec![0.5, 0.25, 0.25],
        )
        .unwrap();
        let moments = cluster_moments(&model, &m);
        assert_eq!(moments.len(), 1);
        assert!((moments[0].0 - 1.0).abs() < 1e-12);
        let expected = 0.5 * 0.0 + 0.25 * 2.0 + 0.25 * 4.0;
        assert!((moments[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn moments_at_centroids_are_zero() {
        let model = ClusterModel {
            dim: 2,
            centroids: vec![1.0, 0.0, 0.0, 1.0],
            assignments: vec![],
            members: vec![vec![], vec![]],
            sizes: vec![1, 1],
            objective_trace: vec![],
        };
        let m = EmpiricalMeasure::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.5, 0.5]).unwrap();
        for (alpha, sigma) in cluster_moments(&model, &m) {
            assert!((alpha - 0.5).abs() < 1e-12);
            assert!(sigma.abs() < 1e-12);
        }
    }

    #[test]
    fn moments_match_brute_force_on_planted_clusters() {
        let model = ClusterModel {
            dim: 1,
            centroids: vec![0.0, 10.0],
            assignments: vec![],
            members: vec![vec![], vec![]],
            sizes: vec![1, 1],
            objective_trace: vec![],
        };
        let xs = vec![-1.0, 1.0, 9.0, 11.0, 0.5];
        let ws = vec![0.1, 0.2, 0.3, 0.3, 0.1];
        let m = EmpiricalMeasure::new(1, xs.clone(), ws.clone()).unwrap();
        let moments = cluster_moments(&model, &m);
        // brute force
        let mut alpha = [0f64; 2];
        let mut sec = [0f64; 2];
        for (x, w) in xs.iter().zip(&ws) {
            let j = usize::from((x - 0.0).abs() > (x - 10.0).abs());
            alpha[j] += w;
            sec[j] += w * (x - [0.0, 10.0][j]).powi(2);
        }
        for j in 0..2 {
            assert!((moments[j].0 - alpha[j]).abs() < 1e-12);
            assert!((moments[j].1 - sec[j] / alpha[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn decomposition_collapses_to_zero_at_centroids() {
        let model = ClusterModel {
            dim: 2,
            centroids: vec![1.0, 0.0, 0.0, 1.0],
            assignments: vec![],
            members: vec![vec![], vec![]],
            sizes: vec![1, 1],
            objective_trace: vec![],
        };
        let m = EmpiricalMeasure::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let report = decomposition(&m, &model, &m).unwrap();
        assert!(report.e_s.abs() < 1e-12);
        assert!(report.t1.abs() < 1e-12);
        assert!(report.t2.abs() < 1e-12);
        for c in &report.per_cluster {
            assert!(c.delta_gain.abs() < 1e-12);
        }
    }

    #[test]
    fn delta_gain_zero_when_selection_is_full_measure() {
        let mut rng = seed::rng(4, "dg");
        let n = 30;
        let points: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = EmpiricalMeasure::uniform(2, points).unwrap();
        let model = ClusterModel {
            dim: 2,
            centroids: vec![0.5, 0.5, -0.5, -0.5],
            assignments: vec![],
            members: vec![vec![], vec![]],
            sizes: vec![1, 1],
            objective_trace: vec![],
        };
        let report = decomposition(&m, &model, &m).unwrap();
        for c in &report.per_cluster {
            assert!(c.delta_gain.abs() < 1e-12, "delta_gain {}", c.delta_gain);
        }
        assert!(report.e_s <= report.bound_2t1_2t2 + 1e-9);
    }

    #[test]
    fn farthest_half_pruning_has_positive_gain() {
        let mut rng = seed::rng(9, "prune");
        let n = 40;
        let points: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = EmpiricalMeasure::uniform(2, points.clone()).unwrap();
        let model = ClusterModel {
            dim: 2,
            centroids: vec![0.6, 0.6, -0.6, -0.6],
            assignments: vec![],
            members: vec![vec![], vec![]],
            sizes: vec![1, 1],
            objective_trace: vec![],
        };
        // keep the closest half of each cluster, reweighted to cluster mass
        let centroids = [[0.6, 0.6], [-0.6, -0.6]];
        let mut per_cluster: Vec<Vec<(f64, usize)>> = vec![vec![], vec![]];
        for i in 0..n {
            let p = &points[i * 2..(i + 1) * 2];
            let d0 = sq_dist(p, &centroids[0]);
            let d1 = sq_dist(p, &centroids[1]);
            let j = usize::from(d1 < d0);
            per_cluster[j].push((d0.min(d1), i));
        }
        let moments = cluster_moments(&model, &m);
        let mut sel_points = Vec::new();
        let mut sel_masses = Vec::new();
        for (j, cluster) in per_cluster.iter_mut().enumerate() {
            cluster.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let keep = (cluster.len() + 1) / 2;
            let alpha = moments[j].0;
            for &(_, i) in cluster.iter().take(keep) {
                sel_points.extend_from_slice(&points[i * 2..(i + 1) * 2]);
                sel_masses.push(alpha / keep as f64);
            }
        }
        let selected = EmpiricalMeasure::new(2, sel_points, sel_masses).unwrap();
        let report = decomposition(&m, &model, &selected).unwrap();
        for c in &report.per_cluster {
            assert!(c.delta_gain >= -1e-9, "delta_gain {}", c.delta_gain);
        }
        assert!(report.e_s <= report.bound_2t1_2t2 + 1e-9);
    }

    #[test]
    fn unrepresented_cluster_is_rejected() {
        let model = ClusterModel {
            dim: 1,
            centroids: vec![0.0, 10.0],
            assignments: vec![],
            members: vec![vec![], vec![]],
            sizes: vec![1, 1],
            objective_trace: vec![],
        };
        let m = EmpiricalMeasure::new(1, vec![0.0, 10.0], vec![0.5, 0.5]).unwrap();
        let sel = EmpiricalMeasure::new(1, vec![0.1], vec![1.0]).unwrap();
        assert!(matches!(
            decomposition(&m, &model, &sel),
            Err(Error::UnrepresentedCluster { cluster: 1, .. })
        ));
    }

    #[test]
    fn quantization_error_decreases_in_k() {
        let trend = zador_trend(2, &[2, 4, 8, 16, 32], 1500, 0).unwrap();
        for w in trend.windows(2) {
            assert!(
                w[1].1 < w[0].1,
                "t1 did not decrease: {:?} -> {:?}",
                w[0],
                w[1]
            );
        }
    }
}
