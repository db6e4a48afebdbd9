//! Stage-II micro-mining.
//!
//! Each macro cluster is split into `sqrt(size)` sub-clusters. A sub-cluster
//! earns a semantic score from probe ratings, a structural penalty for
//! exceeding its parent's length/entropy consensus, and a cohesion gate
//! comparing its compactness against the parent. These combine with the
//! Stage-I budget into one sampling weight per sub-cluster:
//!
//! `W(S_j) ∝ r_k * P * exp(-lambda * L_struct) * (beta + epsilon)`
//!
//! normalized globally over all sub-clusters, after which the token budget
//! is realized by quota draws.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetVector;
use crate::cluster::ClusterModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{self, COH, ENT, LEN};
use crate::scorer::{fetch_ratings, ProbeRating, ProbeRequest, Scorer};
use crate::seed;

/// How the four probe rating dimensions aggregate into one number per probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Min,
    Weighted([f64; 4]),
}

/// Which statistics anchor the structural penalty and cohesion gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatReference {
    /// Per-parent consensus over the parent's sub-clusters.
    Parent,
    /// Corpus-wide statistics over all sub-clusters.
    Global,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinerConfig {
    /// Structural penalty strength.
    pub lambda: f64,
    /// Exploration floor added to the gate.
    pub epsilon: f64,
    /// Probes per sub-cluster.
    pub probe_size: usize,
    /// Per-feature penalty contribution when the reference sigma is zero but
    /// the deviation is not.
    pub sigma_zero_cap: f64,
    pub aggregation: Aggregation,
    pub reference: StatReference,
    /// Scorer calls in flight.
    pub scorer_parallelism: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            lambda: 0.5,
            epsilon: 0.01,
            probe_size: 8,
            sigma_zero_cap: 16.0,
            aggregation: Aggregation::Mean,
            reference: StatReference::Parent,
            scorer_parallelism: 8,
        }
    }
}

/// One sub-cluster with its scores and final sampling weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubClusterRecord {
    pub parent_id: usize,
    pub sub_id: usize,
    pub member_ids: Vec<u64>,
    pub centroid: Vec<f32>,
    /// Raw (coh, size, len, ent) of the sub-cluster.
    pub raw_features: [f64; 4],
    /// Aggregated probe rating in [0, 5]; imputed from the parent median
    /// when `scored` is false.
    pub semantic_score: f64,
    pub scored: bool,
    pub struct_penalty: f64,
    pub cohesion_gate: f64,
    pub weight_unnormalized: f64,
    pub weight: f64,
}

/// Realized sampling outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub records: Vec<SubClusterRecord>,
    pub sampled_ids: Vec<u64>,
    pub token_budget: u64,
    pub realized_tokens: u64,
}

/// Rectified squared standardized deviation over (length, entropy):
/// `sum_f [ (z_f - mu_f) / sigma_f ]_+^2`.
///
/// A zero reference sigma contributes 0 when the deviation is non-positive
/// and `sigma_zero_cap` otherwise.
pub fn structural_penalty(
    sub_means: [f64; 2],
    parent_stats: [(f64, f64); 2],
    sigma_zero_cap: f64,
) -> f64 {
    sub_means
        .iter()
        .zip(parent_stats)
        .map(|(&z, (mu, sigma))| {
            let dev = z - mu;
            if dev <= 0.0 {
                0.0
            } else if sigma > 0.0 {
                (dev / sigma).powi(2)
            } else {
                sigma_zero_cap
            }
        })
        .sum()
}

/// Logistic gate on the raw cohesion difference, in (0, 1).
pub fn cohesion_gate(sub_coh: f64, parent_coh: f64) -> f64 {
    let x = sub_coh - parent_coh;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The `min(m, |S|)` member ids closest (by cosine) to the sub-cluster
/// centroid; ties break toward the lower id.
pub fn probe_set(record: &SubClusterRecord, corpus: &Corpus, m: usize) -> Result<Vec<u64>> {
    let mut scored: Vec<(f32, u64)> = record
        .member_ids
        .iter()
        .map(|&id| {
            let i = corpus
                .index_of(id)
                .ok_or_else(|| Error::Other(format!("member id {id} not in corpus")))?;
            let cos: f32 = corpus
                .embedding(i)
                .iter()
                .zip(&record.centroid)
                .map(|(a, b)| a * b)
                .sum();
            Ok((cos, id))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(m.max(1)).map(|(_, id)| id).collect())
}

/// Aggregate probe ratings into a semantic score in [1, 5]; `None` when no
/// ratings survived.
pub fn semantic_score(ratings: &[ProbeRating], aggregation: Aggregation) -> Option<f64> {
    if ratings.is_empty() {
        return None;
    }
    let per_probe: Vec<f64> = ratings
        .iter()
        .map(|r| match aggregation {
            Aggregation::Mean => r.mean(),
            Aggregation::Min => r.min(),
            Aggregation::Weighted(w) => {
                let total: f64 = w.iter().sum();
                (w[0] * r.code_quality as f64
                    + w[1] * r.algorithm_and_engineering as f64
                    + w[2] * r.training_suitability as f64
                    + w[3] * r.knowledge_score as f64)
                    / total
            }
        })
        .collect();
    Some(per_probe.iter().sum::<f64>() / per_probe.len() as f64)
}

/// Fill in `weight_unnormalized` and `weight` for every record:
/// `W ∝ r_k * P * exp(-lambda * L) * (beta + epsilon)`, normalized over all
/// records.
pub fn hierarchical_weight(
    budget: &BudgetVector,
    records: &mut [SubClusterRecord],
    lambda: f64,
    epsilon: f64,
) -> Result<()> {
    if lambda < 0.0 || epsilon <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be >= 0 and epsilon > 0, got lambda={lambda} epsilon={epsilon}"
        )));
    }
    for rec in records.iter_mut() {
        let r = *budget
            .r
            .get(rec.parent_id)
            .ok_or(Error::UnknownCluster {
                id: rec.parent_id,
                k: budget.r.len(),
            })?;
        rec.weight_unnormalized = r
            * rec.semantic_score
            * (-lambda * rec.struct_penalty).exp()
            * (rec.cohesion_gate + epsilon);
    }
    let total: f64 = records.iter().map(|r| r.weight_unnormalized).sum();
    if !(total > 0.0) {
        return Err(Error::Other(
            "all sub-cluster weights are zero; cannot normalize".into(),
        ));
    }
    for rec in records.iter_mut() {
        rec.weight = rec.weight_unnormalized / total;
    }
    Ok(())
}

/// Run the full Stage-II pass over a fitted macro model.
///
/// `texts` supplies probe content for remote scorers; id-keyed scorers can
/// run without it.
pub fn mine(
    corpus: &Corpus,
    model: &ClusterModel,
    budget: &BudgetVector,
    scorer: &dyn Scorer,
    texts: Option<&HashMap<u64, String>>,
    cfg: &MinerConfig,
    seed_value: u64,
) -> Result<Vec<SubClusterRecord>> {
    if budget.r.len() != model.k() {
        return Err(Error::LengthMismatch {
            left: budget.r.len(),
            right: model.k(),
        });
    }

    // Sub-cluster every parent and extract raw features per sub-cluster.
    let children: Vec<(usize, ClusterModel, Vec<[f64; 4]>)> = (0..model.k())
        .into_par_iter()
        .map(|k| {
            let child = model.subcluster(k, corpus, seed::derive(seed_value, &format!("subcluster-{k}")))?;
            let raw = features::extract_raw(&child, corpus)?;
            Ok((k, child, raw))
        })
        .collect::<Result<_>>()?;

    let parent_raw = features::extract_raw(model, corpus)?;
    let global_cohesion = corpus_cohesion(corpus);

    // Penalty reference: length moments come from the parent's samples
    // (sub-cluster means would let a contaminated tail inflate sigma and
    // mask itself); entropy has no per-sample notion, so its moments come
    // from the sub-cluster entropies.
    let global_len = sample_length_stats(corpus, 0..corpus.len());
    let global_ent = column_stats(children.iter().flat_map(|(_, _, raw)| raw.iter()), ENT);
    let global_stats = [global_len, global_ent];

    let mut records: Vec<SubClusterRecord> = Vec::new();
    for (k, child, raw) in &children {
        let stats = match cfg.reference {
            StatReference::Parent => {
                let member_rows = model.members[*k]
                    .iter()
                    .map(|id| corpus.index_of(*id).expect("member id in corpus"))
                    .collect::<Vec<_>>();
                [
                    sample_length_stats(corpus, member_rows.iter().copied()),
                    column_stats(raw.iter(), ENT),
                ]
            }
            StatReference::Global => global_stats,
        };
        let parent_coh = match cfg.reference {
            StatReference::Parent => parent_raw[*k][COH],
            StatReference::Global => global_cohesion,
        };
        for (j, sub_raw) in raw.iter().enumerate() {
            let penalty = structural_penalty(
                [sub_raw[LEN], sub_raw[ENT]],
                stats,
                cfg.sigma_zero_cap,
            );
            let gate = cohesion_gate(sub_raw[COH], parent_coh);
            records.push(SubClusterRecord {
                parent_id: *k,
                sub_id: j,
                member_ids: child.members[j].clone(),
                centroid: child.centroid(j).to_vec(),
                raw_features: *sub_raw,
                semantic_score: 0.0,
                scored: false,
                struct_penalty: penalty,
                cohesion_gate: gate,
                weight_unnormalized: 0.0,
                weight: 0.0,
            });
        }
    }

    // Probe extraction and scoring, one flat batch over all sub-clusters.
    let mut probe_spans = Vec::with_capacity(records.len());
    let mut requests: Vec<ProbeRequest> = Vec::new();
    for rec in &records {
        let ids = probe_set(rec, corpus, cfg.probe_size)?;
        let start = requests.len();
        for id in ids {
            requests.push(ProbeRequest {
                id,
                content: texts.and_then(|t| t.get(&id).cloned()),
            });
        }
        probe_spans.push(start..requests.len());
    }
    let ratings = fetch_ratings(&requests, scorer, cfg.scorer_parallelism)?;

    for (rec, span) in records.iter_mut().zip(&probe_spans) {
        let got: Vec<ProbeRating> = ratings[span.clone()].iter().flatten().copied().collect();
        if let Some(p) = semantic_score(&got, cfg.aggregation) {
            rec.semantic_score = p;
            rec.scored = true;
        }
    }
    impute_unscored(&mut records);

    hierarchical_weight(budget, &mut records, cfg.lambda, cfg.epsilon)?;
    Ok(records)
}

/// Flat variant: every cluster of `model` is one selection unit, scored with
/// the same micro-mining metrics against corpus-global statistics. Used by
/// the flat ablation modes, where there is no parent level.
pub fn mine_flat(
    corpus: &Corpus,
    model: &ClusterModel,
    budget: &BudgetVector,
    scorer: &dyn Scorer,
    texts: Option<&HashMap<u64, String>>,
    cfg: &MinerConfig,
    seed_value: u64,
) -> Result<Vec<SubClusterRecord>> {
    let _ = seed_value;
    if budget.r.len() != model.k() {
        return Err(Error::LengthMismatch {
            left: budget.r.len(),
            right: model.k(),
        });
    }
    let raw = features::extract_raw(model, corpus)?;
    let stats = [
        sample_length_stats(corpus, 0..corpus.len()),
        column_stats(raw.iter(), ENT),
    ];
    let global_coh = corpus_cohesion(corpus);

    let mut records: Vec<SubClusterRecord> = raw
        .iter()
        .enumerate()
        .map(|(j, cluster_raw)| SubClusterRecord {
            parent_id: j,
            sub_id: 0,
            member_ids: model.members[j].clone(),
            centroid: model.centroid(j).to_vec(),
            raw_features: *cluster_raw,
            semantic_score: 0.0,
            scored: false,
            struct_penalty: structural_penalty(
                [cluster_raw[LEN], cluster_raw[ENT]],
                stats,
                cfg.sigma_zero_cap,
            ),
            cohesion_gate: cohesion_gate(cluster_raw[COH], global_coh),
            weight_unnormalized: 0.0,
            weight: 0.0,
        })
        .collect();

    let mut probe_spans = Vec::with_capacity(records.len());
    let mut requests = Vec::new();
    for rec in &records {
        let ids = probe_set(rec, corpus, cfg.probe_size)?;
        let start = requests.len();
        for id in ids {
            requests.push(ProbeRequest {
                id,
                content: texts.and_then(|t| t.get(&id).cloned()),
            });
        }
        probe_spans.push(start..requests.len());
    }
    let ratings = fetch_ratings(&requests, scorer, cfg.scorer_parallelism)?;
    for (rec, span) in records.iter_mut().zip(&probe_spans) {
        let got: Vec<ProbeRating> = ratings[span.clone()].iter().flatten().copied().collect();
        if let Some(p) = semantic_score(&got, cfg.aggregation) {
            rec.semantic_score = p;
            rec.scored = true;
        }
    }
    impute_unscored(&mut records);
    hierarchical_weight(budget, &mut records, cfg.lambda, cfg.epsilon)?;
    Ok(records)
}

/// One record per cluster with the weight fixed externally; no scoring, no
/// penalty. Used by the random-within-cluster ablation modes.
pub fn records_from_clusters(model: &ClusterModel, weights: &[f64]) -> Result<Vec<SubClusterRecord>> {
    if weights.len() != model.k() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: model.k(),
        });
    }
    Ok((0..model.k())
        .map(|j| SubClusterRecord {
            parent_id: j,
            sub_id: 0,
            member_ids: model.members[j].clone(),
            centroid: model.centroid(j).to_vec(),
            raw_features: [0.0, model.sizes[j] as f64, 0.0, 0.0],
            semantic_score: 0.0,
            scored: false,
            struct_penalty: 0.0,
            cohesion_gate: 0.5,
            weight_unnormalized: weights[j],
            weight: weights[j],
        })
        .collect())
}

/// Unscored sub-clusters inherit the median score of their parent's scored
/// sub-clusters (global median, then midpoint 3.0, as fallbacks).
fn impute_unscored(records: &mut [SubClusterRecord]) {
    let mut by_parent: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut all: Vec<f64> = Vec::new();
    for rec in records.iter() {
        if rec.scored {
            by_parent.entry(rec.parent_id).or_default().push(rec.semantic_score);
            all.push(rec.semantic_score);
        }
    }
    let global = median(&mut all);
    for rec in records.iter_mut() {
        if !rec.scored {
            let p = by_parent
                .get_mut(&rec.parent_id)
                .and_then(|v| median(v))
                .or(global)
                .unwrap_or(3.0);
            log::warn!(
                "sub-cluster ({}, {}) unscored; imputing median semantic score {p}",
                rec.parent_id,
                rec.sub_id
            );
            rec.semantic_score = p;
        }
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Mean and population sigma of one feature column.
fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64; 4]>, f: usize) -> (f64, f64) {
    let vals: Vec<f64> = rows.map(|r| r[f]).collect();
    let n = vals.len() as f64;
    let mu = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Mean and population sigma of token length over the given corpus rows.
fn sample_length_stats(corpus: &Corpus, rows: impl Iterator<Item = usize>) -> (f64, f64) {
    let lens: Vec<f64> = rows.map(|i| corpus.token_length(i) as f64).collect();
    let n = lens.len() as f64;
    let mu = lens.iter().sum::<f64>() / n;
    let var = lens.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Cohesion of the whole corpus treated as a single cluster.
fn corpus_cohesion(corpus: &Corpus) -> f64 {
    let dim = corpus.dim();
    let mut mean = vec![0f64; dim];
    for i in 0..corpus.len() {
        for (m, &v) in mean.iter_mut().zip(corpus.embedding(i)) {
            *m += v as f64;
        }
    }
    let norm: f64 = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return 1e6;
    }
    let centroid: Vec<f32> = mean.iter().map(|v| (v / norm) as f32).collect();
    let mut dist_sum = 0f64;
    for i in 0..corpus.len() {
        let cos: f32 = corpus
            .embedding(i)
            .iter()
            .zip(&centroid)
            .map(|(a, b)| a * b)
            .sum();
        dist_sum += (1.0 - cos as f64).max(0.0);
    }
    let mean_dist = dist_sum / corpus.len() as f64;
    (1.0 / (1e-6 + mean_dist)).min(1e6)
}

/// Realize the token budget: each record gets a largest-remainder token
/// quota `token_budget * W`, filled by uniform draws without replacement
/// until the quota is met. One redistribution round re-spreads any shortfall
/// from exhausted records across the rest, proportionally to weight.
pub fn realize_sample(
    records: &[SubClusterRecord],
    corpus: &Corpus,
    token_budget: u64,
    seed_value: u64,
) -> Result<SelectionPlan> {
    let total_tokens = corpus.total_tokens();
    if total_tokens < token_budget {
        return Err(Error::BudgetExceedsCorpus {
            budget: token_budget,
            available: total_tokens,
        });
    }
    let max_len = (0..corpus.len()).map(|i| corpus.token_length(i)).max().unwrap_or(0);
    if token_budget < max_len {
        return Err(Error::BudgetBelowMaxSample {
            budget: token_budget,
            max_len,
        });
    }

    let weights: Vec<f64> = records.iter().map(|r| r.weight).collect();
    let mut quotas = largest_remainder_quotas(token_budget, &weights);

    struct DrawState {
        order: Vec<u64>,
        cursor: usize,
        realized: u64,
    }

    let mut states: Vec<DrawState> = records
        .iter()
        .map(|rec| {
            let mut order = rec.member_ids.clone();
            let mut rng = seed::rng(
                seed_value,
                &format!("draw-p{}-s{}", rec.parent_id, rec.sub_id),
            );
            order.shuffle(&mut rng);
            DrawState {
                order,
                cursor: 0,
                realized: 0,
            }
        })
        .collect();

    let draw = |state: &mut DrawState, quota: u64, sampled: &mut Vec<u64>| {
        while state.realized < quota && state.cursor < state.order.len() {
            let id = state.order[state.cursor];
            let i = corpus.index_of(id).expect("member id in corpus");
            let len = corpus.token_length(i);
            let with = state.realized + len;
            if with >= quota {
                // crossing draw: keep it only when that lands nearer the
                // quota than stopping short, so per-record errors stay
                // within half a sample and cancel in aggregate
                if with - quota <= quota - state.realized {
                    state.cursor += 1;
                    state.realized = with;
                    sampled.push(id);
                }
                break;
            }
            state.cursor += 1;
            state.realized = with;
            sampled.push(id);
        }
    };

    let mut sampled: Vec<u64> = Vec::new();
    for (state, &quota) in states.iter_mut().zip(&quotas) {
        draw(state, quota, &mut sampled);
    }

    // One redistribution round: shortfall moves to records that still have
    // members, proportionally to their weight.
    let shortfall: u64 = states
        .iter()
        .zip(&quotas)
        .map(|(s, &q)| q.saturating_sub(s.realized))
        .sum();
    if shortfall > 0 {
        let open: Vec<usize> = states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.cursor < s.order.len())
            .map(|(i, _)| i)
            .collect();
        if !open.is_empty() {
            let open_weights: Vec<f64> = open.iter().map(|&i| weights[i]).collect();
            let extra = largest_remainder_quotas(shortfall, &open_weights);
            for (&i, &bonus) in open.iter().zip(&extra) {
                quotas[i] += bonus;
                let target = quotas[i];
                draw(&mut states[i], target, &mut sampled);
            }
        }
    }

    let realized_tokens: u64 = states.iter().map(|s| s.realized).sum();
    Ok(SelectionPlan {
        records: records.to_vec(),
        sampled_ids: sampled,
        token_budget,
        realized_tokens,
    })
}

/// Integer quotas summing exactly to `total`, apportioned by weight with
/// largest-remainder rounding (ties toward the lower index).
fn largest_remainder_quotas(total: u64, weights: &[f64]) -> Vec<u64> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut quotas: Vec<u64> = shares.iter().map(|&s| s.floor() as u64).collect();
    let assigned: u64 = quotas.iter().sum();
    let mut leftover = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    // leftover < len except for float slop, so cycling terminates quickly
    while leftover > 0 {
        for &i in &order {
            if leftover == 0 {
                break;
            }
            quotas[i] += 1;
            leftover -= 1;
        }
    }
    quotas
}

/// Plan table as comma-separated text.
pub fn write_plan_csv<W: std::io::Write>(mut out: W, records: &[SubClusterRecord]) -> std::io::Result<()> {
    writeln!(out, "parent_id,sub_id,size,P,L_struct,beta,W")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.parent_id,
            r.sub_id,
            r.member_ids.len(),
            r.semantic_score,
            r.struct_penalty,
            r.cohesion_gate,
            r.weight
        )?;
    }
    Ok(())
}
