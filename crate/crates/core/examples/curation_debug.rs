//! Scratch: dissect one end-to-end curation trial.

use std::collections::HashSet;

use geomine_core::miner::SubClusterRecord;
use geomine_core::pipeline::{self, AblationMode, PipelineConfig, ScorerConfig};
use geomine_core::scorer::{ProbeRating, ProbeRequest, Scorer, ScorerError};
use geomine_core::synth::{self, SynthSpec};
use geomine_core::transport::{self, EmpiricalMeasure};

struct TruthScorer {
    outliers: HashSet<u64>,
}
impl Scorer for TruthScorer {
    fn rate(&self, probe: &ProbeRequest) -> Result<ProbeRating, ScorerError> {
        Ok(if self.outliers.contains(&probe.id) {
            ProbeRating::uniform(2)
        } else {
            ProbeRating::uniform(5)
        })
    }
}

fn main() {
    let trial = 16u64;
    let spec = SynthSpec::uniform(32, 12, 100.0, 4000, 0.15, 4.0, 0.4, 1, trial);
    let (corpus, truth) = synth::generate(&spec).unwrap();
    let outliers: HashSet<u64> = truth.iter().filter(|t| t.is_outlier).map(|t| t.id).collect();
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    synth::export(&store, &corpus, &truth).unwrap();
    let token_budget = corpus.total_tokens() / 2;
    println!("total tokens {}, budget {token_budget}", corpus.total_tokens());

    let config = PipelineConfig {
        store,
        out_dir: dir.path().join("out"),
        seed: 5000 + trial,
        token_budget,
        k_min: 8,
        k_max: 16,
        k_step: 4,
        probe_fraction: 1.0,
        strides: vec![2, 4, 6],
        hop_weights: vec![0.5, 0.3, 0.2],
        t_scale: 20.0,
        lambda_shrink: 1.0,
        min_members: 3,
        stage1_iters: 10,
        restarts: 4,
        lambda: 0.5,
        epsilon: 0.01,
        probe_size: 8,
        budget_temperature: 1.0,
        aggregation: geomine_core::miner::Aggregation::Mean,
        scorer_parallelism: 4,
        ablation: AblationMode::Full,
        k_total: None,
        scorer: ScorerConfig::default(),
        texts: None,
        evaluate: false,
        evaluate_max_points: 200,
    };
    let scorer = TruthScorer { outliers: outliers.clone() };
    let artifacts = pipeline::run(&config, Some(&scorer)).unwrap();
    println!("K* = {:?}, clusters = {}", artifacts.profile.as_ref().map(|p| p.k_star), artifacts.model.k());
    println!("scores: {:?}", artifacts.scores.s.iter().map(|s| format!("{s:+.2}")).collect::<Vec<_>>());
    println!("budget r: {:?}", artifacts.budget.r.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>());

    // per macro cluster: outlier fraction
    for (k, members) in artifacts.model.members.iter().enumerate() {
        let out = members.iter().filter(|id| outliers.contains(id)).count();
        println!(
            "  macro {k}: size {} outliers {} ({:.1}%)",
            members.len(),
            out,
            100.0 * out as f64 / members.len() as f64
        );
    }

    // sub-cluster records: aggregate stats over outlier-heavy vs clean subs
    let frac_outlier = |r: &SubClusterRecord| {
        r.member_ids.iter().filter(|id| outliers.contains(id)).count() as f64
            / r.member_ids.len() as f64
    };
    let mut heavy_w = 0.0;
    let mut heavy_n = 0;
    let mut clean_w = 0.0;
    let mut clean_n = 0;
    for rec in &artifacts.records {
        if frac_outlier(rec) > 0.5 {
            heavy_w += rec.weight;
            heavy_n += 1;
        } else {
            clean_w += rec.weight;
            clean_n += 1;
        }
    }
    println!("outlier-heavy subs: {heavy_n} carrying total W {heavy_w:.4}");
    println!("clean subs: {clean_n} carrying total W {clean_w:.4}");
    let sample_heavy: Vec<&SubClusterRecord> = artifacts
        .records
        .iter()
        .filter(|r| frac_outlier(r) > 0.5)
        .take(5)
        .collect();
    for r in sample_heavy {
        println!(
            "  heavy sub ({}, {}): size {} P {:.1} L {:.2} beta {:.4} W {:.5}",
            r.parent_id,
            r.sub_id,
            r.member_ids.len(),
            r.semantic_score,
            r.struct_penalty,
            r.cohesion_gate,
            r.weight
        );
    }
    let mut top: Vec<&SubClusterRecord> = artifacts.records.iter().collect();
    top.sort_by(|a, b| b.weight.partial_cmp(&a.weight).unwrap());
    for r in top.iter().take(5) {
        println!(
            "  top sub ({}, {}): size {} P {:.1} L {:.2} beta {:.4} W {:.5} out% {:.0}",
            r.parent_id,
            r.sub_id,
            r.member_ids.len(),
            r.semantic_score,
            r.struct_penalty,
            r.cohesion_gate,
            r.weight,
            100.0 * frac_outlier(r)
        );
    }

    // selection composition
    let selected = &artifacts.plan.sampled_ids;
    let sel_out = selected.iter().filter(|id| outliers.contains(id)).count();
    println!(
        "selected {} ids, {} outliers ({:.1}%), realized {} / {}",
        selected.len(),
        sel_out,
        100.0 * sel_out as f64 / selected.len() as f64,
        artifacts.plan.realized_tokens,
        artifacts.plan.token_budget
    );
    // breakdown: which records contributed the selected outliers
    let sel_set: HashSet<u64> = selected.iter().copied().collect();
    let mut from_heavy = 0u64;
    let mut from_clean = 0u64;
    for rec in &artifacts.records {
        let heavy = frac_outlier(rec) > 0.5;
        for id in &rec.member_ids {
            if sel_set.contains(id) && outliers.contains(id) {
                let tokens = corpus.token_length(corpus.index_of(*id).unwrap());
                if heavy {
                    from_heavy += tokens;
                } else {
                    from_clean += tokens;
                }
            }
        }
    }
    println!("selected outlier tokens: {from_heavy} from outlier-heavy subs, {from_clean} embedded in clean subs");

    // component coverage of the selection
    let mut comp_counts = vec![0usize; 12];
    for id in selected {
        if let Some(t) = truth.iter().find(|t| t.id == *id) {
            if let Some(c) = t.component {
                comp_counts[c] += 1;
            }
        }
    }
    println!("component counts in selection: {comp_counts:?}");

    // w2 comparison
    let clean_ids: Vec<u64> = truth.iter().filter(|t| !t.is_outlier).map(|t| t.id).collect();
    let cap = 200;
    let measure = |ids: &[u64], s: u64| {
        let mut rows: Vec<usize> = ids.iter().filter_map(|&id| corpus.index_of(id)).collect();
        rows.sort_unstable();
        if rows.len() > cap {
            let mut rng = geomine_core::seed::rng(s, "sub");
            let keep = rand::seq::index::sample(&mut rng, rows.len(), cap);
            let mut kept: Vec<usize> = keep.into_iter().map(|p| rows[p]).collect();
            kept.sort_unstable();
            rows = kept;
        }
        EmpiricalMeasure::from_corpus(&corpus, &rows).unwrap()
    };
    let reference = measure(&clean_ids, 40);
    let selected_m = measure(selected, 41);
    let all_ids: Vec<u64> = (0..corpus.len()).map(|i| corpus.id(i)).collect();
    let random_like = measure(&all_ids, 42); // crude stand-in for a random subset
    println!(
        "w2(sel) = {:.4}, w2(corpus-sample incl outliers) = {:.4}",
        transport::w2_exact(&reference, &selected_m).unwrap(),
        transport::w2_exact(&reference, &random_like).unwrap()
    );
}
