//! Scratch: probe the resolution-recovery acceptance configuration.

use geomine_core::resolution::{self, SelectKOptions};
use geomine_core::synth::SynthSpec;

fn main() {
    let mut medians: Vec<(usize, Vec<f64>)> = Vec::new();
    for k in [4usize, 8, 12, 16, 20] {
        medians.push((k, Vec::new()));
    }
    for seed in 0..5u64 {
        let log_means: Vec<f64> = (0..12).map(|c| 3.0 + 0.27 * c as f64).collect();
        let spec = SynthSpec {
            dim: 32,
            k_true: 12,
            concentration: vec![100.0; 12],
            n: 6000,
            outlier_fraction: 0.0,
            length_log_mean: log_means,
            length_log_std: vec![0.3; 12],
            languages_per_component: 1,
            seed,
        };
        let (corpus, _) = geomine_core::synth::generate(&spec).unwrap();
        let opts = SelectKOptions {
            k_range: vec![4, 8, 12, 16, 20],
            probe_fraction: 1.0,
            seed: 100 + seed,
            ..Default::default()
        };
        let profile = resolution::select_k(&corpus, &opts).unwrap();
        print!("seed {seed}: ");
        for e in &profile.per_k {
            print!("J({})={:+.3} ", e.k, e.j_final);
            medians.iter_mut().find(|(k, _)| *k == e.k).unwrap().1.push(e.j_final);
        }
        println!("k* = {}", profile.k_star);
    }
    println!("\nmedians:");
    for (k, mut vals) in medians {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("  K={k}: median J = {:+.4}  (all: {:?})", vals[vals.len() / 2], vals);
    }
}
