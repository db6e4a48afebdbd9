//! Global mixing budget from geometric scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GeometricScores;

/// Per-cluster sampling probabilities, strictly positive and summing to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetVector {
    pub r: Vec<f64>,
}

/// Softmax of the scores with max-subtraction: `r_k = exp(s_k) / sum exp(s_j)`.
pub fn allocate(scores: &GeometricScores) -> Result<BudgetVector> {
    allocate_with_temperature(scores, 1.0)
}

/// Softmax with a temperature hook; 1.0 is the canonical pipeline value.
pub fn allocate_with_temperature(scores: &GeometricScores, temperature: f64) -> Result<BudgetVector> {
    if scores.s.is_empty() {
        return Err(Error::EmptyScores);
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "budget temperature must be positive, got {temperature}"
        )));
    }
    let max = scores.s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut r: Vec<f64> = scores
        .s
        .iter()
        .map(|&s| ((s - max) / temperature).exp())
        .collect();
    let total: f64 = r.iter().sum();
    for v in r.iter_mut() {
        *v /= total;
    }
    Ok(BudgetVector { r })
}

/// Budget table as comma-separated text.
pub fn write_budget_csv<W: std::io::Write>(
    mut out: W,
    scores: &GeometricScores,
    budget: &BudgetVector,
) -> std::io::Result<()> {
    writeln!(out, "cluster_id,score,r")?;
    for (i, (s, r)) in scores.s.iter().zip(&budget.r).enumerate() {
        writeln!(out, "{i},{s},{r}")?;
    }
    Ok(())
}
