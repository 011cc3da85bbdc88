//! Tie-aware AUROC via the Mann-Whitney rank statistic.

use crate::error::{OodError, Result};

/// Twice the Mann-Whitney U of `ood` over `in_`, as an exact integer.
/// Ranks are doubled so tied groups get integral average ranks.
fn doubled_u(in_scores: &[f64], ood_scores: &[f64]) -> u128 {
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // ranks start+1..=end, doubled average = start + 1 + end
        let n_ood = all[start..end].iter().filter(|x| x.1).count() as u128;
        rank_sum2 += n_ood * (start + 1 + end) as u128;
        start = end;
    }
    let m = ood_scores.len() as u128;
    rank_sum2 - m * (m + 1)
}

/// Probability that a random OOD score exceeds a random in-distribution
/// score, ties counted one half. OOD is the positive class.
pub fn auroc(in_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if in_scores.is_empty() || ood_scores.is_empty() {
        return Err(OodError::Empty("AUROC needs non-empty score vectors".into()));
    }
    if let Some(i) = in_scores.iter().chain(ood_scores).position(|s| !s.is_finite()) {
        return Err(OodError::Numerical(format!("non-finite score at position {i}")));
    }
    let u2 = doubled_u(in_scores, ood_scores);
    let pairs2 = 2 * in_scores.len() as u128 * ood_scores.len() as u128;
    // Divide on the smaller side and complement, so that swapping the two
    // sets gives results that sum to exactly 1.
    Ok(if 2 * u2 <= pairs2 {
        u2 as f64 / pairs2 as f64
    } else {
        1.0 - (pairs2 - u2) as f64 / pairs2 as f64
    })
}
