use crate::error::{Error, Result};

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Metric(format!("{what} scores are empty")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric(format!("{what} scores contain NaN")));
    }
    Ok(())
}

/// Probability that a random known score exceeds a random unknown score,
/// counting ties as one half (Mann-Whitney U with mid-ranks).
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    check_scores(known, "known")?;
    check_scores(unknown, "unknown")?;
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, true))
        .chain(unknown.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (nk, nu) = (known.len() as f64, unknown.len() as f64);
    Ok((rank_sum - nk * (nk + 1.0) / 2.0) / (nk * nu))
}

/// Area under correct-classification rate versus false-positive rate.
///
/// `known` holds `(confidence, correctly classified)` pairs. Thresholds are
/// swept downward over the distinct observed scores; each rise in FPR is
/// multiplied by the CCR at the threshold where it occurs.
pub fn oscr(known: &[(f64, bool)], unknown: &[f64]) -> Result<f64> {
    let known_scores: Vec<f64> = known.iter().map(|k| k.0).collect();
    check_scores(&known_scores, "known")?;
    check_scores(unknown, "unknown")?;
    // (score, is_unknown, correct)
    let mut all: Vec<(f64, bool, bool)> = known
        .iter()
        .map(|&(s, c)| (s, false, c))
        .chain(unknown.iter().map(|&s| (s, true, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nk, nu) = (known.len() as f64, unknown.len() as f64);
    let (mut correct, mut false_pos) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut new_fp = 0;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                new_fp += 1;
            } else if all[j].2 {
                correct += 1;
            }
            j += 1;
        }
        false_pos += new_fp;
        area += new_fp as f64 / nu * (correct as f64 / nk);
        i = j;
    }
    debug_assert_eq!(false_pos, unknown.len());
    Ok(area)
}
