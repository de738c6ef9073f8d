//! Brute-force metric oracles and random dump fixtures shared by the metric
//! and acceptance tests.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;

use maosr::scoring::{AttributePrediction, PredictionRecord};
use maosr::splits::{AttributeDomain, GroupTag};

/// Fraction of (known, unknown) pairs ordered correctly, ties counting half.
pub fn pairwise_auroc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &k in known {
        for &u in unknown {
            wins += if k > u {
                1.0
            } else if k == u {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (known.len() * unknown.len()) as f64
}

/// Evaluates CCR and FPR at every threshold between consecutive sorted
/// scores plus one above the maximum and one below the minimum, then sums
/// FPR increments times the CCR reached at the same threshold.
pub fn sweep_oscr(known: &[(f64, bool)], unknown: &[f64]) -> f64 {
    let mut scores: Vec<f64> = known.iter().map(|k| k.0).chain(unknown.iter().copied()).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut thresholds = vec![f64::INFINITY];
    for w in scores.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(f64::NEG_INFINITY);
    let rates = |t: f64| {
        let ccr = known.iter().filter(|k| k.0 >= t && k.1).count() as f64 / known.len() as f64;
        let fpr = unknown.iter().filter(|&&u| u >= t).count() as f64 / unknown.len() as f64;
        (fpr, ccr)
    };
    let mut area = 0.0;
    let mut prev_fpr = 0.0;
    for t in thresholds {
        let (fpr, ccr) = rates(t);
        area += (fpr - prev_fpr) * ccr;
        prev_fpr = fpr;
    }
    area
}

/// Micro-F1 over the known labels plus "unknown" for one attribute at
/// threshold `t`, from true-positive, false-positive and false-negative
/// counts per label.
pub fn micro_f1(samples: &[(String, String, f64)], domain: &AttributeDomain, t: f64) -> f64 {
    let unknown = "\u{0}unknown".to_string();
    let mut labels: Vec<&String> = domain.known_values.iter().collect();
    labels.push(&unknown);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for l in labels {
        for (truth, pred, conf) in samples {
            let truth = if domain.is_known(truth) { truth } else { &unknown };
            let pred = if *conf < t { &unknown } else { pred };
            match (truth == l, pred == l) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Best (threshold, micro-F1) over midpoints and the two sentinels, largest
/// threshold on ties.
pub fn brute_force_threshold(samples: &[(String, String, f64)], domain: &AttributeDomain) -> (f64, f64) {
    let mut confs: Vec<f64> = samples.iter().map(|s| s.2).collect();
    confs.sort_by(f64::total_cmp);
    confs.dedup();
    let mut candidates = vec![confs[0] - 1.0, confs[confs.len() - 1] + 1.0];
    candidates.extend(confs.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    let mut best = (f64::NEG_INFINITY, -1.0);
    for t in candidates {
        let f = micro_f1(samples, domain, t);
        if f > best.1 || (f == best.1 && t > best.0) {
            best = (t, f);
        }
    }
    best
}

pub fn domains() -> Vec<AttributeDomain> {
    vec![
        AttributeDomain::new("digit", ["0", "1", "2"], ["5", "6", "7"]).unwrap(),
        AttributeDomain::new("color", ["red", "green"], ["blue", "pink"]).unwrap(),
    ]
}

/// Random dump over `domains()`: every group appears, labels agree with the
/// group, predictions are random known values and confidences are drawn
/// from a coarse grid so ties occur.
pub fn random_dump(rng: &mut impl Rng, n: usize) -> Vec<PredictionRecord> {
    let d = domains();
    let groups = [
        GroupTag::KnownSeen,
        GroupTag::KnownUnseenCombo,
        GroupTag::OodAttr(0),
        GroupTag::OodAttr(1),
        GroupTag::OodAll,
    ];
    (0..n)
        .map(|i| {
            let group = if i < groups.len() { groups[i] } else { *groups.choose(rng).unwrap() };
            let unknown = |m: usize| match group {
                GroupTag::OodAttr(a) => a == m,
                GroupTag::OodAll => true,
                _ => false,
            };
            let attributes = d
                .iter()
                .enumerate()
                .map(|(m, dom)| {
                    let pool = if unknown(m) { &dom.unknown_values } else { &dom.known_values };
                    AttributePrediction {
                        true_label: pool.choose(rng).unwrap().clone(),
                        predicted_label: dom.known_values.choose(rng).unwrap().clone(),
                        confidence: rng.random_range(0..40) as f64 / 40.0,
                        logits: Vec::new(),
                    }
                })
                .collect();
            PredictionRecord {
                sample_id: format!("s{i}"),
                group,
                attributes,
            }
        })
        .collect()
}

/// Column index in (Known, OOD_1, .., OOD_M, OOD_all) for a group tag.
pub fn group_row(g: GroupTag, m: usize) -> usize {
    match g {
        GroupTag::KnownSeen | GroupTag::KnownUnseenCombo => 0,
        GroupTag::OodAttr(a) => a + 1,
        GroupTag::OodAll => m + 1,
    }
}
