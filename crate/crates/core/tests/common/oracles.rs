//! Brute-force reference implementations shared by several suites.

/// AP by enumerating every distinct threshold and recounting from scratch.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let npos = labels.iter().filter(|&&l| l).count() as u64;
    let mut weighted = 0.0;
    let mut prev_tp = 0u64;
    for &t in &thresholds {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        weighted += (tp - prev_tp) as f64 * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    (weighted / npos as f64).min(1.0)
}

/// Mann-Whitney over every positive/negative pair, ties counted as one half.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut npos, mut nneg) = (0u128, 0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            npos += 1;
        } else {
            nneg += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * npos * nneg) as f64
}
