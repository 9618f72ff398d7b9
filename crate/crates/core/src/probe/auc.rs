use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 1-based ranks of `scores`, tied values sharing the mean of their ranks.
pub fn average_ranks<T: Scalar>(scores: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores are finite")
    });
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney AUC: probability that a random positive outscores a random
/// negative, ties counting one half.
pub fn auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.iter().filter(|&&l| l == 0).count();
    if positives + negatives != labels.len() {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{positives} positives and {negatives} negatives"
        )));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// `max(auc, 1 - auc)` with the orientation (+1 or -1) that attains it.
pub fn oriented_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<(f64, i8)> {
    let a = auc(scores, labels)?;
    Ok(if a >= 1.0 - a { (a, 1) } else { (1.0 - a, -1) })
}
